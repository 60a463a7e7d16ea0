#pragma once

#include <string>
#include <vector>

#include "ecgage/ingest.hpp"

namespace ecgage {

struct Segment {
    std::string subject_id;
    std::size_t segment_id = 0;
    double start_s = 0.0;
    double end_s = 0.0;
    bool excluded = false;  // overlaps masked samples
};

struct SegmentSpec {
    double window_s = 5.0;
    double stride_s = 1.0;
};

/// floor((duration - window) / stride) + 1, for duration >= window.
std::size_t segment_count(double duration_s, double window_s, double stride_s);

/// Windows starting at 0, stride, 2*stride, ... while start + window <= duration.
std::vector<Segment> make_segments(double duration_s, const SegmentSpec& spec, const std::string& subject_id = {});

/// Same, over a recording; segments touching any masked sample are flagged.
std::vector<Segment> make_segments(const EcgRecording& rec, const SegmentSpec& spec);

/// Sample range [begin, end) covered by a segment at fs.
std::pair<std::size_t, std::size_t> segment_samples(const Segment& s, double fs_hz);

std::string format_segments(const std::vector<Segment>& segments);

}  // namespace ecgage
