#include "ecgage/segment.hpp"

#include <cmath>
#include <sstream>

namespace ecgage {

namespace {
// Absorbs representation error in duration/stride ratios such as 0.3/0.1.
constexpr double kSlack = 1e-9;
}

std::size_t segment_count(double duration_s, double window_s, double stride_s) {
    if (!(window_s > 0) || !(stride_s > 0)) throw UsageError("segment window and stride must be positive");
    if (duration_s + kSlack * window_s < window_s) throw DataError("recording shorter than the segment window");
    double q = (duration_s - window_s) / stride_s;
    return static_cast<std::size_t>(std::floor(q + kSlack)) + 1;
}

std::vector<Segment> make_segments(double duration_s, const SegmentSpec& spec, const std::string& subject_id) {
    const std::size_t count = segment_count(duration_s, spec.window_s, spec.stride_s);
    std::vector<Segment> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        Segment s;
        s.subject_id = subject_id;
        s.segment_id = k;
        s.start_s = static_cast<double>(k) * spec.stride_s;
        s.end_s = s.start_s + spec.window_s;
        out.push_back(s);
    }
    return out;
}

std::pair<std::size_t, std::size_t> segment_samples(const Segment& s, double fs_hz) {
    auto b = static_cast<std::size_t>(std::llround(s.start_s * fs_hz));
    auto e = static_cast<std::size_t>(std::llround(s.end_s * fs_hz));
    return {b, e};
}

std::vector<Segment> make_segments(const EcgRecording& rec, const SegmentSpec& spec) {
    auto segs = make_segments(rec.duration_s(), spec, rec.subject_id);
    for (auto& s : segs) {
        auto [b, e] = segment_samples(s, rec.sampling_rate_hz);
        e = std::min(e, rec.size());
        for (std::size_t i = b; i < e; ++i) {
            if (!rec.valid[i]) {
                s.excluded = true;
                break;
            }
        }
    }
    return segs;
}

std::string format_segments(const std::vector<Segment>& segments) {
    std::ostringstream os;
    os << "subject_id,segment_id,start_s,end_s,excluded\n";
    for (const auto& s : segments)
        os << s.subject_id << ',' << s.segment_id << ',' << format_double(s.start_s) << ',' << format_double(s.end_s)
           << ',' << (s.excluded ? 1 : 0) << '\n';
    return os.str();
}

}  // namespace ecgage
