#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ecgage/segment.hpp"
#include "oracles.hpp"

using namespace ecgage;

TEST_CASE("reference counts") {
    CHECK(segment_count(180, 5, 1) == 176);
    CHECK(segment_count(5, 5, 1) == 1);
    CHECK(segment_count(0.3, 0.1, 0.1) == 3);
    CHECK(segment_count(10, 5, 2.5) == 3);
    CHECK_THROWS_WITH_AS(segment_count(4.9, 5, 1), "recording shorter than the segment window", DataError);
    CHECK_THROWS_AS(segment_count(10, 0, 1), UsageError);
    CHECK_THROWS_AS(segment_count(10, 5, -1), UsageError);
}

TEST_CASE("count formula agrees with brute-force enumeration") {
    std::mt19937_64 gen(77);
    std::uniform_int_distribution<int> tenth(1, 100);
    std::uniform_real_distribution<double> u(0.01, 50.0);
    for (int t = 0; t < 1000; ++t) {
        double window, stride, duration;
        if (t % 2 == 0) {
            // decimal inputs that often land exactly on a boundary
            window = tenth(gen) / 10.0;
            stride = tenth(gen) / 10.0;
            duration = window + tenth(gen) * stride / static_cast<double>(1 + t % 3);
        } else {
            window = u(gen);
            stride = u(gen) / 5.0;
            duration = window + u(gen) * 4.0;
        }
        CHECK_MESSAGE(segment_count(duration, window, stride) == oracle::segment_count(duration, window, stride),
                      duration << " " << window << " " << stride);
    }
}

TEST_CASE("segment layout") {
    auto segs = make_segments(180.0, {5.0, 1.0}, "s");
    REQUIRE(segs.size() == 176);
    for (std::size_t i = 0; i < segs.size(); ++i) {
        CHECK(segs[i].segment_id == i);
        CHECK(segs[i].end_s <= 180.0);
        CHECK(segs[i].end_s - segs[i].start_s == doctest::Approx(5.0));
        if (i) CHECK(segs[i].start_s - segs[i - 1].start_s == doctest::Approx(1.0));
    }
    auto [b, e] = segment_samples(segs[3], 100.0);
    CHECK(b == 300);
    CHECK(e == 800);
}

TEST_CASE("interior samples are covered by overlapping windows") {
    for (auto spec : {SegmentSpec{5, 1}, SegmentSpec{4, 1.5}, SegmentSpec{2, 2}}) {
        const double dur = 60.0;
        auto segs = make_segments(dur, spec);
        const double expect = std::min(std::floor(spec.window_s / spec.stride_s), static_cast<double>(segs.size()));
        // past the last start the tail thins out
        const double stop = segs.back().start_s + spec.stride_s;
        for (int k = 0; spec.window_s + k * 0.01 < stop; ++k) {
            const double t = spec.window_s + k * 0.01;
            std::size_t n = 0;
            for (const auto& s : segs) n += (t >= s.start_s && t < s.end_s);
            CHECK(static_cast<double>(n) >= expect);
        }
    }
}

TEST_CASE("segments touching masked samples are excluded") {
    EcgRecording rec;
    rec.subject_id = "m";
    rec.sampling_rate_hz = 100;
    rec.samples.assign(2000, 0.0);
    rec.valid.assign(2000, true);
    rec.valid[1050] = false;  // t = 10.5 s
    auto segs = make_segments(rec, {5, 1});
    CHECK(segs.size() == 16);
    for (const auto& s : segs) CHECK(s.excluded == (s.start_s <= 10.5 && s.end_s > 10.5));
    auto csv = format_segments(segs);
    CHECK(csv.rfind("subject_id,segment_id,start_s,end_s,excluded\n", 0) == 0);
    CHECK(csv.find("m,7,7,12,1\n") != std::string::npos);
}
