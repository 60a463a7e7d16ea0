#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecgage/delineate.hpp"
#include "ecgage/synth.hpp"
#include "oracles.hpp"

using namespace ecgage;

namespace {

SynthOutput synth(double seconds, std::optional<double> snr = std::nullopt, std::uint64_t seed = 1) {
    SynthConfig c;
    c.duration_s = seconds;
    c.noise_snr_db = snr;
    c.seed = seed;
    return generate(c);
}

std::vector<std::size_t> true_peaks(const SynthOutput& s) {
    std::vector<std::size_t> out;
    for (const auto& c : s.annotation.cycles) out.push_back(c.r_peak());
    return out;
}

const FiducialSet* nearest_truth(const SynthOutput& s, std::size_t r, long tol) {
    for (const auto& c : s.annotation.cycles)
        if (std::labs(static_cast<long>(c.r_peak()) - static_cast<long>(r)) <= tol) return &c;
    return nullptr;
}

}  // namespace

TEST_CASE("fiducial names round-trip") {
    for (std::size_t i = 0; i < kFiducialCount; ++i) {
        auto f = static_cast<Fiducial>(i);
        CHECK(fiducial_from_name(fiducial_name(f)) == f);
    }
    CHECK_FALSE(fiducial_from_name("u_wave").has_value());
}

TEST_CASE("ordering predicate") {
    FiducialSet f;
    f[Fiducial::r_peak] = 10;
    CHECK(is_ordered(f));
    f[Fiducial::qrs_onset] = 8;
    f[Fiducial::t_peak] = 30;
    CHECK(is_ordered(f));
    f[Fiducial::p_peak] = 5;
    CHECK(is_ordered(f));
    f[Fiducial::p_offset] = 5;
    CHECK_FALSE(is_ordered(f));
}

TEST_CASE("wavelet detail of a step peaks at the step") {
    std::vector<double> x(128, 0.0);
    for (std::size_t i = 64; i < x.size(); ++i) x[i] = 1.0;
    auto d = wavelet_details(x, 4);
    REQUIRE(d.size() == 4);
    for (int k = 1; k <= 4; ++k) {
        const auto& w = d[static_cast<std::size_t>(k - 1)];
        std::size_t arg = 0;
        for (std::size_t i = 20; i + 20 < w.size(); ++i)
            if (std::fabs(w[i]) > std::fabs(w[arg])) arg = i;
        // detail[k-1][n] sits at n + (2^k - 1)/2
        const double centre = static_cast<double>(arg) + (std::pow(2.0, k) - 1) / 2.0;
        CHECK(std::fabs(centre - 63.5) <= std::pow(2.0, k - 1));
    }
}

TEST_CASE("R peaks on noiseless 60 bpm match the annotation") {
    auto s = synth(60);
    auto clean = preprocess(s.recording, {});
    auto peaks = detect_r_peaks(clean);
    auto truth = true_peaks(s);
    CHECK(peaks.size() >= 59);
    CHECK(peaks.size() <= 61);
    auto m = oracle::match_peaks(peaks, truth, 1);
    CHECK(m.tp == truth.size());
    CHECK(m.tp == peaks.size());
    CHECK(m.max_err <= 1);

    // RR series within one sample of the generator's schedule
    for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
        const double rr = static_cast<double>(peaks[i + 1] - peaks[i]) * 10.0;
        CHECK(std::fabs(rr - s.annotation.rr_ms[i]) <= 10.0 + 1e-9);
    }
}

TEST_CASE("R peaks follow an explicit RR schedule") {
    SynthConfig c;
    c.duration_s = 40;
    for (int i = 0; i < 60; ++i) c.rr_schedule_ms.push_back(i % 2 ? 700.0 : 950.0);
    auto s = generate(c);
    auto peaks = detect_r_peaks(preprocess(s.recording, {}));
    auto m = oracle::match_peaks(peaks, true_peaks(s), 1);
    CHECK(m.sensitivity() == 1.0);
    CHECK(m.ppv() == 1.0);
}

TEST_CASE("zero signal has no peaks") {
    std::vector<double> z(3000, 0.0);
    CHECK_THROWS_WITH_AS(detect_r_peaks(z, 100.0), "fewer than 2 peaks found", NumericError);
}

TEST_CASE("noisy recording at 20 dB") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto s = synth(180, 20.0, seed);
        auto peaks = detect_r_peaks(preprocess(s.recording, {}));
        auto m = oracle::match_peaks(peaks, true_peaks(s), 5);
        CHECK(m.sensitivity() >= 0.99);
        CHECK(m.ppv() >= 0.99);
    }
}

TEST_CASE("delineated fiducials sit within 20 ms of the annotation") {
    auto s = synth(60);
    auto clean = preprocess(s.recording, {});
    auto peaks = detect_r_peaks(clean);
    auto cycles = delineate_cycles(clean, peaks);
    CHECK(cycles.size() >= 55);
    std::size_t checked = 0;
    for (const auto& c : cycles) {
        CHECK(is_ordered(c));
        const auto* t = nearest_truth(s, c.r_peak(), 1);
        REQUIRE(t != nullptr);
        for (std::size_t f = 0; f < kFiducialCount; ++f) {
            if (!c.at[f]) continue;
            CHECK(c.at[f].has_value());
            REQUIRE(t->at[f].has_value());
            const long err = static_cast<long>(*c.at[f]) - static_cast<long>(*t->at[f]);
            CHECK_MESSAGE(std::labs(err) <= 2, fiducial_name(static_cast<Fiducial>(f)) << " off by " << err);
            ++checked;
        }
    }
    CHECK(checked >= cycles.size() * 8);
    for (std::size_t i = 0; i + 1 < cycles.size(); ++i) CHECK(cycles[i + 1].r_peak() >= cycles[i].r_peak() + 25);
}

TEST_CASE("P wave ablation leaves QRS and T") {
    SynthConfig c;
    c.duration_s = 30;
    c.wave(Wave::P).amplitude = 0.0;
    auto s = generate(c);
    auto clean = preprocess(s.recording, {});
    auto cycles = delineate_cycles(clean, detect_r_peaks(clean));
    REQUIRE(!cycles.empty());
    for (const auto& f : cycles) {
        CHECK_FALSE(f[Fiducial::p_peak].has_value());
        CHECK_FALSE(f[Fiducial::p_onset].has_value());
        CHECK(f[Fiducial::qrs_onset].has_value());
        CHECK(f[Fiducial::t_peak].has_value());
        CHECK(f[Fiducial::t_offset].has_value());
    }
}

TEST_CASE("delineation is shift equivariant") {
    auto s = synth(40);
    auto x = preprocess(s.recording, {}).signal.samples;
    auto peaks = detect_r_peaks(x, 100.0);
    auto base = delineate_cycles(x, 100.0, peaks);
    for (std::size_t k : {7u, 23u, 41u}) {
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[(i + k) % x.size()] = x[i];
        auto shifted = delineate_cycles(y, 100.0, detect_r_peaks(y, 100.0));
        std::size_t compared = 0;
        for (const auto& c : base) {
            if (c.r_peak() < 300 || c.r_peak() + 300 + k > x.size()) continue;
            auto it = std::find_if(shifted.begin(), shifted.end(), [&](const auto& o) { return o.r_peak() == c.r_peak() + k; });
            REQUIRE(it != shifted.end());
            for (std::size_t f = 0; f < kFiducialCount; ++f) {
                REQUIRE(c.at[f].has_value() == it->at[f].has_value());
                if (c.at[f]) CHECK(*it->at[f] == *c.at[f] + k);
            }
            ++compared;
        }
        CHECK(compared > 20);
    }
}

TEST_CASE("delineation is amplitude-scale invariant") {
    auto s = synth(40);
    auto x = preprocess(s.recording, {}).signal.samples;
    auto base = delineate_cycles(x, 100.0, detect_r_peaks(x, 100.0));
    for (double c : {0.25, 2.0, 3.7, 1000.0}) {
        std::vector<double> y(x);
        for (auto& v : y) v *= c;
        auto peaks = detect_r_peaks(y, 100.0);
        auto scaled = delineate_cycles(y, 100.0, peaks);
        REQUIRE(scaled.size() == base.size());
        for (std::size_t i = 0; i < base.size(); ++i) CHECK(scaled[i].at == base[i].at);
    }
}

TEST_CASE("fiducial CSV round-trip") {
    auto s = synth(20);
    auto clean = preprocess(s.recording, {});
    auto cycles = delineate_cycles(clean, detect_r_peaks(clean));
    auto back = parse_fiducials(format_fiducials(cycles));
    REQUIRE(back.size() == cycles.size());
    for (std::size_t i = 0; i < cycles.size(); ++i) CHECK(back[i].at == cycles[i].at);
    CHECK_THROWS_AS(parse_fiducials("cycle,fiducial,sample\n0,r_peak\n"), DataError);
    CHECK_THROWS_AS(parse_fiducials("cycle,fiducial,sample\n0,u_wave,3\n"), DataError);
}

TEST_CASE("delineation needs two peaks") {
    std::vector<double> x(1000, 0.0);
    CHECK_THROWS_AS(delineate_cycles(x, 100.0, {500}), NumericError);
}
