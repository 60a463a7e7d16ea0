#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecgage/segment.hpp"
#include "ecgage/synth.hpp"
#include "oracles.hpp"

using namespace ecgage;

TEST_CASE("constant-rate generator") {
    SynthConfig c;
    auto s = generate(c);
    CHECK(s.recording.size() == 6000);
    CHECK(s.annotation.cycles.size() == 60);
    for (double rr : s.annotation.rr_ms) CHECK(rr == doctest::Approx(1000.0));
    for (const auto& f : s.annotation.cycles) CHECK(is_ordered(f));
    for (std::size_t i = 0; i < s.ecg.size(); ++i) CHECK(s.recording.samples[i] == s.ecg[i]);
}

TEST_CASE("waveform is the sum of Gaussians at the annotated times") {
    SynthConfig c;
    c.duration_s = 10;
    c.rr_jitter_ms = 40;
    auto s = generate(c);
    // independent reconstruction
    for (std::size_t i = 0; i < s.ecg.size(); i += 7) {
        const double t = static_cast<double>(i) * 10.0;
        double v = 0;
        for (double r : s.annotation.r_times_ms)
            for (const auto& w : c.waves) {
                const double u = (t - r - w.center_ms) / w.width_ms;
                if (std::fabs(t - r) <= 1500.0) v += w.amplitude * std::exp(-0.5 * u * u);
            }
        CHECK(s.ecg[i] == doctest::Approx(v).epsilon(1e-12).scale(1e-12));
    }
    for (const auto& f : s.annotation.cycles) {
        const double r = s.annotation.r_times_ms[f.beat];
        CHECK(static_cast<double>(f.r_peak()) == doctest::Approx(std::round(r / 10.0)));
        CHECK(static_cast<double>(*f[Fiducial::t_offset]) ==
              doctest::Approx(std::round((r + 220.0 + 2.5 * 40.0) / 10.0)));
    }
}

TEST_CASE("P amplitude zero removes P annotations") {
    SynthConfig c;
    c.wave(Wave::P).amplitude = 0.0;
    auto s = generate(c);
    for (const auto& f : s.annotation.cycles) {
        CHECK_FALSE(f[Fiducial::p_onset]);
        CHECK_FALSE(f[Fiducial::p_peak]);
        CHECK_FALSE(f[Fiducial::p_offset]);
        CHECK(f[Fiducial::qrs_onset]);
    }
}

TEST_CASE("noise hits the requested SNR") {
    for (double snr : {10.0, 20.0, 30.0}) {
        SynthConfig c;
        c.duration_s = 180;
        c.noise_snr_db = snr;
        auto s = generate(c);
        double ps = 0, pn = 0;
        for (std::size_t i = 0; i < s.ecg.size(); ++i) {
            ps += s.ecg[i] * s.ecg[i];
            const double e = s.recording.samples[i] - s.ecg[i];
            pn += e * e;
        }
        CHECK(std::fabs(10.0 * std::log10(ps / pn) - snr) <= 0.5);
    }
}

TEST_CASE("drift is a sinusoid of the requested amplitude") {
    SynthConfig c;
    c.drift = DriftSpec{0.3, 0.25};
    auto s = generate(c);
    CHECK(*std::max_element(s.drift.begin(), s.drift.end()) == doctest::Approx(0.3).epsilon(1e-3));
    for (std::size_t i = 0; i < s.ecg.size(); ++i) CHECK(s.recording.samples[i] == doctest::Approx(s.ecg[i] + s.drift[i]));
}

TEST_CASE("seeds") {
    SynthConfig c;
    c.noise_snr_db = 20;
    c.rr_jitter_ms = 30;
    auto a = generate(c), b = generate(c);
    CHECK(a.recording.samples == b.recording.samples);
    c.seed = 2;
    auto d = generate(c);
    CHECK(a.recording.samples != d.recording.samples);
}

TEST_CASE("configuration errors") {
    SynthConfig c;
    c.mean_hr_bpm = 200;
    CHECK_THROWS_WITH_AS(generate(c), doctest::Contains("shorter than the beat span"), DataError);
    SynthConfig d;
    d.wave(Wave::T).center_ms = -400;
    CHECK_THROWS_AS(generate(d), DataError);
    SynthConfig e;
    e.wave(Wave::R).width_ms = 0;
    CHECK_THROWS_AS(generate(e), DataError);
    CohortConfig k;
    k.n_subjects = 1;
    CHECK_THROWS_WITH_AS(make_cohort(k), "make_cohort: need at least 2 subjects", DataError);
}

TEST_CASE("template QT can be set") {
    SynthConfig c;
    set_template_qt(c, 400.0);
    CHECK(template_qt_ms(c) == doctest::Approx(400.0));
    auto [lo, hi] = active_span_ms(c);
    CHECK(lo < c.wave(Wave::P).center_ms);
    CHECK(hi > c.wave(Wave::T).center_ms);
}

TEST_CASE("cohort composition and determinism") {
    CohortConfig k;
    k.duration_s = 20;
    auto a = make_cohort(k), b = make_cohort(k);
    REQUIRE(a.recordings.size() == 42);
    auto sum = summarize(a.metadata);
    CHECK(sum.smokers == 20);
    CHECK(sum.male == 26);
    CHECK(format_metadata(a.metadata) == format_metadata(b.metadata));
    for (std::size_t i = 0; i < 42; ++i) CHECK(a.recordings[i].samples == b.recordings[i].samples);
    for (const auto& m : a.metadata) CHECK(check_metadata(m).empty());

    // smokers have the faster latent heart rate on average
    double hs = 0, hn = 0;
    for (std::size_t i = 0; i < 42; ++i) (a.metadata[i].smoker ? hs : hn) += a.latent[i].hr_bpm;
    CHECK(hs / 20 > hn / 22);

    oracle::TempDir dir("synth");
    write_cohort(a, dir.str());
    auto ds = load_dataset(dir.str());
    CHECK(ds.recordings.size() == 42);
    CHECK(ds.recordings[3].samples.size() == 2000);
}

TEST_CASE("planted age is monotone in QT and reversed in HR") {
    CohortConfig k;
    CHECK(planted_age(k, 400, 60) > planted_age(k, 360, 60));
    CHECK(planted_age(k, 380, 55) > planted_age(k, 380, 80));
    CHECK(planted_age(k, 340, 100) >= k.age_min);
    CHECK(planted_age(k, 420, 40) <= k.age_max);
}

TEST_CASE("42 recordings of 180 s give 7392 segments") {
    std::size_t total = 0;
    for (int i = 0; i < 42; ++i) total += segment_count(180.0, 5.0, 1.0);
    CHECK(total == 7392);
}
