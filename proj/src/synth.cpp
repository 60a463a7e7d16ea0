#include "ecgage/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

namespace ecgage {

namespace {

const WaveComponent& wv(const SynthConfig& c, Wave w) { return c.wave(w); }

std::optional<std::size_t> to_index(double ms, double fs, std::size_t n) {
    double s = std::round(ms * fs / 1000.0);
    if (s < 0 || s >= static_cast<double>(n)) return std::nullopt;
    return static_cast<std::size_t>(s);
}

}  // namespace

std::pair<double, double> active_span_ms(const SynthConfig& cfg) {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto& w : cfg.waves) {
        if (w.amplitude == 0.0) continue;
        double a = w.center_ms - kEdgeSigmas * w.width_ms;
        double b = w.center_ms + kEdgeSigmas * w.width_ms;
        lo = any ? std::min(lo, a) : a;
        hi = any ? std::max(hi, b) : b;
        any = true;
    }
    return {lo, hi};
}

double template_qt_ms(const SynthConfig& cfg) {
    double on = 0.0;
    bool any = false;
    for (auto w : {Wave::Q, Wave::R, Wave::S}) {
        const auto& c = wv(cfg, w);
        if (c.amplitude == 0.0) continue;
        double a = c.center_ms - kEdgeSigmas * c.width_ms;
        on = any ? std::min(on, a) : a;
        any = true;
    }
    const auto& t = wv(cfg, Wave::T);
    return t.center_ms + kEdgeSigmas * t.width_ms - on;
}

void set_template_qt(SynthConfig& cfg, double qt_ms) {
    cfg.wave(Wave::T).center_ms += qt_ms - template_qt_ms(cfg);
}

void validate(const SynthConfig& cfg) {
    if (!(cfg.fs_hz > 0)) throw DataError("synth: fs_hz must be positive");
    if (!(cfg.duration_s > 0)) throw DataError("synth: duration_s must be positive");
    if (cfg.rr_schedule_ms.empty() && !(cfg.mean_hr_bpm > 0)) throw DataError("synth: mean_hr_bpm must be positive");
    if (cfg.rr_jitter_ms < 0) throw DataError("synth: rr_jitter_ms must be non-negative");
    for (const auto& w : cfg.waves)
        if (!(w.width_ms > 0)) throw DataError("synth: wave widths must be positive");
    for (int i = 0; i + 1 < 5; ++i)
        if (!(cfg.waves[i].center_ms < cfg.waves[i + 1].center_ms))
            throw DataError("synth: wave centres must be ordered P < Q < R < S < T");
    // The narrowest component must be resolvable at this rate.
    double min_width = cfg.waves[0].width_ms;
    for (const auto& w : cfg.waves) min_width = std::min(min_width, w.width_ms);
    if (min_width * cfg.fs_hz / 1000.0 < 0.5) throw DataError("synth: sampling rate too low for the wave widths");
}

std::vector<double> render_beats(const SynthConfig& cfg, const std::vector<double>& r_times_ms, std::size_t n) {
    std::vector<double> y(n, 0.0);
    const double dt = 1000.0 / cfg.fs_hz;
    // Each beat contributes within +/- 1.5 s, which keeps tails non-zero
    // between beats for any rate above 40 bpm.
    const double reach_ms = 1500.0;
    for (double r : r_times_ms) {
        auto lo = static_cast<long long>(std::ceil((r - reach_ms) / dt));
        auto hi = static_cast<long long>(std::floor((r + reach_ms) / dt));
        lo = std::max(lo, 0LL);
        hi = std::min(hi, static_cast<long long>(n) - 1);
        for (long long i = lo; i <= hi; ++i) {
            double t = static_cast<double>(i) * dt - r;
            double v = 0.0;
            for (const auto& w : cfg.waves) {
                if (w.amplitude == 0.0) continue;
                double u = (t - w.center_ms) / w.width_ms;
                v += w.amplitude * std::exp(-0.5 * u * u);
            }
            y[static_cast<std::size_t>(i)] += v;
        }
    }
    return y;
}

FiducialSet annotate_beat(const SynthConfig& cfg, double r_ms, std::size_t beat, std::size_t n) {
    FiducialSet f;
    f.beat = beat;
    const double fs = cfg.fs_hz;
    auto put = [&](Fiducial fid, double rel_ms) { f[fid] = to_index(r_ms + rel_ms, fs, n); };
    const auto& p = wv(cfg, Wave::P);
    if (p.amplitude != 0.0) {
        put(Fiducial::p_onset, p.center_ms - kEdgeSigmas * p.width_ms);
        put(Fiducial::p_peak, p.center_ms);
        put(Fiducial::p_offset, p.center_ms + kEdgeSigmas * p.width_ms);
    }
    double on = 0.0, off = 0.0;
    bool any = false;
    for (auto w : {Wave::Q, Wave::R, Wave::S}) {
        const auto& c = wv(cfg, w);
        if (c.amplitude == 0.0) continue;
        double a = c.center_ms - kEdgeSigmas * c.width_ms;
        double b = c.center_ms + kEdgeSigmas * c.width_ms;
        on = any ? std::min(on, a) : a;
        off = any ? std::max(off, b) : b;
        any = true;
    }
    put(Fiducial::r_peak, wv(cfg, Wave::R).center_ms);
    if (any) {
        put(Fiducial::qrs_onset, on);
        put(Fiducial::qrs_offset, off);
    }
    const auto& t = wv(cfg, Wave::T);
    if (t.amplitude != 0.0) {
        put(Fiducial::t_onset, t.center_ms - kEdgeSigmas * t.width_ms);
        put(Fiducial::t_peak, t.center_ms);
        put(Fiducial::t_offset, t.center_ms + kEdgeSigmas * t.width_ms);
    }
    return f;
}

SynthOutput generate(const SynthConfig& cfg) {
    validate(cfg);
    const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.fs_hz));
    const double duration_ms = cfg.duration_s * 1000.0;
    auto [span_lo, span_hi] = active_span_ms(cfg);
    const double span = span_hi - span_lo;

    RandomStream rng(cfg.seed, 0);
    SynthOutput out;
    auto& ann = out.annotation;

    const double mean_rr = cfg.rr_schedule_ms.empty() ? 60000.0 / cfg.mean_hr_bpm : cfg.rr_schedule_ms.front();
    double t = mean_rr / 2.0;
    std::size_t k = 0;
    while (t < duration_ms) {
        ann.r_times_ms.push_back(t);
        double rr;
        if (!cfg.rr_schedule_ms.empty()) {
            rr = cfg.rr_schedule_ms[std::min(k, cfg.rr_schedule_ms.size() - 1)];
        } else {
            rr = mean_rr + (cfg.rr_jitter_ms > 0 ? cfg.rr_jitter_ms * rng.normal() : 0.0);
        }
        if (!(rr > span))
            throw DataError("synth: RR interval " + format_double(rr) + " ms shorter than the beat span " +
                            format_double(span) + " ms");
        t += rr;
        ++k;
    }
    for (std::size_t i = 0; i + 1 < ann.r_times_ms.size(); ++i)
        ann.rr_ms.push_back(ann.r_times_ms[i + 1] - ann.r_times_ms[i]);
    for (std::size_t i = 0; i < ann.r_times_ms.size(); ++i)
        ann.cycles.push_back(annotate_beat(cfg, ann.r_times_ms[i], i, n));

    out.ecg = render_beats(cfg, ann.r_times_ms, n);
    out.drift.assign(n, 0.0);
    out.noise.assign(n, 0.0);
    if (cfg.drift && cfg.drift->amplitude != 0.0) {
        for (std::size_t i = 0; i < n; ++i)
            out.drift[i] = cfg.drift->amplitude *
                           std::sin(2.0 * std::numbers::pi * cfg.drift->frequency_hz * static_cast<double>(i) / cfg.fs_hz);
    }
    if (cfg.noise_snr_db) {
        double power = 0.0;
        for (double v : out.ecg) power += v * v;
        power /= static_cast<double>(n);
        const double sigma = std::sqrt(power / std::pow(10.0, *cfg.noise_snr_db / 10.0));
        RandomStream noise_rng(cfg.seed, 1);
        for (auto& v : out.noise) v = sigma * noise_rng.normal();
    }

    out.recording.sampling_rate_hz = cfg.fs_hz;
    out.recording.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.recording.samples[i] = out.ecg[i] + out.drift[i] + out.noise[i];
    out.recording.valid.assign(n, true);
    return out;
}

double planted_age(const CohortConfig& cfg, double qt_ms, double hr_bpm) {
    auto logistic = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    const double qt_mid = 0.5 * (cfg.qt_min_ms + cfg.qt_max_ms);
    const double hr_mid = 0.5 * (cfg.hr_min_bpm + cfg.hr_max_bpm + cfg.smoker_hr_increase_bpm);
    const double g = 0.65 * logistic((qt_ms - qt_mid) / 8.0) + 0.35 * logistic((hr_mid - hr_bpm) / 4.0);
    return cfg.age_min + (cfg.age_max - cfg.age_min) * g;
}

SynthCohort make_cohort(const CohortConfig& cfg) {
    if (cfg.n_subjects < 2) throw DataError("make_cohort: need at least 2 subjects");
    if (cfg.n_smokers > cfg.n_subjects || cfg.n_male > cfg.n_subjects)
        throw DataError("make_cohort: class counts exceed the number of subjects");
    RandomStream rng(cfg.seed, 0);

    std::vector<int> smoker(cfg.n_subjects, 0), male(cfg.n_subjects, 0);
    std::fill(smoker.begin(), smoker.begin() + static_cast<std::ptrdiff_t>(cfg.n_smokers), 1);
    std::fill(male.begin(), male.begin() + static_cast<std::ptrdiff_t>(cfg.n_male), 1);
    rng.shuffle(smoker);
    rng.shuffle(male);

    SynthCohort cohort;
    std::vector<double> planted;
    for (std::size_t i = 0; i < cfg.n_subjects; ++i) {
        RandomStream srng(derive_seed(cfg.seed, i), 0);
        CohortSubject lat;
        lat.qt_ms = cfg.qt_min_ms + (cfg.qt_max_ms - cfg.qt_min_ms) * srng.uniform();
        lat.hr_bpm = cfg.hr_min_bpm + (cfg.hr_max_bpm - cfg.hr_min_bpm) * srng.uniform() +
                     (smoker[i] ? cfg.smoker_hr_increase_bpm : 0.0);
        lat.planted_age = planted_age(cfg, lat.qt_ms, lat.hr_bpm);
        planted.push_back(lat.planted_age);
        cohort.latent.push_back(lat);
    }
    const double noise_sd = cfg.age_noise_fraction * pstdev(planted);

    for (std::size_t i = 0; i < cfg.n_subjects; ++i) {
        RandomStream srng(derive_seed(cfg.seed, i), 1);
        const auto& lat = cohort.latent[i];
        char id[32];
        std::snprintf(id, sizeof(id), "S%03zu", i + 1);

        SynthConfig sc;
        sc.fs_hz = cfg.fs_hz;
        sc.duration_s = cfg.duration_s;
        sc.mean_hr_bpm = lat.hr_bpm;
        sc.rr_jitter_ms = smoker[i] ? cfg.smoker_rr_jitter_ms : cfg.rr_jitter_ms;
        sc.noise_snr_db = cfg.noise_snr_db;
        sc.seed = derive_seed(cfg.seed, 1000 + i);
        for (auto& w : sc.waves) w.amplitude *= 1.0 + 0.1 * (2.0 * srng.uniform() - 1.0);
        set_template_qt(sc, lat.qt_ms);
        auto gen = generate(sc);
        gen.recording.subject_id = id;

        SubjectMetadata m;
        m.subject_id = id;
        m.age_years = static_cast<int>(std::lround(lat.planted_age + noise_sd * srng.normal()));
        m.sex = male[i] ? Sex::male : Sex::female;
        m.smoker = smoker[i] != 0;
        double height = (male[i] ? 172.0 : 159.0) + 6.0 * srng.normal();
        m.bmi_kg_m2 = 23.0 + 3.0 * srng.normal();
        m.height_cm = std::round(height * 10.0) / 10.0;
        double h = *m.height_cm / 100.0;
        m.weight_kg = std::round(m.bmi_kg_m2 * h * h * 10.0) / 10.0;
        m.bmi_kg_m2 = std::round(*m.weight_kg / (h * h) * 100.0) / 100.0;
        m.sleep_hours = std::round(std::clamp(7.0 + srng.normal(), 3.0, 11.0) * 10.0) / 10.0;
        m.systolic_mmhg = std::round(118.0 + (smoker[i] ? 5.0 : 0.0) + 8.0 * srng.normal());
        m.diastolic_mmhg = std::round(m.systolic_mmhg - 40.0 - 5.0 * std::abs(srng.normal()));
        m.resting_hr_bpm = std::round(lat.hr_bpm + 3.0 * srng.normal());
        m.family_history = srng.uniform() < 0.3;

        cohort.recordings.push_back(std::move(gen.recording));
        cohort.annotations.push_back(std::move(gen.annotation));
        cohort.metadata.push_back(m);
    }
    return cohort;
}

std::string format_annotation(const SynthAnnotation& ann) { return format_fiducials(ann.cycles); }

void write_cohort(const SynthCohort& cohort, const std::string& root, const std::string& name) {
    namespace fs = std::filesystem;
    DatasetManifest man;
    man.dataset_name = name;
    man.version = "1";
    man.metadata_path = "metadata.json";
    man.sampling_rate_hz = cohort.recordings.empty() ? 100.0 : cohort.recordings.front().sampling_rate_hz;
    for (std::size_t i = 0; i < cohort.recordings.size(); ++i) {
        const auto& rec = cohort.recordings[i];
        std::string rel = "recordings/" + rec.subject_id + ".csv";
        write_recording((fs::path(root) / rel).string(), rec);
        write_file((fs::path(root) / "annotations" / (rec.subject_id + ".csv")).string(),
                   format_annotation(cohort.annotations[i]));
        man.entries.push_back({rel, rec.subject_id});
    }
    write_file((fs::path(root) / "metadata.json").string(), format_metadata(cohort.metadata));
    write_file((fs::path(root) / "manifest.json").string(), format_manifest(man));
}

}  // namespace ecgage
