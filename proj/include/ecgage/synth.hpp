#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecgage/delineate.hpp"
#include "ecgage/ingest.hpp"

namespace ecgage {

/// One Gaussian component of the beat template, timed relative to the R peak.
struct WaveComponent {
    double center_ms = 0.0;
    double width_ms = 10.0;  // Gaussian sigma
    double amplitude = 0.0;
};

enum class Wave { P = 0, Q, R, S, T };

struct DriftSpec {
    double amplitude = 0.0;
    double frequency_hz = 0.3;
};

struct SynthConfig {
    double fs_hz = 100.0;
    double duration_s = 60.0;
    double mean_hr_bpm = 60.0;
    double rr_jitter_ms = 0.0;  // std of the beat-to-beat RR jitter
    std::array<WaveComponent, 5> waves{{
        {-170.0, 20.0, 0.15},   // P
        {-35.0, 10.0, -0.12},   // Q
        {0.0, 12.0, 1.0},       // R
        {35.0, 10.0, -0.25},    // S
        {220.0, 40.0, 0.32},    // T
    }};
    std::optional<double> noise_snr_db;
    std::optional<DriftSpec> drift;
    std::uint64_t seed = 1;
    /// Explicit RR schedule in ms; overrides mean_hr_bpm and jitter when set.
    std::vector<double> rr_schedule_ms;

    WaveComponent& wave(Wave w) { return waves[static_cast<int>(w)]; }
    const WaveComponent& wave(Wave w) const { return waves[static_cast<int>(w)]; }
};

/// Wave edges sit at +/- this many sigmas from each Gaussian centre.
constexpr double kEdgeSigmas = 2.5;

struct SynthAnnotation {
    std::vector<double> r_times_ms;
    std::vector<double> rr_ms;         // r_times_ms[i+1] - r_times_ms[i]
    std::vector<FiducialSet> cycles;   // true fiducials, rounded to samples
};

struct SynthOutput {
    EcgRecording recording;
    SynthAnnotation annotation;
    std::vector<double> ecg;    // noise- and drift-free waveform
    std::vector<double> drift;
    std::vector<double> noise;
};

/// Throws DataError for invalid configurations, including RR intervals
/// shorter than one beat's P-onset-to-T-offset span.
void validate(const SynthConfig& cfg);

/// Active span of a beat template in ms (P onset to T offset, relative to R).
std::pair<double, double> active_span_ms(const SynthConfig& cfg);

/// QT (QRS onset to T offset) implied by the template.
double template_qt_ms(const SynthConfig& cfg);
/// Moves the T wave so that template_qt_ms(cfg) == qt_ms.
void set_template_qt(SynthConfig& cfg, double qt_ms);

SynthOutput generate(const SynthConfig& cfg);

/// Sum of Gaussian components for beats at r_times_ms, sampled at fs.
std::vector<double> render_beats(const SynthConfig& cfg, const std::vector<double>& r_times_ms, std::size_t n);

/// Analytic fiducials for one beat at r_ms.
FiducialSet annotate_beat(const SynthConfig& cfg, double r_ms, std::size_t beat, std::size_t n_samples);

struct CohortConfig {
    std::size_t n_subjects = 42;
    double duration_s = 180.0;
    double fs_hz = 100.0;
    std::size_t n_smokers = 20;
    std::size_t n_male = 26;
    double age_min = 18.0;
    double age_max = 30.0;
    double age_noise_fraction = 0.10;   // of the planted target's std
    double qt_min_ms = 340.0, qt_max_ms = 420.0;
    double hr_min_bpm = 55.0, hr_max_bpm = 80.0;
    double smoker_hr_increase_bpm = 8.0;
    double rr_jitter_ms = 35.0;
    double smoker_rr_jitter_ms = 20.0;
    std::optional<double> noise_snr_db = 30.0;
    std::uint64_t seed = 42;
};

struct CohortSubject {
    double qt_ms = 0.0;
    double hr_bpm = 0.0;
    double planted_age = 0.0;  // before noise and rounding
};

struct SynthCohort {
    std::vector<EcgRecording> recordings;
    std::vector<SubjectMetadata> metadata;
    std::vector<SynthAnnotation> annotations;
    std::vector<CohortSubject> latent;
};

/// Planted age rule: a smooth nonlinear function of QT and heart rate,
/// scaled into [age_min, age_max].
double planted_age(const CohortConfig& cfg, double qt_ms, double hr_bpm);

/// Cohort whose age is a known function of QT/HR plus noise; smokers get a
/// faster and less variable heart rate and higher systolic pressure.
SynthCohort make_cohort(const CohortConfig& cfg);

/// Writes recordings/, annotations/, metadata.json and manifest.json under root.
void write_cohort(const SynthCohort& cohort, const std::string& root, const std::string& name = "synthetic");

std::string format_annotation(const SynthAnnotation& ann);

}  // namespace ecgage
