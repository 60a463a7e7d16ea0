#pragma once

#include <complex>
#include <span>
#include <vector>

#include "ecgage/ingest.hpp"

namespace ecgage {

enum class FilterKind { lowpass, highpass };

struct FilterSpec {
    FilterKind kind = FilterKind::lowpass;
    int order = 3;
    double cutoff_hz = 18.0;
    double sampling_rate_hz = 100.0;
};

/// One second-order section, normalized so a0 == 1. A first-order section
/// has b2 == a2 == 0.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;
};

using SosCascade = std::vector<Biquad>;

enum class FilterMode { forward, zero_phase };

/// Digital Butterworth filter as a cascade of second-order sections (one
/// first-order section for odd orders), obtained from the analog prototype
/// by the bilinear transform with the cutoff prewarped. Each section is
/// scaled to unit gain in the passband (DC for lowpass, Nyquist for highpass).
SosCascade design_butterworth(const FilterSpec& spec);

/// Complex frequency response of the cascade at f_hz.
std::complex<double> frequency_response(const SosCascade& sos, double f_hz, double fs_hz);

/// Transposed direct-form II with zero initial state. zero_phase runs the
/// cascade forward, reverses, runs it again and reverses back.
std::vector<double> apply_filter(std::span<const double> x, const SosCascade& sos, FilterMode mode);

struct BaselineSpec {
    double stage1_window_ms = 200.0;
    double stage2_window_ms = 600.0;
};

/// Nearest odd sample count for a window given in milliseconds.
std::size_t odd_window(double ms, double fs_hz);

/// Running median with mirror reflection at the edges. window must be odd.
std::vector<double> median_filter(std::span<const double> x, std::size_t window);

/// Subtracts median(median(x, w1), w2).
std::vector<double> remove_baseline(std::span<const double> x, const BaselineSpec& spec, double fs_hz);

struct ZScoreResult {
    std::vector<double> values;
    double mean = 0.0;
    double std = 1.0;
};

/// Population z-score over samples where mask is true; masked samples are
/// transformed with the same statistics but remain masked.
ZScoreResult zscore(std::span<const double> x, const std::vector<bool>& mask);

struct AnomalySpec {
    double flat_run_ms = 50.0;
    double excursion_sd = 6.0;
};

struct PreprocessConfig {
    FilterSpec lowpass;
    FilterMode mode = FilterMode::zero_phase;
    BaselineSpec baseline;
    AnomalySpec anomaly;
};

struct CleanRecording {
    EcgRecording signal;               // normalized samples, extended validity mask
    std::vector<double> raw;           // samples as loaded (NaN where invalid)
    FilterSpec filter;
    FilterMode mode = FilterMode::zero_phase;
    BaselineSpec baseline;
    double norm_mean = 0.0;
    double norm_std = 1.0;
};

/// Low-pass, baseline removal and z-score, in that order. Invalid samples
/// are bridged by linear interpolation before filtering and stay masked.
CleanRecording preprocess(const EcgRecording& rec, const PreprocessConfig& cfg);

struct FiducialSet;

struct ExcisionResult {
    std::vector<bool> valid;
    std::vector<std::size_t> masked_cycles;  // indices into the fiducial list
    bool unusable = false;
};

/// Masks every cardiac cycle (P onset to next P onset) that contains a NaN,
/// a run of identical raw values lasting at least flat_run_ms, or a clean
/// sample beyond +/- excursion_sd. Never unmasks anything.
ExcisionResult find_anomalies(const CleanRecording& rec, const std::vector<FiducialSet>& cycles,
                              const AnomalySpec& spec);
void excise_anomalies(CleanRecording& rec, const std::vector<FiducialSet>& cycles, const AnomalySpec& spec,
                      ExcisionResult* result = nullptr);

/// Sample span [begin, end) attributed to cycle i for excision.
std::pair<std::size_t, std::size_t> cycle_span(const std::vector<FiducialSet>& cycles, std::size_t i,
                                               std::size_t n_samples, double fs_hz);

}  // namespace ecgage
