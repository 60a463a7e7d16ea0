#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgage/preprocess.hpp"

namespace ecgage {

enum class Fiducial : int {
    p_onset,
    p_peak,
    p_offset,
    qrs_onset,
    r_peak,
    qrs_offset,
    t_onset,
    t_peak,
    t_offset,
};

constexpr std::size_t kFiducialCount = 9;
const char* fiducial_name(Fiducial f);
std::optional<Fiducial> fiducial_from_name(std::string_view name);

/// Fiducial sample indices of one cardiac cycle. beat is the index of the
/// cycle's R peak in the detector output, so two cycles are adjacent iff
/// their beat numbers differ by one.
struct FiducialSet {
    std::size_t beat = 0;
    std::array<std::optional<std::size_t>, kFiducialCount> at{};

    std::optional<std::size_t>& operator[](Fiducial f) { return at[static_cast<int>(f)]; }
    const std::optional<std::size_t>& operator[](Fiducial f) const { return at[static_cast<int>(f)]; }
    std::size_t r_peak() const { return *at[static_cast<int>(Fiducial::r_peak)]; }
};

/// True when present fiducials are strictly increasing in declaration order.
bool is_ordered(const FiducialSet& f);

struct RPeakConfig {
    double band_low_hz = 5.0;
    double band_high_hz = 15.0;
    int band_order = 2;
    double integration_ms = 150.0;
    double threshold_fraction = 0.4;
    std::size_t energy_history = 8;
    double refractory_ms = 250.0;
    double snap_ms = 50.0;
};

struct DelineationConfig {
    RPeakConfig rpeak;
    int qrs_wavelet_level = 0;           // 0 = pick from sampling rate (~16 ms scale)
    double qrs_search_ms = 120.0;        // R-centred window for QRS slopes
    double qrs_secondary_ms = 80.0;      // reach for Q / S wavelet lobes
    double qrs_slope_fraction = 0.10;    // onset/offset slope threshold
    double t_start_after_qrs_ms = 80.0;
    double t_end_rr_fraction = 0.6;
    double p_start_before_r_ms = 300.0;
    double p_end_before_qrs_ms = 20.0;
    double boundary_fraction = 0.05;     // wave edge = back within 5% of amplitude
    double min_wave_amplitude = 0.05;    // in units of the signal standard deviation
    double baseline_window_ms = 80.0;    // PR neighbourhood used as local baseline
    double edge_search_ms = 150.0;       // how far beyond a peak to look for its edge
};

/// Level-wise detail coefficients of the dyadic a-trous transform with the
/// quadratic-spline derivative wavelet (lowpass [1 3 3 1]/8, highpass [2 -2]).
/// detail[k-1][n] approximates the derivative of the scale-2^k smoothed
/// signal at n + (2^k - 1)/2.
std::vector<std::vector<double>> wavelet_details(std::span<const double> x, int levels);

/// Derivative-energy detector. Throws NumericError when fewer than two
/// peaks are found.
std::vector<std::size_t> detect_r_peaks(std::span<const double> clean, double fs_hz, const RPeakConfig& cfg = {});
std::vector<std::size_t> detect_r_peaks(const CleanRecording& clean, const RPeakConfig& cfg = {});

/// Per-beat PQRST delineation. Beats whose P or T search window leaves the
/// recording are dropped. Requires at least two R peaks.
std::vector<FiducialSet> delineate_cycles(std::span<const double> clean, double fs_hz,
                                          const std::vector<std::size_t>& r_peaks,
                                          const DelineationConfig& cfg = {});
std::vector<FiducialSet> delineate_cycles(const CleanRecording& clean, const std::vector<std::size_t>& r_peaks,
                                          const DelineationConfig& cfg = {});

/// CSV of (cycle_index, fiducial_name, sample_index); absent fiducials omitted.
std::string format_fiducials(const std::vector<FiducialSet>& cycles);
std::vector<FiducialSet> parse_fiducials(const std::string& text);

}  // namespace ecgage
