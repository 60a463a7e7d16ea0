#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgage/dataset.hpp"
#include "ecgage/delineate.hpp"
#include "ecgage/ingest.hpp"

namespace ecgage {

enum class Feature : int {
    rr,
    qt,
    p_dur,
    pp,
    pt,  // T offset to the next P onset (a.k.a. TP interval)
    pr_interval,
    t_dur,
    st_seg,
    qrs,
    pr_seg,
    qtc,
    rmssd,
    sdnn,
};

constexpr std::size_t kEcgFeatureCount = 13;
const char* feature_name(Feature f);
std::vector<std::string> ecg_feature_names();

/// The 13 ECG features in ms; absent when an operand fiducial is missing.
struct EcgFeatures {
    std::array<std::optional<double>, kEcgFeatureCount> v{};

    std::optional<double>& operator[](Feature f) { return v[static_cast<int>(f)]; }
    const std::optional<double>& operator[](Feature f) const { return v[static_cast<int>(f)]; }
    bool complete() const;
};

/// Per-cycle interval features. RR, PP and PT pair a cycle with the next
/// one and are only filled when the next cycle is the adjacent beat.
/// RMSSD and SDNN stay absent at cycle level.
std::vector<EcgFeatures> interval_features(const std::vector<FiducialSet>& cycles, double fs_hz);

/// Bazett: qt_ms / sqrt(rr_ms / 1000). Throws NumericError for rr_ms <= 0.
double qtc(double qt_ms, double rr_ms);

enum class StdConvention { population, sample };

struct Hrv {
    double rmssd_ms = 0.0;
    double sdnn_ms = 0.0;
};

/// Throws DataError when fewer than 3 values are given (2 suffice for sdnn()).
double rmssd(std::span<const double> rr_ms);
double sdnn(std::span<const double> rr_ms, StdConvention conv = StdConvention::population);
Hrv hrv(std::span<const double> rr_ms, StdConvention conv = StdConvention::population);

/// Mean of every interval feature over the cycles where it is present; HRV
/// from the RR series of these cycles; QTc from the aggregated QT and RR.
/// Returns nullopt for an empty scope.
std::optional<EcgFeatures> aggregate(std::span<const EcgFeatures> cycles,
                                     StdConvention conv = StdConvention::population);

std::vector<std::string> default_demographics();
/// ECG feature names followed by the demographic names.
std::vector<std::string> predictor_names(const std::vector<std::string>& demographics = default_demographics());

/// Numeric value of a demographic column; throws UsageError for unknown names.
double demographic_value(const SubjectMetadata& m, const std::string& name, const SexEncoding& enc = {});

struct ScopeFeatures {
    std::string subject_id;
    std::string segment_id;  // segment number or "full"
    std::optional<EcgFeatures> features;
};

struct AssembledRows {
    Dataset data;
    std::size_t dropped_empty = 0;    // scopes without usable cycles
    std::size_t dropped_missing = 0;  // rows with an absent predictor
};

/// Joins ECG aggregates with per-subject metadata. Throws DataError for an
/// unknown subject.
AssembledRows assemble_rows(const std::vector<ScopeFeatures>& scopes, const std::vector<SubjectMetadata>& metadata,
                            const std::vector<std::string>& demographics = default_demographics(),
                            const SexEncoding& enc = {});

/// Heart rate as an analysis variable.
inline double heart_rate_bpm(double rr_ms) { return 60000.0 / rr_ms; }

}  // namespace ecgage
