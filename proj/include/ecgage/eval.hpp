#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgage/dataset.hpp"
#include "ecgage/models.hpp"

namespace ecgage {

enum class SplitKind { holdout, kfold };
enum class Grouping { by_row, by_subject };

struct SplitPlan {
    SplitKind kind = SplitKind::holdout;
    int k = 5;
    std::uint64_t seed = 42;
    Grouping grouping = Grouping::by_row;
    double train_fraction = 0.6;
    double val_fraction = 0.2;
};

struct Holdout {
    std::vector<std::size_t> train, val, test;  // ascending row indices
};

/// round(train_fraction * n), round(val_fraction * n), remainder.
std::array<std::size_t, 3> holdout_sizes(std::size_t n, const SplitPlan& plan);

/// Seeded shuffle of rows (or of subjects, for by_subject), then partition.
/// Throws DataError when there are fewer than 5 units.
Holdout holdout_split(const Dataset& d, const SplitPlan& plan);

/// Disjoint validation folds covering every row; unit i of the shuffled
/// order lands in fold i mod k. Throws DataError when units < k.
std::vector<std::vector<std::size_t>> kfold_split(const Dataset& d, const SplitPlan& plan);

using FoldPairs = std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>;
/// (train, val) pairs where train is the complement of each fold.
FoldPairs fold_pairs(const std::vector<std::vector<std::size_t>>& folds, std::size_t n_rows);

double mse(std::span<const double> y_true, std::span<const double> y_pred);
/// Throws NumericError when y_true has zero variance.
double r2(std::span<const double> y_true, std::span<const double> y_pred);

struct Histogram {
    double bin_width = 1.0;
    long first_bin = 0;  // bin k covers [(k - 1/2) w, (k + 1/2) w)
    std::vector<std::size_t> counts;

    double lower_edge(std::size_t i) const { return (static_cast<double>(first_bin + static_cast<long>(i)) - 0.5) * bin_width; }
    std::size_t total() const;
};

/// Signed errors binned with a bin centred on zero.
Histogram error_histogram(std::span<const double> errors, double bin_width = 1.0);

struct PredictionRow {
    std::string subject_id;
    std::string segment_id;
    double truth = 0.0;
    double predicted = 0.0;
};

struct FoldMetrics {
    double mse = 0.0;
    std::optional<double> r2;
    std::size_t rows = 0;
};

struct EvalReport {
    double mse = 0.0;
    std::optional<double> r2;  // absent for zero-variance truth
    std::vector<PredictionRow> rows;
    std::vector<FoldMetrics> folds;
    Histogram histogram;
};

EvalReport evaluate(const TrainedModel& m, const Dataset& test, double bin_width = 1.0);
/// Pools per-row predictions of several folds into one report.
EvalReport pool_reports(const std::vector<EvalReport>& folds, double bin_width = 1.0);

/// Pearson r; nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
/// Average ranks (1-based), ties share their mean rank.
std::vector<double> ranks(std::span<const double> x);
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

enum class Target { age, smoker };
const char* target_name(Target t);

struct CorrelationEntry {
    std::string feature;
    std::optional<double> r;
};

struct CorrelationReport {
    Target target = Target::age;
    bool spearman = false;
    std::vector<CorrelationEntry> entries;  // predictor order, heart rate appended
};

/// Correlation of every predictor, plus heart_rate_bpm derived from
/// rr_ms when present, with the target.
CorrelationReport pearson_matrix(const Dataset& d, Target target, bool use_spearman = false);

struct GroupStatsEntry {
    std::string feature;
    double mean_smoker = 0.0, std_smoker = 0.0;
    double mean_nonsmoker = 0.0, std_nonsmoker = 0.0;
    std::optional<double> d;  // (mean_s - mean_ns) / pooled sample std
};

struct GroupStatsReport {
    std::size_t n_smoker = 0, n_nonsmoker = 0;
    std::vector<GroupStatsEntry> entries;  // ranked by |d|, undefined last
};

/// Smoker vs non-smoker statistics for every predictor except the smoker
/// flag itself, plus derived heart rate. Throws DataError when one class is
/// empty.
GroupStatsReport group_stats(const Dataset& d);

}  // namespace ecgage
