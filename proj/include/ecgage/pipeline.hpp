#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgage/delineate.hpp"
#include "ecgage/eval.hpp"
#include "ecgage/features.hpp"
#include "ecgage/ingest.hpp"
#include "ecgage/models.hpp"
#include "ecgage/preprocess.hpp"
#include "ecgage/segment.hpp"
#include "ecgage/synth.hpp"

namespace ecgage {

constexpr int kConfigVersion = 1;

enum class Scenario { segmented, unsegmented, finetune };
const char* scenario_name(Scenario s);
Scenario scenario_from_name(std::string_view name);  // also accepts S, US, US+TL

struct PipelineConfig {
    std::uint64_t seed = 42;
    unsigned threads = 0;
    PreprocessConfig preprocess;
    DelineationConfig delineation;
    SegmentSpec segment;
    StdConvention hrv = StdConvention::population;
    std::vector<std::string> demographics = default_demographics();
    SexEncoding sex;
    SplitPlan split;          // holdout plan of the segmented scenario
    int cv_folds = 5;         // unsegmented scenarios
    std::vector<ModelKind> models{ModelKind::linear, ModelKind::ridge, ModelKind::tree, ModelKind::forest};
    std::map<ModelKind, nlohmann::json> grids;  // kind -> {param: [values]}
    ModelSpec pretrain;       // fitted when --pretrained points at a feature table
    FineTunePolicy finetune;
    double histogram_bin_years = 1.0;
    bool spearman = false;
    CohortConfig synth;
};

PipelineConfig default_config();
/// Keys missing from the document keep their defaults; unknown keys and
/// wrong types throw UsageError.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::string& path);
/// Canonical resolved form; stable across runs.
std::string format_config(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);
/// Sets the top-level seed and everything derived from it.
void apply_seed(PipelineConfig& cfg, std::uint64_t seed);

/// Cartesian product of the grid entry for kind, in key order with the last
/// key varying fastest.
std::vector<ModelSpec> expand_grid(const PipelineConfig& cfg, ModelKind kind);

struct SubjectAnalysis {
    std::string subject_id;
    CleanRecording clean;  // validity mask includes excised cycles
    std::vector<std::size_t> r_peaks;
    std::vector<FiducialSet> cycles;
    ExcisionResult excision;
    std::vector<FiducialSet> usable_cycles;
    std::vector<EcgFeatures> cycle_features;  // aligned with usable_cycles
};

/// preprocess -> R peaks -> delineation -> anomaly excision -> per-cycle
/// features. Errors are prefixed with the stage and subject.
SubjectAnalysis analyze_recording(const EcgRecording& rec, const PipelineConfig& cfg);

enum class Scope { segmented, full };
Scope scope_from_name(std::string_view name);

struct ScopeCounts {
    std::string subject_id;
    std::size_t cycles = 0;
    std::size_t masked_cycles = 0;
    std::size_t segments = 0;
    std::size_t excluded_segments = 0;
};

std::vector<ScopeFeatures> scope_features(const SubjectAnalysis& a, Scope scope, const PipelineConfig& cfg,
                                          ScopeCounts* counts = nullptr);

struct FeatureTable {
    AssembledRows rows;
    std::vector<ScopeCounts> counts;
    std::string data_hash;  // fingerprint of manifest, metadata and recordings
};

/// Loads the dataset under data_root and builds the feature table.
FeatureTable extract_features(const std::string& data_root, Scope scope, const PipelineConfig& cfg);
std::vector<SubjectAnalysis> analyze_dataset(const LoadedDataset& ds, const PipelineConfig& cfg);
FeatureTable build_feature_table(const LoadedDataset& ds, const std::vector<SubjectAnalysis>& analyses, Scope scope,
                                 const PipelineConfig& cfg);
std::string dataset_fingerprint(const std::string& data_root, const std::string& manifest_name = "manifest.json");

std::string format_counts(const std::vector<ScopeCounts>& counts, const AssembledRows& rows);

struct ModelOutcome {
    ModelKind kind = ModelKind::forest;
    std::string label;
    EvalReport report;
    std::vector<ModelSpec> selected;  // one per fold, or one for holdout
    GridResult grid;                  // holdout / final selection leaderboard
    TrainedModel model;               // refit for export
};

struct ScenarioResult {
    Scenario scenario = Scenario::segmented;
    std::size_t rows = 0;
    std::size_t train_rows = 0, val_rows = 0, test_rows = 0;
    std::vector<ModelOutcome> outcomes;
    CorrelationReport corr_age;
    CorrelationReport corr_smoker;
    std::optional<GroupStatsReport> groups;
    std::vector<std::string> notes;
};

struct Pretrained {
    TrainedModel model;
    std::string source;
    std::vector<std::string> dropped_columns;
};

/// A .json path is read as a model; anything else as a feature table on
/// which cfg.pretrain is fitted.
Pretrained load_pretrained(const std::string& path, const Dataset& target, const PipelineConfig& cfg);

/// Train and evaluate every configured model on a feature table.
ScenarioResult evaluate_scenario(const Dataset& d, Scenario scenario, const PipelineConfig& cfg,
                                 const Pretrained* pretrained = nullptr);

/// Writes metrics, predictions, histograms, leaderboards, correlation and
/// group-statistics reports, models and the run manifest into dir.
void write_scenario(const std::string& dir, const ScenarioResult& res, const Dataset& d, const PipelineConfig& cfg,
                    const std::string& data_hash);

struct RunOptions {
    std::string data_root;
    std::string out_dir;
    std::optional<std::string> pretrained;
};

/// Full run for one scenario; returns the scenario result written to out_dir.
ScenarioResult run_pipeline(const PipelineConfig& cfg, Scenario scenario, const RunOptions& opt);

/// Renders report.md and table.csv from the scenario reports found in dir
/// (or its immediate subdirectories). Throws DataError listing missing
/// artifacts.
void report_render(const std::string& dir);

/// Cohort configuration document: keys of CohortConfig; unknown keys throw.
CohortConfig parse_cohort_config(const nlohmann::json& j, CohortConfig base = {});
nlohmann::json cohort_config_to_json(const CohortConfig& c);

}  // namespace ecgage
