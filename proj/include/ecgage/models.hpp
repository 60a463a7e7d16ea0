#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgage/dataset.hpp"

namespace ecgage {

enum class ModelKind { linear, ridge, tree, forest };
const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_name(std::string_view name);

struct ModelSpec {
    ModelKind kind = ModelKind::forest;
    double ridge_lambda = 1.0;
    std::optional<int> tree_max_depth;  // unlimited when empty
    int tree_min_leaf = 2;
    int forest_n_trees = 200;
    int forest_max_features = 7;
    bool forest_bootstrap = true;
    std::uint64_t seed = 42;
};

/// Throws UsageError for out-of-range parameters.
void validate(const ModelSpec& spec);
std::string describe(const ModelSpec& spec);

nlohmann::json spec_to_json(const ModelSpec& spec);
/// Missing keys keep the values of base; unknown keys throw UsageError.
ModelSpec spec_from_json(const nlohmann::json& j, const ModelSpec& base = {});

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double value = 0.0;  // mean target of the node's training rows
    std::size_t count = 0;

    bool operator==(const TreeNode&) const = default;
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double predict(std::span<const double> row) const;
    int depth() const;
    std::size_t leaves() const;
    bool operator==(const Tree&) const = default;
};

/// Trees whose mean prediction enters the forest output with a fixed weight.
struct TreeGroup {
    double weight = 1.0;
    std::vector<Tree> trees;
};

struct LinearParams {
    std::vector<double> weights;   // on standardized predictors
    double intercept = 0.0;
    std::vector<double> x_mean;    // training statistics
    std::vector<double> x_scale;   // population std, 1 for constant columns
};

struct Provenance {
    std::string train_hash;
    std::string finetune_hash;  // empty unless fine-tuned
    std::size_t train_rows = 0;
    std::size_t finetune_rows = 0;
    std::vector<std::string> notes;
};

struct TrainedModel {
    ModelSpec spec;
    std::vector<std::string> columns;
    LinearParams linear;             // linear, ridge
    std::vector<TreeGroup> groups;   // tree (one group of one tree), forest
    Provenance provenance;
    bool rank_deficient = false;

    double predict_row(std::span<const double> row) const;
    /// Coefficients in the original predictor units.
    std::vector<double> raw_weights() const;
    double raw_intercept() const;
};

struct FitOptions {
    unsigned threads = 0;  // 0 = hardware concurrency
};

TrainedModel fit_linear(const Dataset& d);
TrainedModel fit_ridge(const Dataset& d, double lambda);
Tree build_tree(const Dataset& d, const std::vector<std::size_t>& rows, const ModelSpec& spec,
                std::uint64_t stream);
TrainedModel fit_tree(const Dataset& d, const ModelSpec& spec);
TrainedModel fit_forest(const Dataset& d, const ModelSpec& spec, const FitOptions& opt = {});
TrainedModel fit_model(const Dataset& d, const ModelSpec& spec, const FitOptions& opt = {});

/// Throws DataError when the dataset columns differ from the model's.
std::vector<double> predict(const TrainedModel& m, const Dataset& d);
std::vector<double> predict(const TrainedModel& m, std::span<const double> x_row_major);

std::string serialize_model(const TrainedModel& m);
TrainedModel deserialize_model(const std::string& json_text);
void save_model(const std::string& path, const TrainedModel& m);
TrainedModel load_model(const std::string& path);

struct GridEntry {
    ModelSpec spec;
    double score = 0.0;  // validation MSE (mean over folds for CV)
    std::vector<double> fold_scores;
};

struct GridResult {
    std::size_t best = 0;
    std::vector<GridEntry> leaderboard;  // in grid order
    const ModelSpec& best_spec() const { return leaderboard[best].spec; }
};

/// Fits every grid point on train and scores it on val; the minimum
/// validation MSE wins, earlier grid points win ties.
GridResult grid_search(const std::vector<ModelSpec>& grid, const Dataset& train, const Dataset& val,
                       const FitOptions& opt = {});
/// Same, scoring by mean MSE over the given (train rows, val rows) folds.
GridResult grid_search_cv(const std::vector<ModelSpec>& grid, const Dataset& d,
                          const std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>& folds,
                          const FitOptions& opt = {});

struct FineTunePolicy {
    enum class Kind { forest_augment, warm_start } kind = Kind::forest_augment;
    std::optional<int> new_trees;  // default: half the pretrained tree count
    double weight = 0.5;           // weight of the new trees
    int iterations = 10;           // warm-start CGLS iterations
};

/// "forest-augment:k=100,w=0.5" or "warm-start:iters=10".
FineTunePolicy parse_policy(const std::string& text);

/// Seed used for the trees added during fine-tuning.
std::uint64_t finetune_seed(std::uint64_t seed);

/// Adapts a trained model to a new dataset, which must contain all of the
/// model's columns.
TrainedModel finetune_model(const TrainedModel& pretrained, const Dataset& finetune, const FineTunePolicy& policy,
                            const FitOptions& opt = {});

struct PretrainResult {
    TrainedModel model;
    std::vector<std::string> dropped_columns;
};

/// Restricts both datasets to their shared columns, fits spec on the first
/// and fine-tunes on the second.
PretrainResult pretrain_finetune(const ModelSpec& spec, const Dataset& pretrain, const Dataset& finetune,
                                 const FineTunePolicy& policy, const FitOptions& opt = {});

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace ecgage
