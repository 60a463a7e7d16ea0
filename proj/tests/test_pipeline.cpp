#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ecgage/pipeline.hpp"
#include "oracles.hpp"

using namespace ecgage;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"({
  "seed": 7,
  "models": {"grids": {
    "ridge": {"ridge_lambda": [0.1, 10]},
    "tree": {"tree_max_depth": [3, 6]},
    "forest": {"forest_n_trees": [15], "forest_max_features": [4]}
  }},
  "synth": {"n_subjects": 8, "n_smokers": 4, "n_male": 4, "duration_s": 30}
})";

PipelineConfig small_config() { return parse_config(kSmallConfig); }

// one cohort shared by every case
const std::string& cohort_root() {
    static oracle::TempDir dir("pipeline");
    static const std::string root = [] {
        write_cohort(make_cohort(small_config().synth), dir.str("synthetic"));
        return dir.str("synthetic");
    }();
    return root;
}

}  // namespace

TEST_CASE("config parsing") {
    auto d = default_config();
    CHECK(d.seed == 42);
    CHECK(d.split.seed == 42);
    CHECK(format_config(parse_config(format_config(d))) == format_config(d));
    CHECK(config_hash(parse_config("{}")) == config_hash(d));

    auto c = small_config();
    CHECK(c.seed == 7);
    CHECK(c.split.seed == 7);
    CHECK(c.synth.n_subjects == 8);
    CHECK(config_hash(c) != config_hash(d));

    CHECK_THROWS_AS(parse_config(R"({"sede": 1})"), UsageError);
    CHECK_THROWS_AS(parse_config(R"({"segment": {"window_s": "five"}})"), UsageError);
    CHECK_THROWS_AS(parse_config(R"({"split": {"cv_folds": 1}})"), UsageError);
    CHECK_THROWS_AS(parse_config(R"({"models": {"kinds": ["svm"]}})"), UsageError);
    CHECK_THROWS_AS(parse_config(R"({"pretrain": {"seed": 3}})"), UsageError);
    CHECK_THROWS_AS(parse_config("[1,"), UsageError);
    CHECK(scenario_from_name("US+TL") == Scenario::finetune);
    CHECK_THROWS_AS(scenario_from_name("both"), UsageError);
}

TEST_CASE("grid expansion") {
    auto c = default_config();
    CHECK(expand_grid(c, ModelKind::linear).size() == 1);
    CHECK(expand_grid(c, ModelKind::ridge).size() == 5);
    auto t = expand_grid(c, ModelKind::tree);
    REQUIRE(t.size() == 6);
    // last key varies fastest
    CHECK(t[0].tree_max_depth == 4);
    CHECK(t[0].tree_min_leaf == 1);
    CHECK(t[1].tree_min_leaf == 3);
    CHECK(t[5].tree_max_depth == std::nullopt);
    for (const auto& s : expand_grid(c, ModelKind::forest)) CHECK(s.seed == 42);
    CHECK_THROWS_AS(parse_config(R"({"models": {"grids": {"tree": {"depth": [1]}}}})"), UsageError);
}

TEST_CASE("segmented run is byte-identical across reruns and thread counts") {
    oracle::TempDir out("runs");
    auto cfg = small_config();
    std::string first;
    for (unsigned threads : {1u, 1u, 3u}) {
        cfg.threads = threads;
        const auto dir = out.str("t" + std::to_string(threads) + (first.empty() ? "a" : "b"));
        auto res = run_pipeline(cfg, Scenario::segmented, {cohort_root(), dir, std::nullopt});
        CHECK(res.outcomes.size() == 4);
        CHECK(res.train_rows + res.val_rows + res.test_rows == res.rows);
        const auto metrics = read_file(dir + "/metrics.json");
        const auto preds = read_file(dir + "/predictions_forest.csv");
        if (first.empty()) {
            first = metrics + preds;
        } else {
            CHECK(metrics + preds == first);
        }
        CHECK(fs::exists(dir + "/run_manifest.json"));
        CHECK(fs::exists(dir + "/model_forest.json"));
    }
}

TEST_CASE("report rendering is a pure function of the report files") {
    oracle::TempDir out("report");
    auto cfg = small_config();
    run_pipeline(cfg, Scenario::unsegmented, {cohort_root(), out.str("us"), std::nullopt});
    report_render(out.str(""));
    const auto a = read_file(out.str("report.md")), t = read_file(out.str("table.csv"));
    report_render(out.str(""));
    CHECK(read_file(out.str("report.md")) == a);
    CHECK(read_file(out.str("table.csv")) == t);
    CHECK(t.find("unsegmented") != std::string::npos);

    oracle::TempDir empty("empty");
    CHECK_THROWS_AS(report_render(empty.str("")), DataError);
    fs::remove(out.str("us/group_stats.json"));
    CHECK_THROWS_AS(report_render(out.str("")), DataError);
}

TEST_CASE("fine-tune scenario") {
    oracle::TempDir out("ft");
    auto cfg = small_config();
    CHECK_THROWS_AS(run_pipeline(cfg, Scenario::finetune, {cohort_root(), out.str("x"), std::nullopt}), UsageError);

    // pretrain on the segmented table of the same cohort
    auto seg = extract_features(cohort_root(), Scope::segmented, cfg);
    write_file(out.str("pre.csv"), format_dataset(seg.rows.data));
    auto res = run_pipeline(cfg, Scenario::finetune, {cohort_root(), out.str("ft"), out.str("pre.csv")});
    REQUIRE(res.outcomes.size() == 1);
    CHECK(res.outcomes[0].label == "forest+tl");
    CHECK(res.outcomes[0].report.rows.size() == 8);
    CHECK(res.outcomes[0].report.folds.size() == 5);
}

TEST_CASE("feature extraction counts") {
    auto cfg = small_config();
    auto full = extract_features(cohort_root(), Scope::full, cfg);
    CHECK(full.rows.data.rows() == 8);
    CHECK(full.counts.size() == 8);
    auto seg = extract_features(cohort_root(), Scope::segmented, cfg);
    std::size_t kept = 0;
    for (const auto& c : seg.counts) {
        CHECK(c.segments == 26);
        kept += c.segments - c.excluded_segments;
    }
    CHECK(seg.rows.data.rows() + seg.rows.dropped_empty + seg.rows.dropped_missing == kept);
    CHECK(seg.data_hash == full.data_hash);
    CHECK_THROWS_AS(extract_features(cohort_root() + "/nowhere", Scope::full, cfg), DataError);
}
