#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ecgage/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ecgage;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string data_root = ".";
    std::string out;
    unsigned threads = 0;
};

PipelineConfig resolve(const Globals& g) {
    PipelineConfig cfg = g.config.empty() ? default_config() : load_config(g.config);
    if (g.seed) apply_seed(cfg, *g.seed);
    cfg.threads = g.threads;
    return cfg;
}

std::string need_out(const Globals& g, const char* what) {
    if (g.out.empty()) throw UsageError(std::string("--out is required for ") + what);
    return g.out;
}

void emit(const Globals& g, const std::string& text) {
    if (g.out.empty()) std::cout << text;
    else write_file(g.out, text);
}

std::string provenance_json(const SubjectAnalysis& a) {
    const auto& c = a.clean;
    std::size_t masked = 0;
    for (bool v : c.signal.valid) masked += v ? 0 : 1;
    nlohmann::json j = {{"subject_id", a.subject_id},
                        {"lowpass", {{"order", c.filter.order}, {"cutoff_hz", c.filter.cutoff_hz},
                                     {"sampling_rate_hz", c.filter.sampling_rate_hz}}},
                        {"mode", c.mode == FilterMode::forward ? "forward" : "zero_phase"},
                        {"baseline_ms", {c.baseline.stage1_window_ms, c.baseline.stage2_window_ms}},
                        {"norm_mean", c.norm_mean},
                        {"norm_std", c.norm_std},
                        {"masked_samples", masked},
                        {"masked_cycles", a.excision.masked_cycles.size()},
                        {"unusable", a.excision.unusable}};
    return j.dump(2) + "\n";
}

Dataset load_features(const std::string& path) {
    if (path.empty()) throw UsageError("--data <features.csv> is required");
    return load_dataset_csv(path);
}

void print_summary(const ScenarioResult& r) {
    std::printf("%s: %zu rows\n", scenario_name(r.scenario), r.rows);
    for (const auto& o : r.outcomes)
        std::printf("  %-10s MSE %.4f  R2 %s\n", o.label.c_str(), o.report.mse,
                    o.report.r2 ? std::to_string(*o.report.r2).c_str() : "n/a");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG vascular-age pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Pipeline configuration (JSON)");
    app.add_option("--seed", g.seed, "Seed overriding the configuration");
    app.add_option("--data-root", g.data_root, "Dataset directory holding manifest.json");
    app.add_option("--out", g.out, "Output file or directory");
    app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");

    auto* synth = app.add_subcommand("synth", "Write a synthetic cohort with known fiducials");
    std::optional<std::size_t> n_subjects;
    std::optional<double> duration;
    synth->add_option("--subjects", n_subjects, "Number of subjects");
    synth->add_option("--duration-s", duration, "Recording length in seconds");

    auto* ingest = app.add_subcommand("ingest", "Validate a dataset and report per-subject statistics");

    auto* prep = app.add_subcommand("preprocess", "Write cleaned, normalized recordings");
    std::optional<double> cutoff_hz;
    std::optional<int> order;
    std::string mode, baseline_ms;
    prep->add_option("--cutoff-hz", cutoff_hz, "Low-pass cutoff (default 18)");
    prep->add_option("--order", order, "Butterworth order (default 3)");
    prep->add_option("--mode", mode, "zero-phase or forward")->check(CLI::IsMember({"zero-phase", "forward"}));
    prep->add_option("--baseline-ms", baseline_ms, "Median windows, e.g. 200,600");

    auto* delin = app.add_subcommand("delineate", "Write per-cycle fiducials");
    delin->add_option("--in", g.data_root, "Dataset directory (same as --data-root)");

    auto* feats = app.add_subcommand("features", "Build the feature table");
    std::string scope = "segmented";
    feats->add_option("--scope", scope, "segmented or full")->check(CLI::IsMember({"segmented", "full"}));

    auto* seg = app.add_subcommand("segment", "List the segments of every recording");
    std::optional<double> window_s, stride_s;
    seg->add_option("--window-s", window_s, "Window length in seconds (default 5)");
    seg->add_option("--stride-s", stride_s, "Stride in seconds (default 1)");
    feats->add_option("--window-s", window_s, "Window length in seconds (default 5)");
    feats->add_option("--stride-s", stride_s, "Stride in seconds (default 1)");

    auto* train = app.add_subcommand("train", "Grid-search and fit a model on a feature table");
    std::string data_path, model_kind = "forest", grid_path, split = "60/20/20";
    train->add_option("--data", data_path, "Feature table (CSV)")->required();
    train->add_option("--model", model_kind, "linear, ridge, tree or forest");
    train->add_option("--grid", grid_path, "Grid JSON: {param: [values]}");
    train->add_option("--split", split, "train/val/test percentages");

    auto* ft = app.add_subcommand("finetune", "Adapt a pretrained model to a new feature table");
    std::string pretrained, policy;
    ft->add_option("--pretrained", pretrained, "Model JSON or pretraining feature table")->required();
    ft->add_option("--data", data_path, "Fine-tuning feature table")->required();
    ft->add_option("--policy", policy, "forest-augment:k=N,w=W or warm-start:iters=N");

    auto* ev = app.add_subcommand("evaluate", "Evaluate a scenario or a saved model on a feature table");
    std::string report_dir, scenario = "segmented", model_path;
    ev->add_option("--data", data_path, "Feature table")->required();
    ev->add_option("--scenario", scenario, "S, US or US+TL (segmented, unsegmented, finetune)");
    ev->add_option("--report-dir", report_dir, "Output directory (defaults to --out)");
    ev->add_option("--model", model_path, "Score this model instead of running a scenario");
    ev->add_option("--pretrained", pretrained, "Pretrained model or table for US+TL");

    auto* rep = app.add_subcommand("report", "Render summary tables from report directories");
    rep->add_option("--report-dir", report_dir, "Directory with scenario reports (defaults to --out)");

    auto* run = app.add_subcommand("run", "Run the full pipeline for a scenario");
    run->add_option("--scenario", scenario, "segmented, unsegmented, finetune or all");
    run->add_option("--pretrained", pretrained, "Pretrained model or table for the finetune scenario");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        PipelineConfig cfg = resolve(g);
        if (window_s) cfg.segment.window_s = *window_s;
        if (stride_s) cfg.segment.stride_s = *stride_s;

        if (cutoff_hz) cfg.preprocess.lowpass.cutoff_hz = *cutoff_hz;
        if (order) cfg.preprocess.lowpass.order = *order;
        if (!mode.empty()) cfg.preprocess.mode = mode == "forward" ? FilterMode::forward : FilterMode::zero_phase;
        if (!baseline_ms.empty()) {
            double w1 = 0, w2 = 0;
            char tail = 0;
            if (std::sscanf(baseline_ms.c_str(), "%lf,%lf%c", &w1, &w2, &tail) != 2 || !(w1 > 0) || !(w2 > w1))
                throw UsageError("--baseline-ms must look like 200,600 with the first window shorter");
            cfg.preprocess.baseline = {w1, w2};
        }

        if (*synth) {
            CohortConfig cc = cfg.synth;
            if (n_subjects) {
                // keep the configured class proportions
                auto scale = [&](std::size_t k) {
                    return static_cast<std::size_t>(std::llround(static_cast<double>(k) * static_cast<double>(*n_subjects) /
                                                                 static_cast<double>(cc.n_subjects)));
                };
                cc.n_smokers = scale(cc.n_smokers);
                cc.n_male = scale(cc.n_male);
                cc.n_subjects = *n_subjects;
            }
            if (duration) cc.duration_s = *duration;
            auto cohort = make_cohort(cc);
            write_cohort(cohort, need_out(g, "synth"));
            std::printf("wrote %zu recordings to %s\n", cohort.recordings.size(), g.out.c_str());
        } else if (*ingest) {
            auto man = load_manifest((fs::path(g.data_root) / "manifest.json").string());
            auto v = validate_dataset(man, g.data_root);
            nlohmann::json subj = nlohmann::json::array();
            for (const auto& s : v.subjects)
                subj.push_back({{"subject_id", s.subject_id},
                                {"duration_s", s.duration_s},
                                {"masked_fraction", s.masked_fraction},
                                {"metadata_complete", s.metadata_complete}});
            nlohmann::json j = {{"dataset", man.dataset_name},
                                {"version", man.version},
                                {"subjects", subj},
                                {"total_duration_s", v.total_duration_s},
                                {"errors", v.errors}};
            emit(g, j.dump(2) + "\n");
            if (!v.ok()) {
                for (const auto& e : v.errors) std::cerr << "error: " << e << '\n';
                return 3;
            }
        } else if (*prep || *delin) {
            auto out = need_out(g, prep->parsed() ? "preprocess" : "delineate");
            auto ds = load_dataset(g.data_root);
            auto analyses = analyze_dataset(ds, cfg);
            for (const auto& a : analyses) {
                auto path = (fs::path(out) / (a.subject_id + ".csv")).string();
                write_file(path, *prep ? format_recording(a.clean.signal) : format_fiducials(a.cycles));
                if (*prep) write_file((fs::path(out) / (a.subject_id + ".json")).string(), provenance_json(a));
            }
            std::printf("wrote %zu files to %s\n", analyses.size(), out.c_str());
        } else if (*feats) {
            auto out = need_out(g, "features");
            auto t = extract_features(g.data_root, scope_from_name(scope), cfg);
            write_dataset_csv(out, t.rows.data);
            write_file(fs::path(out).replace_extension(".exclusions.json").string(), format_counts(t.counts, t.rows));
            std::printf("%zu rows (%zu empty scopes, %zu rows with missing features dropped)\n", t.rows.data.rows(),
                        t.rows.dropped_empty, t.rows.dropped_missing);
        } else if (*seg) {
            auto ds = load_dataset(g.data_root);
            auto analyses = analyze_dataset(ds, cfg);
            std::string text;
            for (const auto& a : analyses) {
                auto s = format_segments(make_segments(a.clean.signal, cfg.segment));
                text += text.empty() ? s : s.substr(s.find('\n') + 1);
            }
            emit(g, text);
        } else if (*train) {
            auto out = need_out(g, "train");
            Dataset d = load_features(data_path);
            auto kind = model_kind_from_name(model_kind);
            if (!grid_path.empty()) {
                auto j = nlohmann::json::parse(read_file(grid_path), nullptr, false);
                if (j.is_discarded() || !j.is_object()) throw UsageError(grid_path + ": grid must be a JSON object");
                cfg.grids[kind] = j;
            }
            unsigned a = 0, b = 0, c = 0;
            char tail = 0;
            if (std::sscanf(split.c_str(), "%u/%u/%u%c", &a, &b, &c, &tail) != 3 || a + b + c != 100 || a == 0 || b == 0)
                throw UsageError("--split must look like 60/20/20 and sum to 100");
            cfg.split.train_fraction = a / 100.0;
            cfg.split.val_fraction = b / 100.0;
            cfg.models = {kind};
            auto res = evaluate_scenario(d, Scenario::segmented, cfg);
            write_scenario(out, res, d, cfg, dataset_hash(d));
            print_summary(res);
        } else if (*ft) {
            auto out = need_out(g, "finetune");
            Dataset d = load_features(data_path);
            if (!policy.empty()) {
                auto p = parse_policy(policy);
                cfg.finetune = p;
            }
            auto pre = load_pretrained(pretrained, d, cfg);
            auto m = finetune_model(pre.model, d, cfg.finetune, {cfg.threads});
            for (const auto& c : pre.dropped_columns) m.provenance.notes.push_back("dropped column " + c);
            save_model(out, m);
            std::printf("fine-tuned %s model on %zu rows -> %s\n", model_kind_name(m.spec.kind), d.rows(), out.c_str());
        } else if (*ev) {
            std::string dir = report_dir.empty() ? need_out(g, "evaluate") : report_dir;
            Dataset d = load_features(data_path);
            if (!model_path.empty()) {
                auto m = load_model(model_path);
                auto r = evaluate(m, d.select_columns(m.columns), cfg.histogram_bin_years);
                nlohmann::json j = {{"mse", r.mse}, {"r2", r.r2 ? nlohmann::json(*r.r2) : nlohmann::json(nullptr)},
                                    {"rows", r.rows.size()}};
                write_file((fs::path(dir) / "evaluation.json").string(), j.dump(2) + "\n");
                std::printf("MSE %.4f  R2 %s\n", r.mse, r.r2 ? std::to_string(*r.r2).c_str() : "n/a");
            } else {
                auto sc = scenario_from_name(scenario);
                std::optional<Pretrained> pre;
                if (!pretrained.empty()) pre = load_pretrained(pretrained, d, cfg);
                auto res = evaluate_scenario(d, sc, cfg, pre ? &*pre : nullptr);
                write_scenario(dir, res, d, cfg, dataset_hash(d));
                print_summary(res);
            }
        } else if (*rep) {
            std::string dir = report_dir.empty() ? need_out(g, "report") : report_dir;
            report_render(dir);
            std::printf("rendered %s/report.md\n", dir.c_str());
        } else if (*run) {
            auto out = need_out(g, "run");
            RunOptions opt{g.data_root, out, std::nullopt};
            if (!pretrained.empty()) opt.pretrained = pretrained;
            if (scenario == "all") {
                for (auto sc : {Scenario::segmented, Scenario::unsegmented, Scenario::finetune}) {
                    if (sc == Scenario::finetune && !opt.pretrained) continue;
                    RunOptions o = opt;
                    o.out_dir = (fs::path(out) / scenario_name(sc)).string();
                    print_summary(run_pipeline(cfg, sc, o));
                }
            } else {
                print_summary(run_pipeline(cfg, scenario_from_name(scenario), opt));
            }
            report_render(out);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
