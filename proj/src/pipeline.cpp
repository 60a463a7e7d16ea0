#include "ecgage/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

namespace ecgage {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Reads known keys from a JSON object and rejects the rest.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw UsageError("config: " + path_ + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw UsageError("config: bad value for " + path_ + "." + key + ": " + j_.at(key).dump());
        }
    }

    void get_opt(const char* key, std::optional<double>& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        const auto& v = j_.at(key);
        if (v.is_null()) out.reset();
        else if (v.is_number()) out = v.get<double>();
        else throw UsageError("config: bad value for " + path_ + "." + key + ": " + v.dump());
    }

    const json* sub(const char* key) {
        if (!j_.contains(key)) return nullptr;
        used_.insert(key);
        return &j_.at(key);
    }

    std::string path(const char* key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw UsageError("config: unknown key " + path_ + "." + k);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
    for (const auto& [name, v] : table)
        if (s == name) return v;
    throw UsageError(std::string("config: unknown ") + what + ": " + s);
}

const char* mode_name(FilterMode m) { return m == FilterMode::forward ? "forward" : "zero_phase"; }
const char* grouping_name(Grouping g) { return g == Grouping::by_row ? "by_row" : "by_subject"; }
const char* convention_name(StdConvention c) { return c == StdConvention::population ? "population" : "sample"; }

std::string policy_name(const FineTunePolicy& p) {
    return p.kind == FineTunePolicy::Kind::forest_augment ? "forest-augment" : "warm-start";
}

json default_grid(ModelKind k) {
    switch (k) {
        case ModelKind::linear: return json::object();
        case ModelKind::ridge: return {{"ridge_lambda", {0.01, 0.1, 1.0, 10.0, 100.0}}};
        case ModelKind::tree: return {{"tree_max_depth", {4, 8, nullptr}}, {"tree_min_leaf", {1, 3}}};
        case ModelKind::forest:
            return {{"forest_max_features", {4, 7, 11}}, {"forest_n_trees", {100}}, {"tree_min_leaf", {2}}};
    }
    return json::object();
}

template <class F>
auto in_stage(const char* stage, const std::string& subject, F&& fn) {
    const std::string where = std::string(stage) + (subject.empty() ? "" : " [" + subject + "]") + ": ";
    try {
        return fn();
    } catch (const DataError& e) {
        throw DataError(where + e.what());
    } catch (const NumericError& e) {
        throw NumericError(where + e.what());
    }
}

std::string fmt(double v, int digits = 4) {
    if (!std::isfinite(v)) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json histogram_json(const Histogram& h) {
    json bins = json::array();
    for (std::size_t i = 0; i < h.counts.size(); ++i)
        bins.push_back({{"lower", h.lower_edge(i)}, {"upper", h.lower_edge(i) + h.bin_width}, {"count", h.counts[i]}});
    return {{"bin_width", h.bin_width}, {"bins", bins}};
}

json correlation_json(const CorrelationReport& r) {
    json e = json::array();
    for (const auto& c : r.entries) e.push_back({{"feature", c.feature}, {"r", opt_json(c.r)}});
    return {{"target", target_name(r.target)}, {"method", r.spearman ? "spearman" : "pearson"}, {"entries", e}};
}

std::string correlation_csv(const CorrelationReport& r) {
    std::ostringstream os;
    os << "feature,r\n";
    for (const auto& c : r.entries) os << c.feature << ',' << (c.r ? format_double(*c.r) : "NaN") << '\n';
    return os.str();
}

json groups_json(const std::optional<GroupStatsReport>& g) {
    if (!g) return {{"available", false}};
    json e = json::array();
    for (const auto& x : g->entries)
        e.push_back({{"feature", x.feature},
                     {"mean_smoker", x.mean_smoker},
                     {"std_smoker", x.std_smoker},
                     {"mean_nonsmoker", x.mean_nonsmoker},
                     {"std_nonsmoker", x.std_nonsmoker},
                     {"d", opt_json(x.d)}});
    return {{"available", true}, {"n_smoker", g->n_smoker}, {"n_nonsmoker", g->n_nonsmoker}, {"entries", e}};
}

std::string groups_csv(const std::optional<GroupStatsReport>& g) {
    std::ostringstream os;
    os << "feature,mean_smoker,std_smoker,mean_nonsmoker,std_nonsmoker,d\n";
    if (g)
        for (const auto& x : g->entries)
            os << x.feature << ',' << format_double(x.mean_smoker) << ',' << format_double(x.std_smoker) << ','
               << format_double(x.mean_nonsmoker) << ',' << format_double(x.std_nonsmoker) << ','
               << (x.d ? format_double(*x.d) : "NaN") << '\n';
    return os.str();
}

json outcome_json(const ModelOutcome& o) {
    json selected = json::array();
    for (const auto& s : o.selected) selected.push_back(spec_to_json(s));
    json folds = json::array();
    for (const auto& f : o.report.folds) folds.push_back({{"mse", f.mse}, {"r2", opt_json(f.r2)}, {"rows", f.rows}});
    json board = json::array();
    for (const auto& e : o.grid.leaderboard) board.push_back({{"spec", spec_to_json(e.spec)}, {"score", e.score}});
    return {{"label", o.label},
            {"kind", model_kind_name(o.kind)},
            {"mse", o.report.mse},
            {"r2", opt_json(o.report.r2)},
            {"rows", o.report.rows.size()},
            {"selected", selected},
            {"folds", folds},
            {"leaderboard", board},
            {"histogram", histogram_json(o.report.histogram)}};
}

std::string read_required(const fs::path& p) {
    try {
        return read_file(p.string());
    } catch (const std::exception&) {
        throw DataError("missing report artifact: " + p.string());
    }
}

}  // namespace

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::segmented: return "segmented";
        case Scenario::unsegmented: return "unsegmented";
        case Scenario::finetune: return "finetune";
    }
    return "?";
}

Scenario scenario_from_name(std::string_view n) {
    if (n == "segmented" || n == "S") return Scenario::segmented;
    if (n == "unsegmented" || n == "US") return Scenario::unsegmented;
    if (n == "finetune" || n == "US+TL") return Scenario::finetune;
    throw UsageError("unknown scenario: " + std::string(n));
}

Scope scope_from_name(std::string_view n) {
    if (n == "segmented") return Scope::segmented;
    if (n == "full") return Scope::full;
    throw UsageError("unknown scope: " + std::string(n));
}

PipelineConfig default_config() {
    PipelineConfig c;
    for (auto k : {ModelKind::linear, ModelKind::ridge, ModelKind::tree, ModelKind::forest}) c.grids[k] = default_grid(k);
    apply_seed(c, c.seed);
    return c;
}

void apply_seed(PipelineConfig& c, std::uint64_t seed) {
    c.seed = seed;
    c.split.seed = seed;
    c.pretrain.seed = seed;
    c.synth.seed = seed;
}

CohortConfig parse_cohort_config(const json& j, CohortConfig c) {
    Reader r(j, "synth");
    r.get("n_subjects", c.n_subjects);
    r.get("duration_s", c.duration_s);
    r.get("fs_hz", c.fs_hz);
    r.get("n_smokers", c.n_smokers);
    r.get("n_male", c.n_male);
    r.get("age_min", c.age_min);
    r.get("age_max", c.age_max);
    r.get("age_noise_fraction", c.age_noise_fraction);
    r.get("qt_min_ms", c.qt_min_ms);
    r.get("qt_max_ms", c.qt_max_ms);
    r.get("hr_min_bpm", c.hr_min_bpm);
    r.get("hr_max_bpm", c.hr_max_bpm);
    r.get("smoker_hr_increase_bpm", c.smoker_hr_increase_bpm);
    r.get("rr_jitter_ms", c.rr_jitter_ms);
    r.get("smoker_rr_jitter_ms", c.smoker_rr_jitter_ms);
    r.get_opt("noise_snr_db", c.noise_snr_db);
    r.get("seed", c.seed);
    r.finish();
    return c;
}

json cohort_config_to_json(const CohortConfig& c) {
    return {{"n_subjects", c.n_subjects},
            {"duration_s", c.duration_s},
            {"fs_hz", c.fs_hz},
            {"n_smokers", c.n_smokers},
            {"n_male", c.n_male},
            {"age_min", c.age_min},
            {"age_max", c.age_max},
            {"age_noise_fraction", c.age_noise_fraction},
            {"qt_min_ms", c.qt_min_ms},
            {"qt_max_ms", c.qt_max_ms},
            {"hr_min_bpm", c.hr_min_bpm},
            {"hr_max_bpm", c.hr_max_bpm},
            {"smoker_hr_increase_bpm", c.smoker_hr_increase_bpm},
            {"rr_jitter_ms", c.rr_jitter_ms},
            {"smoker_rr_jitter_ms", c.smoker_rr_jitter_ms},
            {"noise_snr_db", opt_json(c.noise_snr_db)}};
}

PipelineConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: not valid JSON: ") + e.what());
    }
    PipelineConfig c = default_config();
    Reader top(j, "config");
    int version = kConfigVersion;
    top.get("config_version", version);
    if (version != kConfigVersion) throw UsageError("config: unsupported config_version " + std::to_string(version));
    std::uint64_t seed = c.seed;
    top.get("seed", seed);
    apply_seed(c, seed);

    if (auto* p = top.sub("preprocess")) {
        Reader r(*p, top.path("preprocess"));
        r.get("lowpass_hz", c.preprocess.lowpass.cutoff_hz);
        r.get("lowpass_order", c.preprocess.lowpass.order);
        std::string mode = mode_name(c.preprocess.mode);
        r.get("filter_mode", mode);
        c.preprocess.mode = enum_from<FilterMode>(mode, {{"forward", FilterMode::forward}, {"zero_phase", FilterMode::zero_phase}}, "filter_mode");
        r.get("baseline_stage1_ms", c.preprocess.baseline.stage1_window_ms);
        r.get("baseline_stage2_ms", c.preprocess.baseline.stage2_window_ms);
        r.get("flat_run_ms", c.preprocess.anomaly.flat_run_ms);
        r.get("excursion_sd", c.preprocess.anomaly.excursion_sd);
        r.finish();
    }
    if (auto* p = top.sub("delineation")) {
        Reader r(*p, top.path("delineation"));
        auto& d = c.delineation;
        r.get("rpeak_band_low_hz", d.rpeak.band_low_hz);
        r.get("rpeak_band_high_hz", d.rpeak.band_high_hz);
        r.get("rpeak_band_order", d.rpeak.band_order);
        r.get("rpeak_integration_ms", d.rpeak.integration_ms);
        r.get("rpeak_threshold_fraction", d.rpeak.threshold_fraction);
        r.get("rpeak_energy_history", d.rpeak.energy_history);
        r.get("rpeak_refractory_ms", d.rpeak.refractory_ms);
        r.get("rpeak_snap_ms", d.rpeak.snap_ms);
        r.get("qrs_wavelet_level", d.qrs_wavelet_level);
        r.get("qrs_search_ms", d.qrs_search_ms);
        r.get("qrs_secondary_ms", d.qrs_secondary_ms);
        r.get("qrs_slope_fraction", d.qrs_slope_fraction);
        r.get("t_start_after_qrs_ms", d.t_start_after_qrs_ms);
        r.get("t_end_rr_fraction", d.t_end_rr_fraction);
        r.get("p_start_before_r_ms", d.p_start_before_r_ms);
        r.get("p_end_before_qrs_ms", d.p_end_before_qrs_ms);
        r.get("boundary_fraction", d.boundary_fraction);
        r.get("min_wave_amplitude", d.min_wave_amplitude);
        r.get("baseline_window_ms", d.baseline_window_ms);
        r.get("edge_search_ms", d.edge_search_ms);
        r.finish();
    }
    if (auto* p = top.sub("segment")) {
        Reader r(*p, top.path("segment"));
        r.get("window_s", c.segment.window_s);
        r.get("stride_s", c.segment.stride_s);
        r.finish();
    }
    if (auto* p = top.sub("features")) {
        Reader r(*p, top.path("features"));
        std::string conv = convention_name(c.hrv);
        r.get("hrv_std", conv);
        c.hrv = enum_from<StdConvention>(conv, {{"population", StdConvention::population}, {"sample", StdConvention::sample}}, "hrv_std");
        r.get("demographics", c.demographics);
        r.get("sex_male", c.sex.male);
        r.get("sex_female", c.sex.female);
        r.finish();
        for (const auto& d : c.demographics) demographic_value(SubjectMetadata{}, d, c.sex);
    }
    if (auto* p = top.sub("split")) {
        Reader r(*p, top.path("split"));
        std::string g = grouping_name(c.split.grouping);
        r.get("grouping", g);
        c.split.grouping = enum_from<Grouping>(g, {{"by_row", Grouping::by_row}, {"by_subject", Grouping::by_subject}}, "grouping");
        r.get("train_fraction", c.split.train_fraction);
        r.get("val_fraction", c.split.val_fraction);
        r.get("cv_folds", c.cv_folds);
        r.finish();
        holdout_sizes(10, c.split);
        if (c.cv_folds < 2) throw UsageError("config: split.cv_folds must be >= 2");
    }
    if (auto* p = top.sub("models")) {
        Reader r(*p, top.path("models"));
        if (auto* k = r.sub("kinds")) {
            if (!k->is_array() || k->empty()) throw UsageError("config: models.kinds must be a nonempty array");
            c.models.clear();
            for (const auto& v : *k) {
                if (!v.is_string()) throw UsageError("config: models.kinds entries must be strings");
                c.models.push_back(model_kind_from_name(v.get<std::string>()));
            }
        }
        if (auto* g = r.sub("grids")) {
            Reader gr(*g, r.path("grids"));
            for (auto k : {ModelKind::linear, ModelKind::ridge, ModelKind::tree, ModelKind::forest})
                if (auto* e = gr.sub(model_kind_name(k))) {
                    if (!e->is_object()) throw UsageError(std::string("config: grid for ") + model_kind_name(k) + " must be an object");
                    c.grids[k] = *e;
                }
            gr.finish();
        }
        r.finish();
    }
    if (auto* p = top.sub("pretrain")) {
        if (p->contains("seed")) throw UsageError("config: pretrain.seed is set by the top-level seed");
        c.pretrain = spec_from_json(*p, c.pretrain);
    }
    if (auto* p = top.sub("finetune")) {
        Reader r(*p, top.path("finetune"));
        std::string name = policy_name(c.finetune);
        r.get("policy", name);
        auto parsed = parse_policy(name);
        c.finetune.kind = parsed.kind;
        if (auto* k = r.sub("k")) {
            if (k->is_null()) c.finetune.new_trees.reset();
            else if (k->is_number_integer() && k->get<int>() > 0) c.finetune.new_trees = k->get<int>();
            else throw UsageError("config: finetune.k must be a positive integer or null");
        }
        r.get("w", c.finetune.weight);
        r.get("iters", c.finetune.iterations);
        r.finish();
        if (!(c.finetune.weight >= 0 && c.finetune.weight <= 1)) throw UsageError("config: finetune.w must lie in [0, 1]");
    }
    if (auto* p = top.sub("report")) {
        Reader r(*p, top.path("report"));
        r.get("histogram_bin_years", c.histogram_bin_years);
        std::string corr = c.spearman ? "spearman" : "pearson";
        r.get("correlation", corr);
        c.spearman = enum_from<bool>(corr, {{"pearson", false}, {"spearman", true}}, "correlation");
        r.finish();
        if (!(c.histogram_bin_years > 0)) throw UsageError("config: report.histogram_bin_years must be positive");
    }
    if (auto* p = top.sub("synth")) {
        if (p->contains("seed")) throw UsageError("config: synth.seed is set by the top-level seed");
        c.synth = parse_cohort_config(*p, c.synth);
    }
    top.finish();
    for (auto k : c.models) expand_grid(c, k);  // validates grids
    return c;
}

PipelineConfig load_config(const std::string& path) {
    try {
        return parse_config(read_file(path));
    } catch (const UsageError& e) {
        throw UsageError(path + ": " + e.what());
    }
}

std::string format_config(const PipelineConfig& c) {
    const auto& d = c.delineation;
    json grids = json::object();
    for (const auto& [k, g] : c.grids) grids[model_kind_name(k)] = g;
    json kinds = json::array();
    for (auto k : c.models) kinds.push_back(model_kind_name(k));
    json pre = spec_to_json(c.pretrain);
    pre.erase("seed");
    json j = {
        {"config_version", kConfigVersion},
        {"seed", c.seed},
        {"preprocess",
         {{"lowpass_hz", c.preprocess.lowpass.cutoff_hz},
          {"lowpass_order", c.preprocess.lowpass.order},
          {"filter_mode", mode_name(c.preprocess.mode)},
          {"baseline_stage1_ms", c.preprocess.baseline.stage1_window_ms},
          {"baseline_stage2_ms", c.preprocess.baseline.stage2_window_ms},
          {"flat_run_ms", c.preprocess.anomaly.flat_run_ms},
          {"excursion_sd", c.preprocess.anomaly.excursion_sd}}},
        {"delineation",
         {{"rpeak_band_low_hz", d.rpeak.band_low_hz},
          {"rpeak_band_high_hz", d.rpeak.band_high_hz},
          {"rpeak_band_order", d.rpeak.band_order},
          {"rpeak_integration_ms", d.rpeak.integration_ms},
          {"rpeak_threshold_fraction", d.rpeak.threshold_fraction},
          {"rpeak_energy_history", d.rpeak.energy_history},
          {"rpeak_refractory_ms", d.rpeak.refractory_ms},
          {"rpeak_snap_ms", d.rpeak.snap_ms},
          {"qrs_wavelet_level", d.qrs_wavelet_level},
          {"qrs_search_ms", d.qrs_search_ms},
          {"qrs_secondary_ms", d.qrs_secondary_ms},
          {"qrs_slope_fraction", d.qrs_slope_fraction},
          {"t_start_after_qrs_ms", d.t_start_after_qrs_ms},
          {"t_end_rr_fraction", d.t_end_rr_fraction},
          {"p_start_before_r_ms", d.p_start_before_r_ms},
          {"p_end_before_qrs_ms", d.p_end_before_qrs_ms},
          {"boundary_fraction", d.boundary_fraction},
          {"min_wave_amplitude", d.min_wave_amplitude},
          {"baseline_window_ms", d.baseline_window_ms},
          {"edge_search_ms", d.edge_search_ms}}},
        {"segment", {{"window_s", c.segment.window_s}, {"stride_s", c.segment.stride_s}}},
        {"features",
         {{"hrv_std", convention_name(c.hrv)},
          {"demographics", c.demographics},
          {"sex_male", c.sex.male},
          {"sex_female", c.sex.female}}},
        {"split",
         {{"grouping", grouping_name(c.split.grouping)},
          {"train_fraction", c.split.train_fraction},
          {"val_fraction", c.split.val_fraction},
          {"cv_folds", c.cv_folds}}},
        {"models", {{"kinds", kinds}, {"grids", grids}}},
        {"pretrain", pre},
        {"finetune",
         {{"policy", policy_name(c.finetune)},
          {"k", c.finetune.new_trees ? json(*c.finetune.new_trees) : json(nullptr)},
          {"w", c.finetune.weight},
          {"iters", c.finetune.iterations}}},
        {"report", {{"histogram_bin_years", c.histogram_bin_years}, {"correlation", c.spearman ? "spearman" : "pearson"}}},
        {"synth", cohort_config_to_json(c.synth)},
    };
    return j.dump(2) + "\n";
}

std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a64(format_config(c))); }

std::vector<ModelSpec> expand_grid(const PipelineConfig& cfg, ModelKind kind) {
    ModelSpec base;
    base.kind = kind;
    base.seed = cfg.seed;
    auto it = cfg.grids.find(kind);
    json g = it == cfg.grids.end() ? json::object() : it->second;
    if (g.contains("kind") || g.contains("seed"))
        throw UsageError(std::string("config: grid for ") + model_kind_name(kind) + " may not set kind or seed");
    std::vector<std::pair<std::string, json>> axes;
    for (const auto& [k, v] : g.items()) {
        if (!v.is_array() || v.empty())
            throw UsageError("config: grid values for " + k + " must be a nonempty array");
        axes.emplace_back(k, v);
    }
    std::vector<ModelSpec> out;
    std::vector<std::size_t> pos(axes.size(), 0);
    while (true) {
        json point = json::object();
        for (std::size_t a = 0; a < axes.size(); ++a) point[axes[a].first] = axes[a].second[pos[a]];
        out.push_back(spec_from_json(point, base));
        std::size_t a = axes.size();
        while (a > 0) {
            --a;
            if (++pos[a] < axes[a].second.size()) break;
            pos[a] = 0;
            if (a == 0) return out;
        }
        if (axes.empty()) return out;
    }
}

SubjectAnalysis analyze_recording(const EcgRecording& rec, const PipelineConfig& cfg) {
    SubjectAnalysis a;
    a.subject_id = rec.subject_id;
    const auto& id = rec.subject_id;
    a.clean = in_stage("preprocess", id, [&] { return preprocess(rec, cfg.preprocess); });
    a.r_peaks = in_stage("r-peak detection", id, [&] { return detect_r_peaks(a.clean, cfg.delineation.rpeak); });
    a.cycles = in_stage("delineation", id, [&] { return delineate_cycles(a.clean, a.r_peaks, cfg.delineation); });
    in_stage("anomaly excision", id, [&] {
        excise_anomalies(a.clean, a.cycles, cfg.preprocess.anomaly, &a.excision);
        return 0;
    });
    std::set<std::size_t> masked(a.excision.masked_cycles.begin(), a.excision.masked_cycles.end());
    for (std::size_t i = 0; i < a.cycles.size(); ++i)
        if (!masked.count(i)) a.usable_cycles.push_back(a.cycles[i]);
    a.cycle_features = in_stage("features", id, [&] {
        return interval_features(a.usable_cycles, rec.sampling_rate_hz);
    });
    return a;
}

std::vector<ScopeFeatures> scope_features(const SubjectAnalysis& a, Scope scope, const PipelineConfig& cfg,
                                          ScopeCounts* counts) {
    ScopeCounts local;
    ScopeCounts& n = counts ? *counts : local;
    n.subject_id = a.subject_id;
    n.cycles = a.cycles.size();
    n.masked_cycles = a.excision.masked_cycles.size();
    std::vector<ScopeFeatures> out;
    if (scope == Scope::full) {
        n.segments = 1;
        ScopeFeatures s{a.subject_id, "full", std::nullopt};
        if (!a.excision.unusable) s.features = aggregate(a.cycle_features, cfg.hrv);
        out.push_back(std::move(s));
        return out;
    }
    auto segs = in_stage("segment", a.subject_id, [&] { return make_segments(a.clean.signal, cfg.segment); });
    n.segments = segs.size();
    const double fs = a.clean.signal.sampling_rate_hz;
    for (const auto& seg : segs) {
        if (seg.excluded) {
            ++n.excluded_segments;
            continue;
        }
        auto [b, e] = segment_samples(seg, fs);
        std::vector<EcgFeatures> inside;
        for (std::size_t i = 0; i < a.usable_cycles.size(); ++i) {
            const std::size_t r = a.usable_cycles[i].r_peak();
            if (r >= b && r < e) inside.push_back(a.cycle_features[i]);
        }
        out.push_back({a.subject_id, std::to_string(seg.segment_id), aggregate(inside, cfg.hrv)});
    }
    return out;
}

std::vector<SubjectAnalysis> analyze_dataset(const LoadedDataset& ds, const PipelineConfig& cfg) {
    std::vector<SubjectAnalysis> out(ds.recordings.size());
    parallel_for(out.size(), cfg.threads, [&](std::size_t i) { out[i] = analyze_recording(ds.recordings[i], cfg); });
    return out;
}

FeatureTable build_feature_table(const LoadedDataset& ds, const std::vector<SubjectAnalysis>& analyses, Scope scope,
                                 const PipelineConfig& cfg) {
    FeatureTable t;
    std::vector<ScopeFeatures> scopes;
    for (const auto& a : analyses) {
        ScopeCounts c;
        auto s = scope_features(a, scope, cfg, &c);
        scopes.insert(scopes.end(), s.begin(), s.end());
        t.counts.push_back(c);
    }
    t.rows = in_stage("features", "", [&] { return assemble_rows(scopes, ds.metadata, cfg.demographics, cfg.sex); });
    return t;
}

std::string dataset_fingerprint(const std::string& root, const std::string& manifest_name) {
    const fs::path r(root);
    std::string man_text = read_file((r / manifest_name).string());
    auto man = parse_manifest(man_text);
    std::uint64_t h = fnv1a64(man_text);
    h = fnv1a64(read_file((r / man.metadata_path).string()), h);
    for (const auto& e : man.entries) h = fnv1a64(read_file((r / e.recording_path).string()), h);
    return hex64(h);
}

FeatureTable extract_features(const std::string& data_root, Scope scope, const PipelineConfig& cfg) {
    auto ds = in_stage("ingest", "", [&] { return load_dataset(data_root); });
    auto analyses = analyze_dataset(ds, cfg);
    auto t = build_feature_table(ds, analyses, scope, cfg);
    t.data_hash = dataset_fingerprint(data_root);
    return t;
}

std::string format_counts(const std::vector<ScopeCounts>& counts, const AssembledRows& rows) {
    json subjects = json::array();
    std::size_t segs = 0, excl = 0, cyc = 0, masked = 0;
    for (const auto& c : counts) {
        subjects.push_back({{"subject_id", c.subject_id},
                            {"cycles", c.cycles},
                            {"masked_cycles", c.masked_cycles},
                            {"segments", c.segments},
                            {"excluded_segments", c.excluded_segments}});
        segs += c.segments;
        excl += c.excluded_segments;
        cyc += c.cycles;
        masked += c.masked_cycles;
    }
    json j = {{"subjects", subjects},
              {"totals",
               {{"cycles", cyc},
                {"masked_cycles", masked},
                {"segments", segs},
                {"excluded_segments", excl},
                {"rows_emitted", rows.data.rows()},
                {"dropped_empty", rows.dropped_empty},
                {"dropped_missing", rows.dropped_missing}}}};
    return j.dump(2) + "\n";
}

Pretrained load_pretrained(const std::string& path, const Dataset& target, const PipelineConfig& cfg) {
    Pretrained p;
    p.source = path;
    if (fs::path(path).extension() == ".json") {
        p.model = load_model(path);
        for (const auto& c : p.model.columns)
            if (!target.column_index(c)) throw DataError("pretrained model needs column " + c + " missing from the data");
        for (const auto& c : target.columns)
            if (std::find(p.model.columns.begin(), p.model.columns.end(), c) == p.model.columns.end())
                p.dropped_columns.push_back(c);
        return p;
    }
    Dataset pre = load_dataset_csv(path);
    std::vector<std::string> shared;
    for (const auto& c : pre.columns) {
        if (target.column_index(c)) shared.push_back(c);
        else p.dropped_columns.push_back(c);
    }
    for (const auto& c : target.columns)
        if (!pre.column_index(c)) p.dropped_columns.push_back(c);
    if (shared.empty()) throw DataError("pretrain and fine-tune datasets share no feature columns");
    p.model = fit_model(pre.select_columns(shared), cfg.pretrain, {cfg.threads});
    return p;
}

ScenarioResult evaluate_scenario(const Dataset& d, Scenario scenario, const PipelineConfig& cfg,
                                 const Pretrained* pretrained) {
    if (d.rows() == 0) throw DataError("no feature rows to evaluate");
    const FitOptions fit{cfg.threads};
    ScenarioResult res;
    res.scenario = scenario;
    res.rows = d.rows();
    const double bw = cfg.histogram_bin_years;

    if (scenario == Scenario::segmented) {
        SplitPlan plan = cfg.split;
        plan.kind = SplitKind::holdout;
        auto h = holdout_split(d, plan);
        res.train_rows = h.train.size();
        res.val_rows = h.val.size();
        res.test_rows = h.test.size();
        Dataset train = d.subset(h.train), val = d.subset(h.val), test = d.subset(h.test);
        if (val.rows() == 0 || test.rows() == 0) throw DataError("holdout split left an empty validation or test part");
        for (auto kind : cfg.models) {
            ModelOutcome o;
            o.kind = kind;
            o.label = model_kind_name(kind);
            o.grid = in_stage("train", o.label, [&] { return grid_search(expand_grid(cfg, kind), train, val, fit); });
            o.selected = {o.grid.best_spec()};
            o.model = in_stage("train", o.label, [&] { return fit_model(train, o.grid.best_spec(), fit); });
            o.report = in_stage("evaluate", o.label, [&] { return evaluate(o.model, test, bw); });
            res.outcomes.push_back(std::move(o));
        }
    } else {
        if (scenario == Scenario::finetune && !pretrained)
            throw UsageError("the finetune scenario needs --pretrained");
        SplitPlan plan = cfg.split;
        plan.kind = SplitKind::kfold;
        plan.k = cfg.cv_folds;
        auto pairs = fold_pairs(kfold_split(d, plan), d.rows());
        auto inner_folds = [&](const Dataset& tr, std::size_t f) {
            SplitPlan ip = plan;
            ip.seed = derive_seed(cfg.seed, f + 1);
            ip.k = std::min<int>(cfg.cv_folds, static_cast<int>(tr.subjects().size()));
            if (ip.grouping == Grouping::by_row) ip.k = std::min<int>(ip.k, static_cast<int>(tr.rows()));
            return fold_pairs(kfold_split(tr, ip), tr.rows());
        };
        std::vector<ModelKind> kinds = cfg.models;
        if (scenario == Scenario::finetune) kinds = {pretrained->model.spec.kind};
        for (auto kind : kinds) {
            ModelOutcome o;
            o.kind = kind;
            o.label = model_kind_name(kind);
            std::vector<EvalReport> reports;
            if (scenario == Scenario::finetune) {
                o.label += "+tl";
                for (std::size_t f = 0; f < pairs.size(); ++f) {
                    Dataset tr = d.subset(pairs[f].first), te = d.subset(pairs[f].second);
                    auto m = in_stage("finetune", o.label, [&] { return finetune_model(pretrained->model, tr, cfg.finetune, fit); });
                    reports.push_back(in_stage("evaluate", o.label, [&] { return evaluate(m, te.select_columns(m.columns), bw); }));
                    o.selected.push_back(m.spec);
                }
                o.model = in_stage("finetune", o.label, [&] { return finetune_model(pretrained->model, d, cfg.finetune, fit); });
            } else {
                auto grid = expand_grid(cfg, kind);
                for (std::size_t f = 0; f < pairs.size(); ++f) {
                    Dataset tr = d.subset(pairs[f].first), te = d.subset(pairs[f].second);
                    ModelSpec best = grid.front();
                    if (grid.size() > 1)
                        best = in_stage("train", o.label, [&] { return grid_search_cv(grid, tr, inner_folds(tr, f), fit); }).best_spec();
                    auto m = in_stage("train", o.label, [&] { return fit_model(tr, best, fit); });
                    reports.push_back(in_stage("evaluate", o.label, [&] { return evaluate(m, te, bw); }));
                    o.selected.push_back(best);
                }
                o.grid = in_stage("train", o.label, [&] { return grid_search_cv(grid, d, pairs, fit); });
                o.model = in_stage("train", o.label, [&] { return fit_model(d, o.grid.best_spec(), fit); });
            }
            o.report = pool_reports(reports, bw);
            res.outcomes.push_back(std::move(o));
        }
        if (scenario == Scenario::finetune) {
            res.notes.push_back("pretrained source: " + fs::path(pretrained->source).filename().string());
            for (const auto& c : pretrained->dropped_columns) res.notes.push_back("dropped column " + c);
        }
    }

    res.corr_age = in_stage("correlation", "", [&] { return pearson_matrix(d, Target::age, cfg.spearman); });
    res.corr_smoker = in_stage("correlation", "", [&] { return pearson_matrix(d, Target::smoker, cfg.spearman); });
    try {
        res.groups = group_stats(d);
    } catch (const DataError& e) {
        res.notes.push_back(std::string("group statistics unavailable: ") + e.what());
    }
    return res;
}

void write_scenario(const std::string& dir, const ScenarioResult& res, const Dataset& d, const PipelineConfig& cfg,
                    const std::string& data_hash) {
    const fs::path out(dir);
    std::vector<std::string> artifacts;
    auto put = [&](const std::string& name, const std::string& text) {
        write_file((out / name).string(), text);
        artifacts.push_back(name);
    };
    put("config.json", format_config(cfg));
    put("features.csv", format_dataset(d));

    json models = json::array();
    for (const auto& o : res.outcomes) {
        models.push_back(outcome_json(o));
        std::ostringstream pred;
        pred << "subject_id,segment_id,truth,predicted,error\n";
        for (const auto& r : o.report.rows)
            pred << r.subject_id << ',' << r.segment_id << ',' << format_double(r.truth) << ','
                 << format_double(r.predicted) << ',' << format_double(r.predicted - r.truth) << '\n';
        put("predictions_" + o.label + ".csv", pred.str());
        std::ostringstream hist;
        hist << "lower,upper,count\n";
        const auto& h = o.report.histogram;
        for (std::size_t i = 0; i < h.counts.size(); ++i)
            hist << format_double(h.lower_edge(i)) << ',' << format_double(h.lower_edge(i) + h.bin_width) << ','
                 << h.counts[i] << '\n';
        put("histogram_" + o.label + ".csv", hist.str());
        std::ostringstream board;
        board << "rank,score,spec\n";
        std::vector<std::size_t> order(o.grid.leaderboard.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return o.grid.leaderboard[a].score < o.grid.leaderboard[b].score;
        });
        for (std::size_t r = 0; r < order.size(); ++r)
            board << r + 1 << ',' << format_double(o.grid.leaderboard[order[r]].score) << ','
                  << describe(o.grid.leaderboard[order[r]].spec) << '\n';
        put("leaderboard_" + o.label + ".csv", board.str());
        put("model_" + o.label + ".json", serialize_model(o.model));
    }
    json split = res.scenario == Scenario::segmented
                     ? json{{"kind", "holdout"}, {"train", res.train_rows}, {"val", res.val_rows}, {"test", res.test_rows},
                            {"grouping", grouping_name(cfg.split.grouping)}}
                     : json{{"kind", "kfold"}, {"k", cfg.cv_folds}, {"grouping", grouping_name(cfg.split.grouping)}};
    json metrics = {{"scenario", scenario_name(res.scenario)},
                    {"rows", res.rows},
                    {"split", split},
                    {"models", models},
                    {"notes", res.notes}};
    put("metrics.json", metrics.dump(2) + "\n");
    put("correlation_age.json", correlation_json(res.corr_age).dump(2) + "\n");
    put("correlation_age.csv", correlation_csv(res.corr_age));
    put("correlation_smoker.json", correlation_json(res.corr_smoker).dump(2) + "\n");
    put("correlation_smoker.csv", correlation_csv(res.corr_smoker));
    put("group_stats.json", groups_json(res.groups).dump(2) + "\n");
    put("group_stats.csv", groups_csv(res.groups));

    std::sort(artifacts.begin(), artifacts.end());
    json manifest = {{"scenario", scenario_name(res.scenario)},
                     {"seed", cfg.seed},
                     {"config_hash", config_hash(cfg)},
                     {"data_hash", data_hash},
                     {"features_hash", dataset_hash(d)},
                     {"artifacts", artifacts}};
    write_file((out / "run_manifest.json").string(), manifest.dump(2) + "\n");
}

ScenarioResult run_pipeline(const PipelineConfig& cfg, Scenario scenario, const RunOptions& opt) {
    if (scenario == Scenario::finetune && !opt.pretrained) throw UsageError("the finetune scenario needs --pretrained");
    auto scope = scenario == Scenario::segmented ? Scope::segmented : Scope::full;
    auto table = extract_features(opt.data_root, scope, cfg);
    std::optional<Pretrained> pre;
    if (opt.pretrained)
        pre = in_stage("pretrain", "", [&] { return load_pretrained(*opt.pretrained, table.rows.data, cfg); });
    auto res = evaluate_scenario(table.rows.data, scenario, cfg, pre ? &*pre : nullptr);
    write_scenario(opt.out_dir, res, table.rows.data, cfg, table.data_hash);
    write_file((fs::path(opt.out_dir) / "exclusions.json").string(), format_counts(table.counts, table.rows));
    return res;
}

void report_render(const std::string& dir) {
    static const char* const kRequired[] = {"metrics.json", "correlation_age.json", "correlation_smoker.json",
                                            "group_stats.json", "run_manifest.json"};
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw DataError("report directory not found: " + dir);
    std::vector<fs::path> scenario_dirs;
    if (fs::exists(root / "metrics.json")) {
        scenario_dirs.push_back(root);
    } else {
        for (const auto& e : fs::directory_iterator(root))
            if (e.is_directory() && fs::exists(e.path() / "metrics.json")) scenario_dirs.push_back(e.path());
        std::sort(scenario_dirs.begin(), scenario_dirs.end());
    }
    if (scenario_dirs.empty()) {
        std::string missing;
        for (const char* f : kRequired) missing += std::string(missing.empty() ? "" : ", ") + f;
        throw DataError("no reports under " + dir + "; missing artifacts: " + missing);
    }
    for (const auto& s : scenario_dirs) {
        std::string missing;
        for (const char* f : kRequired)
            if (!fs::exists(s / f)) missing += std::string(missing.empty() ? "" : ", ") + f;
        if (!missing.empty()) throw DataError("incomplete report in " + s.string() + "; missing artifacts: " + missing);
    }

    std::ostringstream md, table, hist, corr;
    table << "scenario,model,mse,r2\n";
    hist << "scenario,model,lower,upper,count\n";
    corr << "scenario,target,feature,r\n";
    md << "# Results\n";

    struct Cell {
        double mse;
        std::optional<double> r2;
    };
    std::vector<std::string> scenarios;
    std::map<std::string, std::map<std::string, Cell>> grid;  // model kind -> scenario -> cell
    std::vector<std::string> kinds;

    for (const auto& s : scenario_dirs) {
        json m = json::parse(read_required(s / "metrics.json"));
        const std::string sc = m.at("scenario").get<std::string>();
        scenarios.push_back(sc);
        md << "\n## " << sc << "\n\n" << m.at("rows").get<std::size_t>() << " rows";
        const auto& sp = m.at("split");
        if (sp.at("kind") == "holdout")
            md << ", holdout " << sp.at("train").get<std::size_t>() << "/" << sp.at("val").get<std::size_t>() << "/"
               << sp.at("test").get<std::size_t>() << " (" << sp.at("grouping").get<std::string>() << ")";
        else
            md << ", " << sp.at("k").get<int>() << "-fold cross-validation (" << sp.at("grouping").get<std::string>() << ")";
        md << "\n\n| model | MSE | R2 | selected |\n|---|---|---|---|\n";
        for (const auto& o : m.at("models")) {
            const std::string label = o.at("label").get<std::string>();
            const std::string kind = o.at("kind").get<std::string>();
            Cell c{o.at("mse").get<double>(), o.at("r2").is_null() ? std::nullopt : std::optional<double>(o.at("r2").get<double>())};
            grid[kind][sc] = c;
            if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) kinds.push_back(kind);
            std::string sel = o.at("selected").empty() ? "" : describe(spec_from_json(o.at("selected").front()));
            if (o.at("selected").size() > 1) sel += " (fold 1)";
            md << "| " << label << " | " << fmt(c.mse) << " | " << (c.r2 ? fmt(*c.r2) : "n/a") << " | " << sel << " |\n";
            table << sc << ',' << label << ',' << format_double(c.mse) << ',' << (c.r2 ? format_double(*c.r2) : "NaN") << '\n';
            for (const auto& b : o.at("histogram").at("bins"))
                hist << sc << ',' << label << ',' << format_double(b.at("lower").get<double>()) << ','
                     << format_double(b.at("upper").get<double>()) << ',' << b.at("count").get<std::size_t>() << '\n';
        }
        for (const char* target : {"age", "smoker"}) {
            json c = json::parse(read_required(s / (std::string("correlation_") + target + ".json")));
            std::vector<std::pair<std::string, double>> defined;
            for (const auto& e : c.at("entries")) {
                corr << sc << ',' << c.at("target").get<std::string>() << ',' << e.at("feature").get<std::string>() << ','
                     << (e.at("r").is_null() ? "NaN" : format_double(e.at("r").get<double>())) << '\n';
                if (!e.at("r").is_null()) defined.emplace_back(e.at("feature").get<std::string>(), e.at("r").get<double>());
            }
            std::stable_sort(defined.begin(), defined.end(),
                             [](const auto& a, const auto& b) { return std::fabs(a.second) > std::fabs(b.second); });
            md << "\nStrongest correlations with " << c.at("target").get<std::string>() << " ("
               << c.at("method").get<std::string>() << "):\n\n| feature | r |\n|---|---|\n";
            for (std::size_t i = 0; i < std::min<std::size_t>(10, defined.size()); ++i)
                md << "| " << defined[i].first << " | " << fmt(defined[i].second, 3) << " |\n";
        }
        json g = json::parse(read_required(s / "group_stats.json"));
        if (g.at("available").get<bool>()) {
            md << "\nSmoker (n=" << g.at("n_smoker").get<std::size_t>() << ") vs non-smoker (n="
               << g.at("n_nonsmoker").get<std::size_t>() << "):\n\n| feature | smoker | non-smoker | d |\n|---|---|---|---|\n";
            std::size_t shown = 0;
            for (const auto& e : g.at("entries")) {
                if (shown++ == 11) break;
                md << "| " << e.at("feature").get<std::string>() << " | " << fmt(e.at("mean_smoker").get<double>(), 2)
                   << " ± " << fmt(e.at("std_smoker").get<double>(), 2) << " | "
                   << fmt(e.at("mean_nonsmoker").get<double>(), 2) << " ± " << fmt(e.at("std_nonsmoker").get<double>(), 2)
                   << " | " << (e.at("d").is_null() ? "n/a" : fmt(e.at("d").get<double>(), 3)) << " |\n";
            }
        }
    }

    std::ostringstream head;
    head << "# Results\n\n| model |";
    for (const auto& s : scenarios) head << ' ' << s << " MSE | " << s << " R2 |";
    head << "\n|---|";
    for (std::size_t i = 0; i < scenarios.size(); ++i) head << "---|---|";
    head << '\n';
    for (const auto& k : kinds) {
        head << "| " << k << " |";
        for (const auto& s : scenarios) {
            auto it = grid[k].find(s);
            if (it == grid[k].end()) head << " - | - |";
            else head << ' ' << fmt(it->second.mse) << " | " << (it->second.r2 ? fmt(*it->second.r2) : "n/a") << " |";
        }
        head << '\n';
    }
    std::string body = md.str().substr(std::string("# Results\n").size());
    write_file((root / "report.md").string(), head.str() + body);
    write_file((root / "table.csv").string(), table.str());
    write_file((root / "plot_histograms.csv").string(), hist.str());
    write_file((root / "plot_correlations.csv").string(), corr.str());
}

}  // namespace ecgage
