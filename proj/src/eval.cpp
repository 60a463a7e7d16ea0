#include "ecgage/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ecgage/features.hpp"

namespace ecgage {

namespace {

constexpr std::uint64_t kSplitStream = 0x5B117;

// Shuffled units; each unit is the list of rows it owns.
std::vector<std::vector<std::size_t>> shuffled_units(const Dataset& d, const SplitPlan& plan) {
    std::vector<std::vector<std::size_t>> units;
    if (plan.grouping == Grouping::by_row) {
        units.resize(d.rows());
        for (std::size_t i = 0; i < d.rows(); ++i) units[i] = {i};
    } else {
        std::map<std::string, std::size_t> index;
        for (const auto& s : d.subjects()) {
            index[s] = units.size();
            units.emplace_back();
        }
        for (std::size_t i = 0; i < d.rows(); ++i) units[index[d.subject_id[i]]].push_back(i);
    }
    RandomStream rng(plan.seed, kSplitStream);
    rng.shuffle(units);
    return units;
}

std::vector<std::size_t> flatten(const std::vector<std::vector<std::size_t>>& units, std::size_t from,
                                 std::size_t to) {
    std::vector<std::size_t> out;
    for (std::size_t u = from; u < to; ++u) out.insert(out.end(), units[u].begin(), units[u].end());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<std::string, std::vector<double>>> analysis_columns(const Dataset& d, bool skip_smoker) {
    std::vector<std::pair<std::string, std::vector<double>>> cols;
    for (std::size_t j = 0; j < d.cols(); ++j) {
        if (skip_smoker && d.columns[j] == "smoker") continue;
        cols.emplace_back(d.columns[j], d.column(j));
    }
    if (auto rr = d.column_index("rr_ms")) {
        std::vector<double> hr;
        for (double v : d.column(*rr)) hr.push_back(heart_rate_bpm(v));
        cols.emplace_back("heart_rate_bpm", std::move(hr));
    }
    return cols;
}

void check_pair(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("prediction and truth lengths differ");
    if (a.empty()) throw DataError("no rows to score");
}

}  // namespace

std::array<std::size_t, 3> holdout_sizes(std::size_t n, const SplitPlan& plan) {
    if (!(plan.train_fraction > 0) || !(plan.val_fraction >= 0) || plan.train_fraction + plan.val_fraction > 1)
        throw UsageError("holdout fractions must be positive and sum to at most 1");
    auto tr = static_cast<std::size_t>(std::llround(plan.train_fraction * static_cast<double>(n)));
    auto va = static_cast<std::size_t>(std::llround(plan.val_fraction * static_cast<double>(n)));
    va = std::min(va, n - std::min(tr, n));
    return {tr, va, n - tr - va};
}

Holdout holdout_split(const Dataset& d, const SplitPlan& plan) {
    auto units = shuffled_units(d, plan);
    if (units.size() < 5)
        throw DataError("holdout split needs at least 5 " +
                        std::string(plan.grouping == Grouping::by_row ? "rows" : "subjects"));
    auto [tr, va, te] = holdout_sizes(units.size(), plan);
    Holdout h;
    h.train = flatten(units, 0, tr);
    h.val = flatten(units, tr, tr + va);
    h.test = flatten(units, tr + va, tr + va + te);
    return h;
}

std::vector<std::vector<std::size_t>> kfold_split(const Dataset& d, const SplitPlan& plan) {
    if (plan.k < 2) throw UsageError("k-fold needs k >= 2");
    auto units = shuffled_units(d, plan);
    const auto k = static_cast<std::size_t>(plan.k);
    if (units.size() < k)
        throw DataError("k-fold split needs at least k " +
                        std::string(plan.grouping == Grouping::by_row ? "rows" : "subjects"));
    std::vector<std::vector<std::size_t>> folds(k);
    for (std::size_t u = 0; u < units.size(); ++u)
        folds[u % k].insert(folds[u % k].end(), units[u].begin(), units[u].end());
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

FoldPairs fold_pairs(const std::vector<std::vector<std::size_t>>& folds, std::size_t n_rows) {
    FoldPairs out;
    for (const auto& f : folds) {
        std::vector<bool> in(n_rows, false);
        for (std::size_t i : f) in[i] = true;
        std::vector<std::size_t> train;
        for (std::size_t i = 0; i < n_rows; ++i)
            if (!in[i]) train.push_back(i);
        out.emplace_back(std::move(train), f);
    }
    return out;
}

double mse(std::span<const double> t, std::span<const double> p) {
    check_pair(t, p);
    double s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
    return s / static_cast<double>(t.size());
}

double r2(std::span<const double> t, std::span<const double> p) {
    check_pair(t, p);
    const double m = mean(t);
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        ss_res += (t[i] - p[i]) * (t[i] - p[i]);
        ss_tot += (t[i] - m) * (t[i] - m);
    }
    if (!(ss_tot > 0)) throw NumericError("R^2 is undefined for zero-variance truth");
    return 1.0 - ss_res / ss_tot;
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Histogram error_histogram(std::span<const double> errors, double w) {
    if (errors.empty()) throw DataError("no errors to bin");
    if (!(w > 0)) throw UsageError("histogram bin width must be positive");
    std::vector<long> bins;
    for (double e : errors) {
        if (!std::isfinite(e)) throw NumericError("non-finite prediction error");
        bins.push_back(std::lround(e / w));
    }
    auto [lo, hi] = std::minmax_element(bins.begin(), bins.end());
    Histogram h;
    h.bin_width = w;
    h.first_bin = *lo;
    h.counts.assign(static_cast<std::size_t>(*hi - *lo + 1), 0);
    for (long b : bins) ++h.counts[static_cast<std::size_t>(b - *lo)];
    return h;
}

EvalReport evaluate(const TrainedModel& m, const Dataset& test, double bin_width) {
    auto p = predict(m, test);
    EvalReport r;
    r.mse = mse(test.age, p);
    try {
        r.r2 = ecgage::r2(test.age, p);
    } catch (const NumericError&) {
    }
    std::vector<double> err;
    for (std::size_t i = 0; i < p.size(); ++i) {
        r.rows.push_back({test.subject_id[i], test.segment_id[i], test.age[i], p[i]});
        err.push_back(p[i] - test.age[i]);
    }
    r.histogram = error_histogram(err, bin_width);
    return r;
}

EvalReport pool_reports(const std::vector<EvalReport>& folds, double bin_width) {
    EvalReport r;
    std::vector<double> t, p, err;
    for (const auto& f : folds) {
        r.folds.push_back({f.mse, f.r2, f.rows.size()});
        for (const auto& row : f.rows) {
            r.rows.push_back(row);
            t.push_back(row.truth);
            p.push_back(row.predicted);
            err.push_back(row.predicted - row.truth);
        }
    }
    r.mse = mse(t, p);
    try {
        r.r2 = ecgage::r2(t, p);
    } catch (const NumericError&) {
    }
    r.histogram = error_histogram(err, bin_width);
    return r;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("correlation inputs differ in length");
    if (x.size() < 3) throw DataError("correlation needs at least 3 rows");
    const double mx = mean(x), my = mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = x[i] - mx, b = y[i] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (!(sxx > 0) || !(syy > 0)) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    auto rx = ranks(x), ry = ranks(y);
    return pearson(rx, ry);
}

const char* target_name(Target t) { return t == Target::age ? "age_years" : "smoker"; }

CorrelationReport pearson_matrix(const Dataset& d, Target target, bool use_spearman) {
    if (d.rows() < 3) throw DataError("correlation needs at least 3 rows");
    const std::vector<double>& y = target == Target::age ? d.age : d.smoker;
    CorrelationReport rep;
    rep.target = target;
    rep.spearman = use_spearman;
    for (auto& [name, col] : analysis_columns(d, false))
        rep.entries.push_back({name, use_spearman ? spearman(col, y) : pearson(col, y)});
    return rep;
}

GroupStatsReport group_stats(const Dataset& d) {
    std::vector<std::size_t> s_rows, ns_rows;
    for (std::size_t i = 0; i < d.rows(); ++i) (d.smoker[i] == 1.0 ? s_rows : ns_rows).push_back(i);
    if (s_rows.size() < 2 || ns_rows.size() < 2)
        throw DataError("group statistics need at least two smoker and two non-smoker rows");
    GroupStatsReport rep;
    rep.n_smoker = s_rows.size();
    rep.n_nonsmoker = ns_rows.size();
    for (auto& [name, col] : analysis_columns(d, true)) {
        std::vector<double> a, b;
        for (std::size_t i : s_rows) a.push_back(col[i]);
        for (std::size_t i : ns_rows) b.push_back(col[i]);
        GroupStatsEntry e;
        e.feature = name;
        e.mean_smoker = mean(a);
        e.std_smoker = sstdev(a);
        e.mean_nonsmoker = mean(b);
        e.std_nonsmoker = sstdev(b);
        const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
        const double pooled = std::sqrt(((na - 1) * e.std_smoker * e.std_smoker +
                                         (nb - 1) * e.std_nonsmoker * e.std_nonsmoker) / (na + nb - 2));
        if (pooled > 0) e.d = (e.mean_smoker - e.mean_nonsmoker) / pooled;
        rep.entries.push_back(std::move(e));
    }
    std::stable_sort(rep.entries.begin(), rep.entries.end(), [](const auto& x, const auto& y) {
        if (x.d.has_value() != y.d.has_value()) return x.d.has_value();
        return x.d && std::fabs(*x.d) > std::fabs(*y.d);
    });
    return rep;
}

}  // namespace ecgage
