#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ecgage/eval.hpp"
#include "oracles.hpp"

using namespace ecgage;

namespace {

Dataset rows_only(std::size_t n, std::size_t subjects = 0) {
    Dataset d;
    d.columns = {"x"};
    for (std::size_t i = 0; i < n; ++i) {
        const std::string subj = "s" + std::to_string(subjects ? i % subjects : i);
        d.add_row(std::vector<double>{static_cast<double>(i)}, static_cast<double>(i), 0, subj, std::to_string(i));
    }
    return d;
}

std::vector<std::size_t> all_of(const Holdout& h) {
    std::vector<std::size_t> v(h.train);
    v.insert(v.end(), h.val.begin(), h.val.end());
    v.insert(v.end(), h.test.begin(), h.test.end());
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

TEST_CASE("mse and r2 on hand cases") {
    std::vector<double> y{1, 2, 3}, p{2, 2, 2};
    CHECK(mse(y, p) == doctest::Approx(2.0 / 3.0));
    CHECK(r2(y, p) == doctest::Approx(0.0));
    CHECK(mse(y, y) == 0.0);
    CHECK(r2(y, y) == 1.0);
    std::vector<double> flat{4, 4, 4};
    CHECK_THROWS_AS(r2(flat, p), NumericError);
    CHECK_THROWS_AS(mse(y, std::vector<double>{1, 2}), DataError);
}

TEST_CASE("mean prediction scores zero and shifts do not matter") {
    std::mt19937_64 gen(3);
    std::normal_distribution<double> nd(40, 12);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> y(30), p(30);
        for (auto& v : y) v = nd(gen);
        for (auto& v : p) v = nd(gen);
        std::vector<double> m(y.size(), oracle::mean(y));
        CHECK(r2(y, m) == doctest::Approx(0.0).epsilon(1e-12));
        auto ys = y, ps = p;
        for (auto& v : ys) v += 1000;
        for (auto& v : ps) v += 1000;
        CHECK(mse(ys, ps) == doctest::Approx(mse(y, p)).epsilon(1e-9));
        CHECK(r2(ys, ps) == doctest::Approx(r2(y, p)).epsilon(1e-9));
        double ss = 0;
        for (std::size_t i = 0; i < y.size(); ++i) ss += (y[i] - p[i]) * (y[i] - p[i]);
        CHECK(mse(y, p) == doctest::Approx(ss / 30.0));
    }
}

TEST_CASE("pearson agrees with the one-pass formula") {
    std::mt19937_64 gen(4);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 3 + static_cast<std::size_t>(t % 50);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = nd(gen);
            y[i] = 0.5 * x[i] + nd(gen);
        }
        auto r = pearson(x, y);
        REQUIRE(r);
        CHECK(*r == doctest::Approx(oracle::pearson(x, y)).epsilon(1e-9));
        CHECK(std::fabs(*r) <= 1.0);
        auto xa = x, yn = y;
        for (auto& v : xa) v = 3.0 * v + 7.0;
        for (auto& v : yn) v = -v;
        CHECK(*pearson(xa, y) == doctest::Approx(*r).epsilon(1e-9));
        CHECK(*pearson(x, yn) == doctest::Approx(-*r).epsilon(1e-9));
    }
    std::vector<double> c{1, 1, 1}, v{1, 2, 3};
    CHECK_FALSE(pearson(c, v).has_value());
    CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{3, 4}), DataError);
}

TEST_CASE("ranks and spearman") {
    std::vector<double> x{10, 30, 20, 20};
    CHECK(ranks(x) == std::vector<double>{1, 4, 2.5, 2.5});
    std::vector<double> a{1, 2, 3, 4, 5}, b{1, 8, 27, 64, 125};
    CHECK(*spearman(a, b) == doctest::Approx(1.0));
    std::vector<double> rev{5, 4, 3, 2, 1};
    CHECK(*spearman(a, rev) == doctest::Approx(-1.0));
}

TEST_CASE("holdout sizes") {
    SplitPlan p;
    auto s = holdout_sizes(6131, p);
    CHECK(s == std::array<std::size_t, 3>{3679, 1226, 1226});
    s = holdout_sizes(5, p);
    CHECK(s[0] + s[1] + s[2] == 5);
    for (std::size_t n = 5; n < 300; ++n) {
        auto z = holdout_sizes(n, p);
        CHECK(z[0] + z[1] + z[2] == n);
        CHECK(z[0] == static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n))));
    }
}

TEST_CASE("holdout partitions rows") {
    auto d = rows_only(97);
    SplitPlan p;
    auto h = holdout_split(d, p);
    auto all = all_of(h);
    REQUIRE(all.size() == 97);
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    CHECK(std::is_sorted(h.train.begin(), h.train.end()));
    auto again = holdout_split(d, p);
    CHECK(again.test == h.test);
    p.seed = 7;
    CHECK(holdout_split(d, p).test != h.test);
    CHECK_THROWS_AS(holdout_split(rows_only(4), SplitPlan{}), DataError);
}

TEST_CASE("subject-grouped holdout keeps subjects whole") {
    auto d = rows_only(420, 42);
    SplitPlan p;
    p.grouping = Grouping::by_subject;
    auto h = holdout_split(d, p);
    auto subjects = [&](const std::vector<std::size_t>& idx) {
        std::set<std::string> s;
        for (auto i : idx) s.insert(d.subject_id[i]);
        return s;
    };
    auto a = subjects(h.train), b = subjects(h.val), c = subjects(h.test);
    CHECK(a.size() == 25);
    CHECK(b.size() == 8);
    CHECK(c.size() == 9);
    for (const auto& s : a) CHECK((!b.count(s) && !c.count(s)));
    for (const auto& s : b) CHECK(!c.count(s));
    CHECK(all_of(h).size() == 420);
}

TEST_CASE("k-fold covers each row once") {
    for (std::size_t n : {5u, 17u, 100u, 333u}) {
        auto d = rows_only(n);
        SplitPlan p;
        p.kind = SplitKind::kfold;
        auto folds = kfold_split(d, p);
        REQUIRE(folds.size() == 5);
        std::vector<int> seen(n, 0);
        std::size_t lo = n, hi = 0;
        for (const auto& f : folds) {
            for (auto i : f) ++seen[i];
            lo = std::min(lo, f.size());
            hi = std::max(hi, f.size());
        }
        for (int s : seen) CHECK(s == 1);
        CHECK(hi - lo <= 1);
        auto pairs = fold_pairs(folds, n);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            CHECK(pairs[k].first.size() + pairs[k].second.size() == n);
            CHECK(pairs[k].second == folds[k]);
        }
    }
    SplitPlan bad;
    bad.k = 1;
    CHECK_THROWS_AS(kfold_split(rows_only(10), bad), UsageError);
    SplitPlan many;
    many.k = 11;
    CHECK_THROWS_AS(kfold_split(rows_only(10), many), DataError);
}

TEST_CASE("subject-grouped folds of 42 subjects") {
    auto d = rows_only(42 * 3, 42);
    SplitPlan p;
    p.kind = SplitKind::kfold;
    p.grouping = Grouping::by_subject;
    auto folds = kfold_split(d, p);
    std::vector<std::size_t> per;
    for (const auto& f : folds) {
        std::set<std::string> s;
        for (auto i : f) s.insert(d.subject_id[i]);
        per.push_back(s.size());
        CHECK(f.size() == 3 * s.size());
    }
    CHECK(per == std::vector<std::size_t>{9, 9, 8, 8, 8});
}

TEST_CASE("error histogram") {
    std::vector<double> e{-0.4, 0.0, 0.49, 0.51, 1.2, -2.6, 3.0};
    auto h = error_histogram(e, 1.0);
    CHECK(h.total() == e.size());
    CHECK(h.first_bin == -3);
    CHECK(h.counts == std::vector<std::size_t>{1, 0, 0, 3, 2, 0, 1});
    CHECK(h.lower_edge(3) == -0.5);
    auto w = error_histogram(e, 2.0);
    CHECK(w.total() == e.size());
    CHECK_THROWS_AS(error_histogram(e, 0.0), UsageError);
}

TEST_CASE("group statistics recover a planted effect size") {
    std::mt19937_64 gen(99);
    std::normal_distribution<double> nd;
    Dataset d;
    d.columns = {"rr_ms", "smoker", "noise"};
    for (int i = 0; i < 2000; ++i) {
        const double s = i % 2;
        std::vector<double> r{800 - 40 * s + 40 * nd(gen), s, nd(gen)};
        d.add_row(r, 30, s, "s" + std::to_string(i), "0");
    }
    auto g = group_stats(d);
    CHECK(g.n_smoker == 1000);
    CHECK(g.n_nonsmoker == 1000);
    for (const auto& e : g.entries) CHECK(e.feature != "smoker");
    REQUIRE(g.entries.size() == 3);
    auto rr = std::find_if(g.entries.begin(), g.entries.end(), [](const auto& e) { return e.feature == "rr_ms"; });
    REQUIRE(rr->d);
    CHECK(*rr->d == doctest::Approx(-1.0).epsilon(0.15));
    auto hr = std::find_if(g.entries.begin(), g.entries.end(), [](const auto& e) { return e.feature == "heart_rate_bpm"; });
    REQUIRE(hr != g.entries.end());
    CHECK(*hr->d > 0.8);
    CHECK(g.entries.back().feature == "noise");
    for (std::size_t i = 0; i + 1 < g.entries.size(); ++i)
        if (g.entries[i + 1].d) CHECK(std::fabs(*g.entries[i].d) >= std::fabs(*g.entries[i + 1].d));

    Dataset one;
    one.columns = {"rr_ms"};
    one.add_row(std::vector<double>{800}, 30, 1, "a", "0");
    for (int i = 0; i < 5; ++i) one.add_row(std::vector<double>{800.0 + i}, 30, 0, "b", std::to_string(i));
    CHECK_THROWS_AS(group_stats(one), DataError);
}

TEST_CASE("correlation report appends heart rate") {
    std::mt19937_64 gen(5);
    auto d = oracle::random_dataset(gen, 50, 2);
    d.columns[0] = "rr_ms";
    for (std::size_t i = 0; i < d.rows(); ++i) d.x[i * d.cols()] = 800 + 10 * d.x[i * d.cols()];
    auto c = pearson_matrix(d, Target::age);
    REQUIRE(c.entries.size() == 3);
    CHECK(c.entries.back().feature == "heart_rate_bpm");
    CHECK(*c.entries[0].r == doctest::Approx(oracle::pearson(d.column(0), d.age)).epsilon(1e-9));
}

TEST_CASE("evaluate and pool") {
    std::mt19937_64 gen(8);
    auto d = oracle::random_dataset(gen, 60, 3);
    auto m = fit_linear(d);
    auto rep = evaluate(m, d);
    CHECK(rep.rows.size() == 60);
    CHECK(rep.mse == doctest::Approx(mse(d.age, predict(m, d))));
    CHECK(rep.histogram.total() == 60);
    auto pooled = pool_reports({rep, rep});
    CHECK(pooled.rows.size() == 120);
    CHECK(pooled.mse == doctest::Approx(rep.mse));
    CHECK(pooled.folds.size() == 2);
}
