#pragma once

// Brute-force reference implementations used by the tests. They share no
// code with the library.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "ecgage/dataset.hpp"
#include "ecgage/models.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

// Gaussian elimination with partial pivoting.
inline std::vector<double> solve(Matrix a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::fabs(a[r][c]) > std::fabs(a[p][c])) p = r;
        std::swap(a[c], a[p]);
        std::swap(b[c], b[p]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
        x[i] = s / a[i][i];
    }
    return x;
}

// Normal equations on [X 1]; the last entry is the intercept.
inline std::vector<double> ols(const ecgage::Dataset& d) {
    const std::size_t p = d.cols() + 1;
    Matrix a(p, std::vector<double>(p, 0.0));
    std::vector<double> b(p, 0.0);
    for (std::size_t i = 0; i < d.rows(); ++i) {
        std::vector<double> row(d.row(i).begin(), d.row(i).end());
        row.push_back(1.0);
        for (std::size_t r = 0; r < p; ++r) {
            b[r] += row[r] * d.age[i];
            for (std::size_t c = 0; c < p; ++c) a[r][c] += row[r] * row[c];
        }
    }
    return solve(a, b);
}

inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Closed-form ridge on predictors standardized with the population std and
// a centred target: (Z'Z + lambda I) w = Z'y.
inline std::vector<double> ridge_standardized(const ecgage::Dataset& d, double lambda) {
    const std::size_t p = d.cols(), n = d.rows();
    Matrix z(n, std::vector<double>(p));
    for (std::size_t j = 0; j < p; ++j) {
        auto col = d.column(j);
        const double m = mean(col);
        double v = 0;
        for (double x : col) v += (x - m) * (x - m);
        double sd = std::sqrt(v / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) z[i][j] = sd > 0 ? (col[i] - m) / sd : 0.0;
    }
    const double ym = mean(d.age);
    Matrix a(p, std::vector<double>(p, 0.0));
    std::vector<double> b(p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < p; ++r) {
            b[r] += z[i][r] * (d.age[i] - ym);
            for (std::size_t c = 0; c < p; ++c) a[r][c] += z[i][r] * z[i][c];
        }
    for (std::size_t r = 0; r < p; ++r) a[r][r] += lambda;
    return solve(a, b);
}

inline double sse(const std::vector<double>& y) {
    if (y.empty()) return 0.0;
    const double m = mean(y);
    double s = 0;
    for (double v : y) s += (v - m) * (v - m);
    return s;
}

// Exhaustive regression tree: every feature, every midpoint between
// distinct values, SSE computed from scratch for each candidate.
struct TreeOracle {
    const ecgage::Dataset& d;
    int max_depth;
    std::size_t min_leaf;
    ecgage::Tree tree;

    int grow(const std::vector<std::size_t>& rows, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        std::vector<double> y;
        for (auto r : rows) y.push_back(d.age[r]);
        tree.nodes[id].value = mean(y);
        tree.nodes[id].count = rows.size();
        if (depth >= max_depth || rows.size() < 2 * min_leaf) return id;
        const double parent = sse(y);
        int best_f = -1;
        double best_t = 0, best = parent;
        for (std::size_t f = 0; f < d.cols(); ++f) {
            std::vector<double> vals;
            for (auto r : rows) vals.push_back(d.at(r, f));
            std::sort(vals.begin(), vals.end());
            vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
            for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
                double t = 0.5 * (vals[k] + vals[k + 1]);
                if (!(t < vals[k + 1])) t = vals[k];
                std::vector<double> yl, yr;
                for (auto r : rows) (d.at(r, f) <= t ? yl : yr).push_back(d.age[r]);
                if (yl.size() < min_leaf || yr.size() < min_leaf) continue;
                const double s = sse(yl) + sse(yr);
                if (s < best * (1 - 1e-12)) {
                    best = s;
                    best_f = static_cast<int>(f);
                    best_t = t;
                }
            }
        }
        if (best_f < 0) return id;
        std::vector<std::size_t> l, r;
        for (auto row : rows) (d.at(row, best_f) <= best_t ? l : r).push_back(row);
        tree.nodes[id].feature = best_f;
        tree.nodes[id].threshold = best_t;
        int li = grow(l, depth + 1);
        tree.nodes[id].left = li;
        int ri = grow(r, depth + 1);
        tree.nodes[id].right = ri;
        return id;
    }
};

inline ecgage::Tree tree(const ecgage::Dataset& d, int max_depth, std::size_t min_leaf) {
    TreeOracle o{d, max_depth, min_leaf, {}};
    std::vector<std::size_t> rows(d.rows());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    o.grow(rows, 0);
    return o.tree;
}

inline double rmssd(const std::vector<double>& rr) {
    double s = 0;
    for (std::size_t i = 1; i < rr.size(); ++i) s += (rr[i] - rr[i - 1]) * (rr[i] - rr[i - 1]);
    return std::sqrt(s / static_cast<double>(rr.size() - 1));
}

inline double sdnn(const std::vector<double>& rr, bool sample) {
    const double m = mean(rr);
    double s = 0;
    for (double v : rr) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(rr.size() - (sample ? 1 : 0)));
}

// Counts windows by stepping start times. Start k*stride is accepted while
// start + window does not exceed the duration (with a small slack for
// decimal inputs).
inline std::size_t segment_count(double duration, double window, double stride) {
    std::size_t n = 0;
    for (std::size_t k = 0;; ++k) {
        const double start = static_cast<double>(k) * stride;
        if (start + window > duration + 1e-9 * std::max(1.0, duration)) break;
        ++n;
    }
    return n;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline ecgage::Dataset random_dataset(std::mt19937_64& gen, std::size_t rows, std::size_t cols,
                                      double noise = 0.5) {
    std::normal_distribution<double> nd;
    std::vector<double> beta(cols);
    for (auto& b : beta) b = nd(gen);
    ecgage::Dataset d;
    for (std::size_t j = 0; j < cols; ++j) d.columns.push_back("x" + std::to_string(j));
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<double> r(cols);
        double y = 3.0;
        for (std::size_t j = 0; j < cols; ++j) {
            r[j] = nd(gen) * (1.0 + static_cast<double>(j));
            y += beta[j] * r[j];
        }
        d.add_row(r, y + noise * nd(gen), static_cast<double>(i % 2), "s" + std::to_string(i % 7), std::to_string(i));
    }
    return d;
}

// Greedy one-to-one matching of detected to true event indices within tol
// samples. Returns (true positives, sum of |error|, max |error|).
struct PeakMatch {
    std::size_t tp = 0;
    std::size_t detected = 0;
    std::size_t truth = 0;
    long max_err = 0;
    double sensitivity() const { return truth ? static_cast<double>(tp) / static_cast<double>(truth) : 0.0; }
    double ppv() const { return detected ? static_cast<double>(tp) / static_cast<double>(detected) : 0.0; }
};

inline PeakMatch match_peaks(const std::vector<std::size_t>& det, const std::vector<std::size_t>& truth, long tol) {
    PeakMatch m;
    m.detected = det.size();
    m.truth = truth.size();
    std::vector<bool> used(det.size(), false);
    for (auto t : truth) {
        long best = -1, best_err = tol + 1;
        for (std::size_t i = 0; i < det.size(); ++i) {
            long e = std::labs(static_cast<long>(det[i]) - static_cast<long>(t));
            if (!used[i] && e < best_err) {
                best_err = e;
                best = static_cast<long>(i);
            }
        }
        if (best >= 0) {
            used[static_cast<std::size_t>(best)] = true;
            ++m.tp;
            m.max_err = std::max(m.max_err, best_err);
        }
    }
    return m;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("ecgage_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str(const std::string& leaf = {}) const { return leaf.empty() ? path.string() : (path / leaf).string(); }
};

}  // namespace oracle
