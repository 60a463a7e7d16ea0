#include "ecgage/models.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

namespace ecgage {

using nlohmann::json;

namespace {

constexpr int kModelFormatVersion = 1;

Eigen::MatrixXd standardized(const Dataset& d, const LinearParams& p) {
    const std::size_t n = d.rows(), k = d.cols();
    Eigen::MatrixXd z(n, k);
    for (std::size_t j = 0; j < k; ++j) {
        const bool constant = p.x_scale[j] == 0.0;
        for (std::size_t i = 0; i < n; ++i) z(i, j) = constant ? 0.0 : (d.at(i, j) - p.x_mean[j]) / p.x_scale[j];
    }
    return z;
}

// Stored scale is 1 for constant columns so prediction stays finite; the
// zero marker is only used while fitting.
LinearParams column_stats(const Dataset& d) {
    LinearParams p;
    for (std::size_t j = 0; j < d.cols(); ++j) {
        auto c = d.column(j);
        auto [lo, hi] = std::minmax_element(c.begin(), c.end());
        p.x_mean.push_back(mean(c));
        p.x_scale.push_back(*lo == *hi ? 0.0 : pstdev(c));
    }
    return p;
}

TrainedModel fit_least_squares(const Dataset& d, double lambda, ModelKind kind) {
    if (d.rows() == 0) throw DataError("cannot fit on an empty dataset");
    if (!(lambda >= 0)) throw UsageError("ridge lambda must be nonnegative");
    TrainedModel m;
    m.spec.kind = kind;
    m.spec.ridge_lambda = lambda;
    m.columns = d.columns;
    m.linear = column_stats(d);
    const std::size_t n = d.rows(), k = d.cols();

    Eigen::MatrixXd z = standardized(d, m.linear);
    double ybar = mean(d.age);
    Eigen::VectorXd yc(n);
    for (std::size_t i = 0; i < n; ++i) yc(i) = d.age[i] - ybar;

    Eigen::VectorXd w;
    if (lambda > 0) {
        Eigen::MatrixXd a(n + k, k);
        a.topRows(n) = z;
        a.bottomRows(k) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(k, k);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n + k);
        b.head(n) = yc;
        w = a.colPivHouseholderQr().solve(b);
    } else {
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(z);
        w = cod.solve(yc);
        m.rank_deficient = cod.rank() < static_cast<Eigen::Index>(k);
    }
    m.linear.weights.assign(w.data(), w.data() + k);
    m.linear.intercept = ybar;
    for (auto& s : m.linear.x_scale)
        if (s == 0.0) s = 1.0;
    m.provenance.train_hash = dataset_hash(d);
    m.provenance.train_rows = n;
    if (n < k + 1) m.provenance.notes.push_back("fewer rows than columns + 1; minimum-norm solution");
    if (m.rank_deficient) m.provenance.notes.push_back("rank-deficient design; minimum-norm solution");
    return m;
}

struct TreeBuilder {
    const Dataset& d;
    const ModelSpec& spec;
    RandomStream& rng;
    std::size_t mtry;
    Tree tree;
    std::vector<std::pair<double, double>> buf;
    std::vector<std::size_t> all_features;

    int grow(std::vector<std::size_t>& rows, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        double s = 0;
        bool constant = true;
        const double y0 = d.age[rows.front()];
        for (std::size_t r : rows) {
            s += d.age[r];
            constant = constant && d.age[r] == y0;
        }
        const double node_mean = s / static_cast<double>(rows.size());
        tree.nodes[id].value = node_mean;
        tree.nodes[id].count = rows.size();

        const auto min_leaf = static_cast<std::size_t>(spec.tree_min_leaf);
        if (constant || rows.size() < 2 * min_leaf || (spec.tree_max_depth && depth >= *spec.tree_max_depth))
            return id;

        std::vector<std::size_t> features = all_features;
        if (mtry < features.size()) {
            for (std::size_t i = 0; i < mtry; ++i) {
                std::size_t j = i + static_cast<std::size_t>(rng.below(features.size() - i));
                std::swap(features[i], features[j]);
            }
            features.resize(mtry);
            std::sort(features.begin(), features.end());
        }

        // Scores are sL^2/nL + sR^2/nR on node-centred targets; larger is a
        // larger SSE reduction. Strict comparison keeps the lowest feature
        // and the lowest threshold on ties.
        const double n = static_cast<double>(rows.size());
        int best_f = -1;
        double best_thr = 0, best_score = 0;
        double total = 0;
        for (std::size_t r : rows) total += d.age[r] - node_mean;
        const double parent_score = total * total / n;
        for (std::size_t f : features) {
            buf.clear();
            for (std::size_t r : rows) buf.emplace_back(d.at(r, f), d.age[r] - node_mean);
            std::sort(buf.begin(), buf.end());
            double sl = 0;
            for (std::size_t i = 0; i + 1 < buf.size(); ++i) {
                sl += buf[i].second;
                if (buf[i].first == buf[i + 1].first) continue;
                const std::size_t nl = i + 1, nr = buf.size() - nl;
                if (nl < min_leaf || nr < min_leaf) continue;
                const double sr = total - sl;
                const double score = sl * sl / static_cast<double>(nl) + sr * sr / static_cast<double>(nr);
                if (best_f < 0 || score > best_score) {
                    best_f = static_cast<int>(f);
                    best_score = score;
                    double mid = 0.5 * (buf[i].first + buf[i + 1].first);
                    best_thr = mid < buf[i + 1].first ? mid : buf[i].first;
                }
            }
        }
        if (best_f < 0 || !(best_score > parent_score)) return id;

        std::vector<std::size_t> left, right;
        for (std::size_t r : rows) (d.at(r, best_f) <= best_thr ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        tree.nodes[id].feature = best_f;
        tree.nodes[id].threshold = best_thr;
        int l = grow(left, depth + 1);
        tree.nodes[id].left = l;
        int r = grow(right, depth + 1);
        tree.nodes[id].right = r;
        return id;
    }
};

std::size_t effective_mtry(const ModelSpec& spec, std::size_t cols) {
    if (spec.kind != ModelKind::forest) return cols;
    return std::min<std::size_t>(static_cast<std::size_t>(spec.forest_max_features), cols);
}

json tree_to_json(const Tree& t) {
    json f = json::array(), thr = json::array(), l = json::array(), r = json::array(), v = json::array(),
         c = json::array();
    for (const auto& n : t.nodes) {
        f.push_back(n.feature);
        thr.push_back(n.threshold);
        l.push_back(n.left);
        r.push_back(n.right);
        v.push_back(n.value);
        c.push_back(n.count);
    }
    return {{"feature", f}, {"threshold", thr}, {"left", l}, {"right", r}, {"value", v}, {"count", c}};
}

Tree tree_from_json(const json& j) {
    Tree t;
    const auto& f = j.at("feature");
    t.nodes.resize(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        auto& n = t.nodes[i];
        n.feature = f[i].get<int>();
        n.threshold = j.at("threshold")[i].get<double>();
        n.left = j.at("left")[i].get<int>();
        n.right = j.at("right")[i].get<int>();
        n.value = j.at("value")[i].get<double>();
        n.count = j.at("count")[i].get<std::size_t>();
    }
    const int size = static_cast<int>(t.nodes.size());
    for (const auto& n : t.nodes)
        if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size))
            throw DataError("model file: malformed tree");
    if (t.nodes.empty()) throw DataError("model file: empty tree");
    return t;
}

double dataset_mse(const TrainedModel& m, const Dataset& val) {
    auto p = predict(m, val);
    if (p.empty()) throw DataError("empty validation set");
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - val.age[i]) * (p[i] - val.age[i]);
    return s / static_cast<double>(p.size());
}

std::size_t pick_best(const std::vector<GridEntry>& board) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < board.size(); ++i)
        if (board[i].score < board[best].score) best = i;
    return best;
}

// CGLS on [Z 1] v = y (plus sqrt(lambda) rows on the weights), started from v0.
Eigen::VectorXd cgls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, Eigen::VectorXd x, int iterations) {
    Eigen::VectorXd r = b - a * x;
    Eigen::VectorXd s = a.transpose() * r;
    Eigen::VectorXd p = s;
    double gamma = s.squaredNorm();
    const double tol = 1e-28 * std::max(1.0, b.squaredNorm());
    for (int it = 0; it < iterations && gamma > tol; ++it) {
        Eigen::VectorXd q = a * p;
        double qq = q.squaredNorm();
        if (qq == 0) break;
        double alpha = gamma / qq;
        x += alpha * p;
        r -= alpha * q;
        s = a.transpose() * r;
        double gnew = s.squaredNorm();
        p = s + (gnew / gamma) * p;
        gamma = gnew;
    }
    return x;
}

}  // namespace

const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::linear: return "linear";
        case ModelKind::ridge: return "ridge";
        case ModelKind::tree: return "tree";
        case ModelKind::forest: return "forest";
    }
    return "?";
}

ModelKind model_kind_from_name(std::string_view name) {
    for (auto k : {ModelKind::linear, ModelKind::ridge, ModelKind::tree, ModelKind::forest})
        if (name == model_kind_name(k)) return k;
    throw UsageError("unknown model kind: " + std::string(name));
}

void validate(const ModelSpec& s) {
    if (!(s.ridge_lambda >= 0) || !std::isfinite(s.ridge_lambda)) throw UsageError("ridge_lambda must be >= 0");
    if (s.tree_max_depth && *s.tree_max_depth < 1) throw UsageError("tree_max_depth must be positive");
    if (s.tree_min_leaf < 1) throw UsageError("tree_min_leaf must be positive");
    if (s.forest_n_trees < 1) throw UsageError("forest_n_trees must be positive");
    if (s.forest_max_features < 1) throw UsageError("forest_max_features must be positive");
}

std::string describe(const ModelSpec& s) {
    std::ostringstream os;
    os << model_kind_name(s.kind);
    switch (s.kind) {
        case ModelKind::linear: break;
        case ModelKind::ridge: os << " lambda=" << format_double(s.ridge_lambda); break;
        case ModelKind::forest:
            os << " trees=" << s.forest_n_trees << " max_features=" << s.forest_max_features;
            if (!s.forest_bootstrap) os << " no-bootstrap";
            [[fallthrough]];
        case ModelKind::tree:
            os << " depth=" << (s.tree_max_depth ? std::to_string(*s.tree_max_depth) : "none")
               << " min_leaf=" << s.tree_min_leaf;
            break;
    }
    return os.str();
}

json spec_to_json(const ModelSpec& s) {
    json j;
    j["kind"] = model_kind_name(s.kind);
    j["ridge_lambda"] = s.ridge_lambda;
    j["tree_max_depth"] = s.tree_max_depth ? json(*s.tree_max_depth) : json(nullptr);
    j["tree_min_leaf"] = s.tree_min_leaf;
    j["forest_n_trees"] = s.forest_n_trees;
    j["forest_max_features"] = s.forest_max_features;
    j["forest_bootstrap"] = s.forest_bootstrap;
    j["seed"] = s.seed;
    return j;
}

ModelSpec spec_from_json(const json& j, const ModelSpec& base) {
    if (!j.is_object()) throw UsageError("model spec must be a JSON object");
    ModelSpec s = base;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "kind") s.kind = model_kind_from_name(v.get<std::string>());
            else if (key == "ridge_lambda") s.ridge_lambda = v.get<double>();
            else if (key == "tree_max_depth") s.tree_max_depth = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
            else if (key == "tree_min_leaf") s.tree_min_leaf = v.get<int>();
            else if (key == "forest_n_trees") s.forest_n_trees = v.get<int>();
            else if (key == "forest_max_features") s.forest_max_features = v.get<int>();
            else if (key == "forest_bootstrap") s.forest_bootstrap = v.get<bool>();
            else if (key == "seed") s.seed = v.get<std::uint64_t>();
            else throw UsageError("unknown model spec key: " + key);
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad model spec: ") + e.what());
    }
    validate(s);
    return s;
}

double Tree::predict(std::span<const double> row) const {
    int i = 0;
    while (nodes[i].feature >= 0) i = row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
}

int Tree::depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        best = std::max(best, d[i]);
        if (nodes[i].feature >= 0) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
    }
    return best;
}

std::size_t Tree::leaves() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

double TrainedModel::predict_row(std::span<const double> row) const {
    if (spec.kind == ModelKind::linear || spec.kind == ModelKind::ridge) {
        double s = linear.intercept;
        for (std::size_t j = 0; j < linear.weights.size(); ++j)
            s += linear.weights[j] * (row[j] - linear.x_mean[j]) / linear.x_scale[j];
        return s;
    }
    double acc = 0;
    for (const auto& g : groups) {
        double s = 0;
        for (const auto& t : g.trees) s += t.predict(row);
        acc += g.weight * (s / static_cast<double>(g.trees.size()));
    }
    return acc;
}

std::vector<double> TrainedModel::raw_weights() const {
    std::vector<double> w(linear.weights.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = linear.weights[j] / linear.x_scale[j];
    return w;
}

double TrainedModel::raw_intercept() const {
    double b = linear.intercept;
    for (std::size_t j = 0; j < linear.weights.size(); ++j)
        b -= linear.weights[j] * linear.x_mean[j] / linear.x_scale[j];
    return b;
}

TrainedModel fit_linear(const Dataset& d) { return fit_least_squares(d, 0.0, ModelKind::linear); }

TrainedModel fit_ridge(const Dataset& d, double lambda) { return fit_least_squares(d, lambda, ModelKind::ridge); }

Tree build_tree(const Dataset& d, const std::vector<std::size_t>& rows, const ModelSpec& spec, std::uint64_t stream) {
    if (rows.empty()) throw DataError("cannot grow a tree on zero rows");
    RandomStream rng(spec.seed, stream);
    TreeBuilder b{d, spec, rng, effective_mtry(spec, d.cols()), {}, {}, {}};
    b.all_features.resize(d.cols());
    std::iota(b.all_features.begin(), b.all_features.end(), std::size_t{0});
    auto r = rows;
    b.grow(r, 0);
    return std::move(b.tree);
}

TrainedModel fit_tree(const Dataset& d, const ModelSpec& spec_in) {
    ModelSpec spec = spec_in;
    spec.kind = ModelKind::tree;
    validate(spec);
    if (d.rows() == 0) throw DataError("cannot fit on an empty dataset");
    TrainedModel m;
    m.spec = spec;
    m.columns = d.columns;
    std::vector<std::size_t> rows(d.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    m.groups.push_back({1.0, {build_tree(d, rows, spec, 0)}});
    m.provenance.train_hash = dataset_hash(d);
    m.provenance.train_rows = d.rows();
    return m;
}

TrainedModel fit_forest(const Dataset& d, const ModelSpec& spec_in, const FitOptions& opt) {
    ModelSpec spec = spec_in;
    spec.kind = ModelKind::forest;
    validate(spec);
    const std::size_t n = d.rows();
    if (n == 0) throw DataError("cannot fit on an empty dataset");
    TrainedModel m;
    m.spec = spec;
    m.columns = d.columns;
    std::vector<Tree> trees(static_cast<std::size_t>(spec.forest_n_trees));
    parallel_for(trees.size(), opt.threads, [&](std::size_t t) {
        std::vector<std::size_t> rows(n);
        if (spec.forest_bootstrap) {
            // Bootstrap draws come from a stream of their own so that the
            // per-node feature draws do not depend on n.
            RandomStream boot(derive_seed(spec.seed, 0xB007), t);
            for (auto& r : rows) r = static_cast<std::size_t>(boot.below(n));
            std::sort(rows.begin(), rows.end());
        } else {
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        }
        trees[t] = build_tree(d, rows, spec, t);
    });
    m.groups.push_back({1.0, std::move(trees)});
    m.provenance.train_hash = dataset_hash(d);
    m.provenance.train_rows = n;
    if (static_cast<std::size_t>(spec.forest_max_features) > d.cols())
        m.provenance.notes.push_back("forest_max_features clamped to " + std::to_string(d.cols()));
    return m;
}

TrainedModel fit_model(const Dataset& d, const ModelSpec& spec, const FitOptions& opt) {
    validate(spec);
    TrainedModel m;
    switch (spec.kind) {
        case ModelKind::linear: m = fit_linear(d); break;
        case ModelKind::ridge: m = fit_ridge(d, spec.ridge_lambda); break;
        case ModelKind::tree: m = fit_tree(d, spec); break;
        case ModelKind::forest: m = fit_forest(d, spec, opt); break;
    }
    m.spec = spec;
    return m;
}

std::vector<double> predict(const TrainedModel& m, const Dataset& d) {
    if (d.columns != m.columns) throw DataError("dataset columns do not match the model's feature order");
    return predict(m, d.x);
}

std::vector<double> predict(const TrainedModel& m, std::span<const double> x) {
    const std::size_t k = m.columns.size();
    if (k == 0 ? !x.empty() : x.size() % k != 0) throw DataError("row width does not match the model");
    const std::size_t n = k == 0 ? 0 : x.size() / k;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = m.predict_row(x.subspan(i * k, k));
    return out;
}

std::string serialize_model(const TrainedModel& m) {
    json j;
    j["format"] = "ecgage-model";
    j["version"] = kModelFormatVersion;
    j["spec"] = spec_to_json(m.spec);
    j["columns"] = m.columns;
    json p;
    if (m.spec.kind == ModelKind::linear || m.spec.kind == ModelKind::ridge) {
        p["weights"] = m.linear.weights;
        p["intercept"] = m.linear.intercept;
        p["x_mean"] = m.linear.x_mean;
        p["x_scale"] = m.linear.x_scale;
        p["rank_deficient"] = m.rank_deficient;
    } else {
        json groups = json::array();
        for (const auto& g : m.groups) {
            json trees = json::array();
            for (const auto& t : g.trees) trees.push_back(tree_to_json(t));
            groups.push_back({{"weight", g.weight}, {"trees", trees}});
        }
        p["groups"] = groups;
    }
    j["parameters"] = p;
    j["provenance"] = {{"train_hash", m.provenance.train_hash},
                       {"train_rows", m.provenance.train_rows},
                       {"finetune_hash", m.provenance.finetune_hash},
                       {"finetune_rows", m.provenance.finetune_rows},
                       {"notes", m.provenance.notes}};
    return j.dump(1) + "\n";
}

TrainedModel deserialize_model(const std::string& text) {
    TrainedModel m;
    try {
        json j = json::parse(text);
        if (j.at("format") != "ecgage-model") throw DataError("not a model file");
        if (j.at("version").get<int>() != kModelFormatVersion)
            throw DataError("unsupported model format version " + j.at("version").dump());
        m.spec = spec_from_json(j.at("spec"));
        m.columns = j.at("columns").get<std::vector<std::string>>();
        const auto& p = j.at("parameters");
        if (m.spec.kind == ModelKind::linear || m.spec.kind == ModelKind::ridge) {
            m.linear.weights = p.at("weights").get<std::vector<double>>();
            m.linear.intercept = p.at("intercept").get<double>();
            m.linear.x_mean = p.at("x_mean").get<std::vector<double>>();
            m.linear.x_scale = p.at("x_scale").get<std::vector<double>>();
            m.rank_deficient = p.at("rank_deficient").get<bool>();
            const auto k = m.columns.size();
            if (m.linear.weights.size() != k || m.linear.x_mean.size() != k || m.linear.x_scale.size() != k)
                throw DataError("coefficient count does not match the columns");
        } else {
            for (const auto& g : p.at("groups")) {
                TreeGroup tg;
                tg.weight = g.at("weight").get<double>();
                for (const auto& t : g.at("trees")) tg.trees.push_back(tree_from_json(t));
                if (tg.trees.empty()) throw DataError("empty tree group");
                m.groups.push_back(std::move(tg));
            }
            for (const auto& g : m.groups)
                for (const auto& t : g.trees)
                    for (const auto& n : t.nodes)
                        if (n.feature >= static_cast<int>(m.columns.size())) throw DataError("feature index out of range");
        }
        const auto& pv = j.at("provenance");
        m.provenance.train_hash = pv.at("train_hash").get<std::string>();
        m.provenance.train_rows = pv.at("train_rows").get<std::size_t>();
        m.provenance.finetune_hash = pv.at("finetune_hash").get<std::string>();
        m.provenance.finetune_rows = pv.at("finetune_rows").get<std::size_t>();
        m.provenance.notes = pv.at("notes").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("model file: ") + e.what());
    }
    return m;
}

void save_model(const std::string& path, const TrainedModel& m) { write_file(path, serialize_model(m)); }

TrainedModel load_model(const std::string& path) {
    try {
        return deserialize_model(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

GridResult grid_search(const std::vector<ModelSpec>& grid, const Dataset& train, const Dataset& val,
                       const FitOptions& opt) {
    if (grid.empty()) throw UsageError("empty hyperparameter grid");
    GridResult res;
    for (const auto& spec : grid) {
        auto m = fit_model(train, spec, opt);
        double s = dataset_mse(m, val);
        res.leaderboard.push_back({spec, s, {s}});
    }
    res.best = pick_best(res.leaderboard);
    return res;
}

GridResult grid_search_cv(const std::vector<ModelSpec>& grid, const Dataset& d,
                          const std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>& folds,
                          const FitOptions& opt) {
    if (grid.empty()) throw UsageError("empty hyperparameter grid");
    if (folds.empty()) throw UsageError("no folds given");
    GridResult res;
    for (const auto& spec : grid) {
        GridEntry e{spec, 0.0, {}};
        for (const auto& [tr, va] : folds) {
            auto m = fit_model(d.subset(tr), spec, opt);
            e.fold_scores.push_back(dataset_mse(m, d.subset(va)));
        }
        e.score = mean(e.fold_scores);
        res.leaderboard.push_back(std::move(e));
    }
    res.best = pick_best(res.leaderboard);
    return res;
}

FineTunePolicy parse_policy(const std::string& text) {
    FineTunePolicy p;
    auto colon = text.find(':');
    std::string name = text.substr(0, colon);
    if (name == "forest-augment") p.kind = FineTunePolicy::Kind::forest_augment;
    else if (name == "warm-start") p.kind = FineTunePolicy::Kind::warm_start;
    else throw UsageError("unknown fine-tune policy: " + name);
    if (colon == std::string::npos) return p;
    std::istringstream is(text.substr(colon + 1));
    std::string item;
    while (std::getline(is, item, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos) throw UsageError("policy option needs key=value: " + item);
        std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        try {
            std::size_t used = 0;
            if (key == "k" && p.kind == FineTunePolicy::Kind::forest_augment) p.new_trees = std::stoi(val, &used);
            else if (key == "w" && p.kind == FineTunePolicy::Kind::forest_augment) p.weight = std::stod(val, &used);
            else if (key == "iters" && p.kind == FineTunePolicy::Kind::warm_start) p.iterations = std::stoi(val, &used);
            else throw UsageError("unknown option '" + key + "' for policy " + name);
            if (used != val.size()) throw std::invalid_argument(val);
        } catch (const std::logic_error&) {
            throw UsageError("bad value for policy option " + key + ": " + val);
        }
    }
    if (p.new_trees && *p.new_trees < 1) throw UsageError("policy k must be positive");
    if (!(p.weight >= 0 && p.weight <= 1)) throw UsageError("policy w must lie in [0, 1]");
    if (p.iterations < 0) throw UsageError("policy iters must be nonnegative");
    return p;
}

std::uint64_t finetune_seed(std::uint64_t seed) { return derive_seed(seed, 0xF17E); }

TrainedModel finetune_model(const TrainedModel& pre, const Dataset& ft_in, const FineTunePolicy& policy,
                            const FitOptions& opt) {
    Dataset ft = ft_in.select_columns(pre.columns);
    if (ft.rows() == 0) throw DataError("empty fine-tune dataset");
    TrainedModel m = pre;
    const bool linear = pre.spec.kind == ModelKind::linear || pre.spec.kind == ModelKind::ridge;
    if (policy.kind == FineTunePolicy::Kind::forest_augment) {
        if (linear) throw UsageError("forest-augment needs a tree or forest model");
        std::size_t total = 0;
        for (const auto& g : pre.groups) total += g.trees.size();
        ModelSpec s = pre.spec;
        s.kind = ModelKind::forest;
        s.forest_n_trees = policy.new_trees.value_or(std::max<int>(1, static_cast<int>(total / 2)));
        s.seed = finetune_seed(pre.spec.seed);
        if (pre.spec.kind == ModelKind::tree) s.forest_max_features = static_cast<int>(pre.columns.size());
        auto fresh = fit_forest(ft, s, opt);
        for (auto& g : m.groups) g.weight *= 1.0 - policy.weight;
        m.groups.push_back({policy.weight, std::move(fresh.groups.front().trees)});
        m.provenance.notes.push_back("forest-augment k=" + std::to_string(s.forest_n_trees) +
                                     " w=" + format_double(policy.weight));
    } else {
        if (!linear) throw UsageError("warm-start needs a linear or ridge model");
        const std::size_t n = ft.rows(), k = ft.cols();
        const double lambda = pre.spec.kind == ModelKind::ridge ? pre.spec.ridge_lambda : 0.0;
        Eigen::MatrixXd z = standardized(ft, pre.linear);
        const std::size_t extra = lambda > 0 ? k : 0;
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + extra, k + 1);
        a.topLeftCorner(n, k) = z;
        a.col(k).head(n).setOnes();
        if (extra) a.bottomLeftCorner(k, k) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(k, k);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n + extra);
        for (std::size_t i = 0; i < n; ++i) b(i) = ft.age[i];
        Eigen::VectorXd x0(k + 1);
        for (std::size_t j = 0; j < k; ++j) x0(j) = pre.linear.weights[j];
        x0(k) = pre.linear.intercept;
        Eigen::VectorXd x = cgls(a, b, x0, policy.iterations);
        for (std::size_t j = 0; j < k; ++j) m.linear.weights[j] = x(j);
        m.linear.intercept = x(k);
        m.provenance.notes.push_back("warm-start iters=" + std::to_string(policy.iterations));
    }
    m.provenance.finetune_hash = dataset_hash(ft);
    m.provenance.finetune_rows = ft.rows();
    return m;
}

PretrainResult pretrain_finetune(const ModelSpec& spec, const Dataset& pretrain, const Dataset& finetune,
                                 const FineTunePolicy& policy, const FitOptions& opt) {
    PretrainResult res;
    std::vector<std::string> shared;
    for (const auto& c : pretrain.columns) {
        if (finetune.column_index(c)) shared.push_back(c);
        else res.dropped_columns.push_back(c);
    }
    for (const auto& c : finetune.columns)
        if (!pretrain.column_index(c)) res.dropped_columns.push_back(c);
    if (shared.empty()) throw DataError("pretrain and fine-tune datasets share no feature columns");
    auto base = fit_model(pretrain.select_columns(shared), spec, opt);
    res.model = finetune_model(base, finetune.select_columns(shared), policy, opt);
    for (const auto& c : res.dropped_columns) res.model.provenance.notes.push_back("dropped column " + c);
    return res;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace ecgage
