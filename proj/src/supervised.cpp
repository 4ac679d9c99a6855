#include "rockseg/supervised.hpp"

#include "rockseg/error.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace rockseg {

using nlohmann::json;

// ---------------------------------------------------------------------------
// training table

void TrainingTable::validate(const Dims& dims) const {
    if (rows.empty()) fail(ErrorCode::validation, "training table is empty");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const TrainingRow& r = rows[i];
        const std::string where = "training row " + std::to_string(i + 1) + " (class " + std::to_string(r.class_id) +
                                  ", x=" + std::to_string(r.x) + ", y=" + std::to_string(r.y) +
                                  ", slice=" + std::to_string(r.slice) + ")";
        if (r.class_id < 1 || r.class_id > 255) fail(ErrorCode::validation, where + ": class must be in 1..255");
        if (r.x < 0 || r.y < 0 || r.slice < 0 || static_cast<std::size_t>(r.x) >= dims.nx ||
            static_cast<std::size_t>(r.y) >= dims.ny || static_cast<std::size_t>(r.slice) >= dims.nz)
            fail(ErrorCode::coordinate, where + " lies outside volume " + dims.str());
    }
}

std::vector<int> TrainingTable::classes() const {
    std::set<int> s;
    for (const auto& r : rows) s.insert(r.class_id);
    return {s.begin(), s.end()};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

long parse_long(const std::string& s, std::size_t row, const char* field) {
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(ErrorCode::validation, "training CSV line " + std::to_string(row) + ": field '" + field +
                                        "' is not an integer: '" + s + "'");
    }
}

}  // namespace

TrainingTable parse_training_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> col;
    TrainingTable t;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (col.empty()) {
            for (std::size_t i = 0; i < cells.size(); ++i) col[cells[i]] = i;
            for (const char* need : {"class", "feature", "x", "y", "slice"})
                if (!col.count(need)) fail(ErrorCode::validation, std::string("training CSV header lacks column '") + need + "'");
            continue;
        }
        if (cells.size() < col.size())
            fail(ErrorCode::validation, "training CSV line " + std::to_string(lineno) + " has too few fields");
        TrainingRow r;
        r.class_id = static_cast<int>(parse_long(cells[col["class"]], lineno, "class"));
        r.feature_name = cells[col["feature"]];
        r.x = parse_long(cells[col["x"]], lineno, "x");
        r.y = parse_long(cells[col["y"]], lineno, "y");
        r.slice = parse_long(cells[col["slice"]], lineno, "slice");
        t.rows.push_back(std::move(r));
    }
    return t;
}

std::string to_csv(const TrainingTable& table) {
    std::string out = "class,feature,x,y,slice\r\n";
    for (const auto& r : table.rows) {
        std::string name = r.feature_name;
        if (name.find_first_of(",\"\r\n") != std::string::npos) {
            std::string q = "\"";
            for (char c : name) {
                if (c == '"') q += '"';
                q += c;
            }
            name = q + "\"";
        }
        out += std::to_string(r.class_id) + "," + name + "," + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
               std::to_string(r.slice) + "\r\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// features

FeatureVector patch_features(const VoxelVolume& vol, long x, long y, long z) {
    FeatureVector f{};
    const long nx = static_cast<long>(vol.nx()), ny = static_cast<long>(vol.ny());
    const auto sl = vol.slice(static_cast<std::size_t>(z));
    std::size_t k = 0;
    for (long dy = 0; dy < kPatchSide; ++dy) {
        const long yy = std::clamp(y - kPatchAnchor + dy, 0L, ny - 1);
        for (long dx = 0; dx < kPatchSide; ++dx) {
            const long xx = std::clamp(x - kPatchAnchor + dx, 0L, nx - 1);
            f[k++] = sl[static_cast<std::size_t>(yy * nx + xx)];
        }
    }
    return f;
}

std::vector<int> FeatureMatrix::classes() const {
    std::set<int> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
}

FeatureMatrix FeatureMatrix::subset(const std::vector<std::size_t>& rows) const {
    FeatureMatrix out;
    for (std::size_t r : rows) {
        out.samples.push_back(samples[r]);
        out.labels.push_back(labels[r]);
        if (r < provenance.size()) out.provenance.push_back(provenance[r]);
    }
    return out;
}

FeatureMatrix extract_features(const VoxelVolume& vol, const TrainingTable& table) {
    table.validate(vol.dims());
    FeatureMatrix f;
    for (const auto& r : table.rows) {
        f.samples.push_back(patch_features(vol, r.x, r.y, r.slice));
        f.labels.push_back(r.class_id);
        f.provenance.push_back({r.x, r.y, r.slice});
    }
    return f;
}

Standardizer Standardizer::fit(const FeatureMatrix& f, bool enabled) {
    Standardizer s;
    s.enabled = enabled;
    s.scale.fill(1.0);
    if (!enabled || f.size() == 0) return s;
    const double n = static_cast<double>(f.size());
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
        double m = 0.0;
        for (const auto& x : f.samples) m += x[j];
        m /= n;
        double ss = 0.0;
        for (const auto& x : f.samples) ss += (x[j] - m) * (x[j] - m);
        const double sd = std::sqrt(ss / n);
        s.mean[j] = m;
        s.scale[j] = sd > 0 ? sd : 1.0;
    }
    return s;
}

FeatureVector Standardizer::apply(const FeatureVector& x) const {
    if (!enabled) return x;
    FeatureVector out;
    for (std::size_t j = 0; j < kFeatureCount; ++j) out[j] = (x[j] - mean[j]) / scale[j];
    return out;
}

namespace {

void require_trainable(const FeatureMatrix& f, int min_per_class) {
    const auto classes = f.classes();
    if (classes.size() < 2)
        fail(ErrorCode::parameter, "training needs at least two classes, got " + std::to_string(classes.size()));
    for (int c : classes) {
        const auto n = std::count(f.labels.begin(), f.labels.end(), c);
        if (n < min_per_class)
            fail(ErrorCode::parameter, "class " + std::to_string(c) + " has " + std::to_string(n) +
                                           " training samples, need at least " + std::to_string(min_per_class));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// LS-SVM

void LssvmParams::validate() const {
    if (!(gamma > 0)) fail(ErrorCode::parameter, "LSSVM gamma must be positive");
    if (kernel == Kernel::rbf && !(sigma2 > 0)) fail(ErrorCode::parameter, "LSSVM sigma2 must be positive");
}

double LssvmModel::kernel(const FeatureVector& a, const FeatureVector& b) const {
    double acc = 0.0;
    if (params.kernel == Kernel::linear) {
        for (std::size_t j = 0; j < kFeatureCount; ++j) acc += a[j] * b[j];
        return acc;
    }
    for (std::size_t j = 0; j < kFeatureCount; ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
    return std::exp(-acc / params.sigma2);
}

double LssvmModel::decision(const BinaryMachine& m, const FeatureVector& x) const {
    double f = m.b;
    for (std::size_t i = 0; i < m.members.size(); ++i) f += m.alpha[i] * m.y[i] * kernel(x, samples[m.members[i]]);
    return f;
}

int LssvmModel::predict(const FeatureVector& raw) const {
    const FeatureVector x = standardizer.apply(raw);
    std::map<int, int> votes;
    std::map<int, double> margin;
    for (const auto& m : machines) {
        const double f = decision(m, x);
        const int winner = f > 0 ? m.positive : m.negative;
        ++votes[winner];
        margin[winner] += std::abs(f);
    }
    int best = classes.front();
    for (int c : classes) {
        if (votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best])) best = c;
    }
    return best;
}

KktSystem LssvmModel::system(const BinaryMachine& m) const {
    KktSystem s;
    s.n = m.members.size();
    const std::size_t dim = s.n + 1;
    s.matrix.assign(dim * dim, 0.0);
    s.rhs.assign(dim, 1.0);
    s.rhs[0] = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) {
        s.matrix[i + 1] = m.y[i];
        s.matrix[(i + 1) * dim] = m.y[i];
        for (std::size_t j = 0; j < s.n; ++j)
            s.matrix[(i + 1) * dim + j + 1] = m.y[i] * m.y[j] * kernel(samples[m.members[i]], samples[m.members[j]]);
        s.matrix[(i + 1) * dim + i + 1] += 1.0 / params.gamma;
    }
    s.solution.push_back(m.b);
    s.solution.insert(s.solution.end(), m.alpha.begin(), m.alpha.end());
    return s;
}

double KktSystem::relative_residual() const {
    const std::size_t dim = n + 1;
    double rn = 0.0, an = 0.0, xn = 0.0, bn = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        double r = -rhs[i];
        for (std::size_t j = 0; j < dim; ++j) {
            r += matrix[i * dim + j] * solution[j];
            an = std::max(an, std::abs(matrix[i * dim + j]));
        }
        rn = std::max(rn, std::abs(r));
        xn = std::max(xn, std::abs(solution[i]));
        bn = std::max(bn, std::abs(rhs[i]));
    }
    // normwise backward error in the infinity norm
    return rn / (an * static_cast<double>(dim) * xn + bn);
}

LssvmModel train_lssvm(const FeatureMatrix& f, const LssvmParams& params) {
    params.validate();
    require_trainable(f, 2);
    LssvmModel model;
    model.params = params;
    model.standardizer = Standardizer::fit(f, params.standardize);
    for (const auto& x : f.samples) model.samples.push_back(model.standardizer.apply(x));
    model.labels = f.labels;
    model.classes = f.classes();

    for (std::size_t a = 0; a < model.classes.size(); ++a)
        for (std::size_t c = a + 1; c < model.classes.size(); ++c) {
            BinaryMachine m;
            m.positive = model.classes[a];
            m.negative = model.classes[c];
            for (std::size_t i = 0; i < f.size(); ++i) {
                if (f.labels[i] == m.positive || f.labels[i] == m.negative) {
                    m.members.push_back(i);
                    m.y.push_back(f.labels[i] == m.positive ? 1.0 : -1.0);
                }
            }
            const auto n = static_cast<Eigen::Index>(m.members.size());
            Eigen::MatrixXd H(n, n);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j)
                    H(i, j) = m.y[static_cast<std::size_t>(i)] * m.y[static_cast<std::size_t>(j)] *
                              model.kernel(model.samples[m.members[static_cast<std::size_t>(i)]],
                                           model.samples[m.members[static_cast<std::size_t>(j)]]);
            H.diagonal().array() += 1.0 / params.gamma;

            // H is symmetric positive definite; eliminate b through the Schur complement.
            Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13)
                fail(ErrorCode::conditioning, "LSSVM system for classes " + std::to_string(m.positive) + "/" +
                                                  std::to_string(m.negative) +
                                                  " is ill-conditioned; increase 1/gamma (use a smaller gamma)");
            const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(m.y.data(), n);
            const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
            Eigen::VectorXd eta = ldlt.solve(y);
            Eigen::VectorXd nu = ldlt.solve(ones);
            // one step of iterative refinement on both solves
            eta += ldlt.solve(y - H * eta);
            nu += ldlt.solve(ones - H * nu);
            const double denom = y.dot(eta);
            if (!(std::abs(denom) > 0))
                fail(ErrorCode::conditioning, "LSSVM bias is undetermined; increase 1/gamma (use a smaller gamma)");
            m.b = y.dot(nu) / denom;
            const Eigen::VectorXd alpha = nu - m.b * eta;
            m.alpha.assign(alpha.data(), alpha.data() + n);
            model.machines.push_back(std::move(m));
            if (model.system(model.machines.back()).relative_residual() > 1e-8)
                fail(ErrorCode::conditioning, "LSSVM solve did not reach 1e-8 relative residual; increase 1/gamma");
        }
    return model;
}

// ---------------------------------------------------------------------------
// trees

namespace {

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;
};

double gini_mass(const std::vector<double>& counts, double total) {
    if (total <= 0) return 0.0;
    double s = 0.0;
    for (double c : counts) s += c * c;
    return total - s / total;  // total * (1 - sum p^2)
}

int majority(const std::vector<double>& counts, const std::vector<int>& classes) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < counts.size(); ++i)
        if (counts[i] > counts[best]) best = i;
    return classes[best];
}

struct TreeBuilder {
    const FeatureMatrix& f;
    const std::vector<double>& w;
    std::vector<int> classes;
    std::map<int, std::size_t> class_index;
    int max_depth;
    DecisionTree tree;

    std::vector<double> counts(const std::vector<std::size_t>& idx) const {
        std::vector<double> c(classes.size(), 0.0);
        for (std::size_t i : idx) c[class_index.at(f.labels[i])] += w[i];
        return c;
    }

    int build(const std::vector<std::size_t>& idx, int depth) {
        const std::vector<double> c = counts(idx);
        const double total = std::accumulate(c.begin(), c.end(), 0.0);
        const int node = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{});
        tree.nodes[static_cast<std::size_t>(node)].label = majority(c, classes);
        const double parent = gini_mass(c, total);
        if (depth >= max_depth || parent <= 1e-12 * total || idx.size() < 2) return node;

        Split best;
        best.impurity = parent;
        std::vector<std::size_t> order = idx;
        for (std::size_t feat = 0; feat < kFeatureCount; ++feat) {
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return f.samples[a][feat] < f.samples[b][feat]; });
            std::vector<double> left(classes.size(), 0.0);
            double lt = 0.0;
            for (std::size_t p = 0; p + 1 < order.size(); ++p) {
                const std::size_t i = order[p];
                left[class_index.at(f.labels[i])] += w[i];
                lt += w[i];
                const double here = f.samples[i][feat], next = f.samples[order[p + 1]][feat];
                if (here == next) continue;
                std::vector<double> right(classes.size());
                for (std::size_t q = 0; q < right.size(); ++q) right[q] = c[q] - left[q];
                const double imp = gini_mass(left, lt) + gini_mass(right, total - lt);
                if (imp < best.impurity - 1e-12 * total) {
                    best.impurity = imp;
                    best.feature = static_cast<int>(feat);
                    best.threshold = 0.5 * (here + next);
                }
            }
        }
        if (best.feature < 0) return node;

        std::vector<std::size_t> li, ri;
        for (std::size_t i : idx)
            (f.samples[i][static_cast<std::size_t>(best.feature)] <= best.threshold ? li : ri).push_back(i);
        const int l = build(li, depth + 1);
        const int r = build(ri, depth + 1);
        TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
        n.feature = best.feature;
        n.threshold = best.threshold;
        n.left = l;
        n.right = r;
        return node;
    }
};

}  // namespace

DecisionTree DecisionTree::fit(const FeatureMatrix& f, const std::vector<double>& weights, int max_depth) {
    if (weights.size() != f.size()) fail(ErrorCode::parameter, "tree weights must match the sample count");
    TreeBuilder b{f, weights, f.classes(), {}, max_depth, {}};
    for (std::size_t i = 0; i < b.classes.size(); ++i) b.class_index[b.classes[i]] = i;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (weights[i] > 0) idx.push_back(i);
    if (idx.empty()) fail(ErrorCode::parameter, "tree needs at least one weighted sample");
    b.build(idx, 0);
    return std::move(b.tree);
}

int DecisionTree::predict(const FeatureVector& x) const {
    std::size_t at = 0;
    while (nodes[at].feature >= 0)
        at = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[at].feature)] <= nodes[at].threshold ? nodes[at].left
                                                                                                              : nodes[at].right);
    return nodes[at].label;
}

EnsembleMethod parse_ensemble_method(const std::string& s) {
    if (s == "bagging" || s == "bag") return EnsembleMethod::bagging;
    if (s == "adaboost" || s == "boosting" || s == "boost") return EnsembleMethod::adaboost;
    fail(ErrorCode::parameter, "ensemble method must be bagging or adaboost, got '" + s + "'");
}

void EnsembleParams::validate() const {
    if (n_learners < 1) fail(ErrorCode::parameter, "n_learners must be >= 1");
    if (max_depth < 1) fail(ErrorCode::parameter, "max_depth must be >= 1");
}

int EnsembleModel::predict(const FeatureVector& raw) const {
    const FeatureVector x = standardizer.apply(raw);
    std::map<int, double> score;
    for (std::size_t t = 0; t < trees.size(); ++t)
        score[trees[t].predict(x)] += params.method == EnsembleMethod::adaboost ? learner_weights[t] : 1.0;
    int best = classes.front();
    for (int c : classes)
        if (score[c] > score[best]) best = c;
    return best;
}

EnsembleModel train_ensemble(const FeatureMatrix& raw, const EnsembleParams& params) {
    params.validate();
    require_trainable(raw, 1);
    EnsembleModel model;
    model.params = params;
    model.classes = raw.classes();
    model.standardizer = Standardizer::fit(raw, params.standardize);
    FeatureMatrix f = raw;
    for (auto& x : f.samples) x = model.standardizer.apply(x);
    const std::size_t n = f.size();
    const double K = static_cast<double>(model.classes.size());

    if (params.method == EnsembleMethod::bagging) {
        for (int t = 0; t < params.n_learners; ++t) {
            std::vector<double> w(n, 1.0);
            if (params.bootstrap) {
                std::mt19937_64 rng(params.seed + static_cast<std::uint64_t>(t));
                std::fill(w.begin(), w.end(), 0.0);
                for (std::size_t d = 0; d < n; ++d) w[rng() % n] += 1.0;
            }
            model.trees.push_back(DecisionTree::fit(f, w, params.max_depth));
        }
        return model;
    }

    // SAMME
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    for (int t = 0; t < params.n_learners; ++t) {
        DecisionTree tree = DecisionTree::fit(f, w, params.max_depth);
        double err = 0.0, total = 0.0;
        std::vector<char> miss(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            miss[i] = tree.predict(f.samples[i]) != f.labels[i];
            err += miss[i] ? w[i] : 0.0;
            total += w[i];
        }
        err /= total;
        if (err >= 1.0 - 1.0 / K) {
            if (model.trees.empty())
                fail(ErrorCode::parameter, "boosting base learner is no better than chance on the training data");
            break;
        }
        const double clamped = std::max(err, 1e-10);
        const double alpha = std::log((1.0 - clamped) / clamped) + std::log(K - 1.0);
        model.trees.push_back(std::move(tree));
        model.learner_weights.push_back(alpha);
        model.round_errors.push_back(err);
        model.round_weights.push_back(w);
        if (err == 0.0) break;
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (miss[i]) w[i] *= std::exp(alpha);
            s += w[i];
        }
        for (double& wi : w) wi /= s;
    }
    return model;
}

int predict(const Model& model, const FeatureVector& raw) {
    return std::visit([&](const auto& m) { return m.predict(raw); }, model);
}

LabelVolume classify_volume(const Model& model, const VoxelVolume& vol, const RunControl& ctl) {
    const std::vector<int>& classes = std::visit([](const auto& m) -> const std::vector<int>& { return m.classes; }, model);
    if (classes.empty()) fail(ErrorCode::parameter, "model is not trained");
    const int k = *std::max_element(classes.begin(), classes.end());
    std::vector<std::uint8_t> out(vol.size());
    const auto ny = static_cast<long>(vol.ny()), nx = static_cast<long>(vol.nx());
    for (std::size_t z = 0; z < vol.nz(); ++z) {
        ctl.checkpoint(static_cast<double>(z) / static_cast<double>(vol.nz()));
#pragma omp parallel for schedule(dynamic)
        for (long y = 0; y < ny; ++y)
            for (long x = 0; x < nx; ++x)
                out[vol.dims().index(static_cast<std::size_t>(x), static_cast<std::size_t>(y), z)] =
                    static_cast<std::uint8_t>(predict(model, patch_features(vol, x, y, static_cast<long>(z))));
    }
    ctl.report(1.0);
    return LabelVolume(vol.dims(), vol.voxel_size(), std::move(out), k);
}

// ---------------------------------------------------------------------------
// serialization

namespace {

constexpr int kModelVersion = 1;

json features_json(const FeatureVector& v) { return json(std::vector<double>(v.begin(), v.end())); }

FeatureVector features_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != kFeatureCount) fail(ErrorCode::validation, "model feature vector must have 36 entries");
    FeatureVector out;
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

json standardizer_json(const Standardizer& s) {
    return {{"enabled", s.enabled}, {"mean", features_json(s.mean)}, {"scale", features_json(s.scale)}};
}

Standardizer standardizer_from(const json& j) {
    Standardizer s;
    s.enabled = j.at("enabled").get<bool>();
    s.mean = features_from(j.at("mean"));
    s.scale = features_from(j.at("scale"));
    return s;
}

}  // namespace

std::string save_model(const Model& model) {
    json j;
    j["format"] = "rockseg-model";
    j["version"] = kModelVersion;
    if (const auto* m = std::get_if<LssvmModel>(&model)) {
        j["type"] = "lssvm";
        j["gamma"] = m->params.gamma;
        j["sigma2"] = m->params.sigma2;
        j["kernel"] = m->params.kernel == Kernel::rbf ? "rbf" : "linear";
        j["standardizer"] = standardizer_json(m->standardizer);
        j["classes"] = m->classes;
        j["labels"] = m->labels;
        json samples = json::array();
        for (const auto& s : m->samples) samples.push_back(features_json(s));
        j["samples"] = samples;
        json machines = json::array();
        for (const auto& b : m->machines)
            machines.push_back({{"positive", b.positive}, {"negative", b.negative}, {"members", b.members},
                                {"y", b.y}, {"alpha", b.alpha}, {"b", b.b}});
        j["machines"] = machines;
    } else {
        const auto& e = std::get<EnsembleModel>(model);
        j["type"] = "ensemble";
        j["method"] = e.params.method == EnsembleMethod::bagging ? "bagging" : "adaboost";
        j["n_learners"] = e.params.n_learners;
        j["max_depth"] = e.params.max_depth;
        j["seed"] = e.params.seed;
        j["bootstrap"] = e.params.bootstrap;
        j["standardizer"] = standardizer_json(e.standardizer);
        j["classes"] = e.classes;
        j["learner_weights"] = e.learner_weights;
        j["round_errors"] = e.round_errors;
        json trees = json::array();
        for (const auto& t : e.trees) {
            json nodes = json::array();
            for (const auto& n : t.nodes)
                nodes.push_back({n.feature, n.threshold, n.left, n.right, n.label});
            trees.push_back(nodes);
        }
        j["trees"] = trees;
    }
    return j.dump();
}

Model load_model(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::validation, std::string("model is not valid JSON: ") + e.what());
    }
    try {
        if (j.value("format", "") != "rockseg-model") fail(ErrorCode::validation, "not a rockseg model file");
        if (j.at("version").get<int>() != kModelVersion)
            fail(ErrorCode::validation, "unsupported model version " + j.at("version").dump());
        const std::string type = j.at("type").get<std::string>();
        if (type == "lssvm") {
            LssvmModel m;
            m.params.gamma = j.at("gamma").get<double>();
            m.params.sigma2 = j.at("sigma2").get<double>();
            m.params.kernel = j.at("kernel").get<std::string>() == "linear" ? Kernel::linear : Kernel::rbf;
            m.standardizer = standardizer_from(j.at("standardizer"));
            m.params.standardize = m.standardizer.enabled;
            m.classes = j.at("classes").get<std::vector<int>>();
            m.labels = j.at("labels").get<std::vector<int>>();
            for (const auto& s : j.at("samples")) m.samples.push_back(features_from(s));
            for (const auto& b : j.at("machines")) {
                BinaryMachine bm;
                bm.positive = b.at("positive").get<int>();
                bm.negative = b.at("negative").get<int>();
                bm.members = b.at("members").get<std::vector<std::size_t>>();
                bm.y = b.at("y").get<std::vector<double>>();
                bm.alpha = b.at("alpha").get<std::vector<double>>();
                bm.b = b.at("b").get<double>();
                for (std::size_t idx : bm.members)
                    if (idx >= m.samples.size()) fail(ErrorCode::validation, "model machine references a missing sample");
                m.machines.push_back(std::move(bm));
            }
            return m;
        }
        if (type == "ensemble") {
            EnsembleModel e;
            e.params.method = parse_ensemble_method(j.at("method").get<std::string>());
            e.params.n_learners = j.at("n_learners").get<int>();
            e.params.max_depth = j.at("max_depth").get<int>();
            e.params.seed = j.at("seed").get<std::uint64_t>();
            e.params.bootstrap = j.at("bootstrap").get<bool>();
            e.standardizer = standardizer_from(j.at("standardizer"));
            e.params.standardize = e.standardizer.enabled;
            e.classes = j.at("classes").get<std::vector<int>>();
            e.learner_weights = j.at("learner_weights").get<std::vector<double>>();
            e.round_errors = j.at("round_errors").get<std::vector<double>>();
            for (const auto& t : j.at("trees")) {
                DecisionTree tree;
                for (const auto& n : t)
                    tree.nodes.push_back(TreeNode{n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                                                  n.at(3).get<int>(), n.at(4).get<int>()});
                e.trees.push_back(std::move(tree));
            }
            return e;
        }
        fail(ErrorCode::validation, "unknown model type '" + type + "'");
    } catch (const json::exception& e) {
        fail(ErrorCode::validation, std::string("malformed model: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// validation metrics

std::vector<int> assign_folds(const std::vector<int>& labels, int folds, std::uint64_t seed) {
    if (folds < 2) fail(ErrorCode::parameter, "cross-validation needs at least 2 folds");
    if (static_cast<std::size_t>(folds) > labels.size())
        fail(ErrorCode::parameter, std::to_string(folds) + " folds requested for " + std::to_string(labels.size()) +
                                       " samples");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<int> fold_of(labels.size(), -1);
    std::size_t counter = 0;
    for (auto& [cls, idx] : by_class) {
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
        for (std::size_t i : idx) fold_of[i] = static_cast<int>(counter++ % static_cast<std::size_t>(folds));
    }
    return fold_of;
}

CvResult cross_validate(const FeatureMatrix& f, int folds, const Trainer& trainer, std::uint64_t seed) {
    CvResult r;
    r.fold_of = assign_folds(f.labels, folds, seed);
    for (int k = 0; k < folds; ++k) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < f.size(); ++i) (r.fold_of[i] == k ? test : train).push_back(i);
        const Model m = trainer(f.subset(train));
        std::size_t correct = 0;
        for (std::size_t i : test) correct += predict(m, f.samples[i]) == f.labels[i];
        r.fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
    }
    const double n = static_cast<double>(folds);
    r.mean = std::accumulate(r.fold_accuracy.begin(), r.fold_accuracy.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : r.fold_accuracy) ss += (a - r.mean) * (a - r.mean);
    r.std = std::sqrt(ss / (n - 1.0));
    return r;
}

RocResult roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) fail(ErrorCode::parameter, "scores and labels differ in length");
    double pos = 0, neg = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) fail(ErrorCode::parameter, "ROC labels must be 0 or 1");
        (l ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) fail(ErrorCode::parameter, "ROC is undefined when only one class is present");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    RocResult r;
    r.fpr.push_back(0.0);
    r.tpr.push_back(0.0);
    r.thresholds.push_back(std::numeric_limits<double>::infinity());
    double tp = 0, fp = 0;
    for (std::size_t p = 0; p < order.size();) {
        const double thr = scores[order[p]];
        while (p < order.size() && scores[order[p]] == thr) {
            (labels[order[p]] ? tp : fp) += 1;
            ++p;
        }
        r.fpr.push_back(fp / neg);
        r.tpr.push_back(tp / pos);
        r.thresholds.push_back(thr);
    }
    for (std::size_t i = 1; i < r.fpr.size(); ++i)
        r.auc += (r.fpr[i] - r.fpr[i - 1]) * 0.5 * (r.tpr[i] + r.tpr[i - 1]);
    return r;
}

double segmentation_entropy(const LabelVolume& labels) {
    std::vector<double> counts(256, 0.0);
    double total = 0;
    for (std::uint8_t l : labels.labels())
        if (l) {
            counts[l] += 1;
            total += 1;
        }
    if (total == 0) fail(ErrorCode::empty_region, "entropy of an all-masked label volume");
    double h = 0.0;
    for (double c : counts)
        if (c > 0) h -= (c / total) * std::log2(c / total);
    return h;
}

}  // namespace rockseg
