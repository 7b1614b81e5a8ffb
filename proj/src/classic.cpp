#include "moldweight/classic.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace moldweight::classic {

Matrix select_rows(const Matrix& x, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src = x.row(rows[r]);
        std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * x.cols()));
    }
    return out;
}

double rmse(std::span<const double> pred, std::span<const double> actual) {
    if (pred.size() != actual.size() || pred.empty()) raise(ErrorKind::LengthMismatch, "rmse: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (actual[i] - pred[i]) * (actual[i] - pred[i]);
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

// ---------------------------------------------------------------------------
// SVR

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-gamma * d2);
}

double SvrModel::predict(std::span<const double> x) const {
    double f = bias;
    for (std::size_t i = 0; i < coefficients.size(); ++i) {
        f += coefficients[i] * rbf_kernel(support_vectors.row(i), x, gamma);
    }
    return f;
}

Vector SvrModel::predict(const Matrix& x) const {
    Vector out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict(x.row(r));
    return out;
}

SvrModel svr_fit(const Matrix& x, std::span<const double> y, const SvrParams& params) {
    const std::size_t l = x.rows();
    if (l < 2 || y.size() != l) raise(ErrorKind::InvalidArgument, "svr_fit needs >= 2 samples and one target each");
    if (!(params.c > 0.0) || !(params.gamma > 0.0) || !(params.epsilon >= 0.0) || !(params.tolerance > 0.0)) {
        raise(ErrorKind::InvalidArgument, "svr_fit needs C, gamma, tolerance > 0 and epsilon >= 0");
    }
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(x.values().begin(), x.values().end(), finite) || !std::all_of(y.begin(), y.end(), finite)) {
        raise(ErrorKind::NonFiniteInput, "svr_fit: non-finite training data");
    }

    Matrix kernel(l, l);
    for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = i; j < l; ++j) {
            kernel(i, j) = kernel(j, i) = rbf_kernel(x.row(i), x.row(j), params.gamma);
        }
    }

    // Variables 0..l-1 are alpha (sign +1), l..2l-1 are alpha* (sign -1).
    const std::size_t n = 2 * l;
    const double c = params.c;
    constexpr double tau = 1e-12;
    std::vector<double> alpha(n, 0.0), grad(n);
    std::vector<int> sign(n);
    for (std::size_t i = 0; i < l; ++i) {
        sign[i] = 1;
        sign[i + l] = -1;
        grad[i] = params.epsilon - y[i];
        grad[i + l] = params.epsilon + y[i];
    }
    const auto q = [&](std::size_t i, std::size_t j) { return sign[i] * sign[j] * kernel(i % l, j % l); };
    const auto at_upper = [&](std::size_t i) { return alpha[i] >= c; };
    const auto at_lower = [&](std::size_t i) { return alpha[i] <= 0.0; };

    SvrModel model;
    model.gamma = params.gamma;
    model.c = c;
    model.epsilon = params.epsilon;

    std::size_t iter = 0;
    while (true) {
        double g_max = -std::numeric_limits<double>::infinity();
        std::size_t i_sel = n;
        for (std::size_t t = 0; t < n; ++t) {
            if (sign[t] == 1) {
                if (!at_upper(t) && -grad[t] >= g_max) {
                    g_max = -grad[t];
                    i_sel = t;
                }
            } else if (!at_lower(t) && grad[t] >= g_max) {
                g_max = grad[t];
                i_sel = t;
            }
        }
        double g_max2 = -std::numeric_limits<double>::infinity();
        std::size_t j_sel = n;
        double obj_min = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < n; ++t) {
            if (sign[t] == 1) {
                if (at_lower(t)) continue;
                g_max2 = std::max(g_max2, grad[t]);
                const double diff = g_max + grad[t];
                if (diff > 0.0 && i_sel < n) {
                    double quad = kernel(i_sel % l, i_sel % l) + kernel(t % l, t % l) - 2.0 * sign[i_sel] * q(i_sel, t);
                    if (quad <= 0.0) quad = tau;
                    const double obj = -(diff * diff) / quad;
                    if (obj <= obj_min) {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            } else {
                if (at_upper(t)) continue;
                g_max2 = std::max(g_max2, -grad[t]);
                const double diff = g_max - grad[t];
                if (diff > 0.0 && i_sel < n) {
                    double quad = kernel(i_sel % l, i_sel % l) + kernel(t % l, t % l) + 2.0 * sign[i_sel] * q(i_sel, t);
                    if (quad <= 0.0) quad = tau;
                    const double obj = -(diff * diff) / quad;
                    if (obj <= obj_min) {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        model.kkt_gap = g_max + g_max2;
        if (i_sel == n || j_sel == n || g_max + g_max2 < params.tolerance) break;
        if (iter >= params.max_iterations) {
            raise(ErrorKind::NoConvergence, "SMO reached " + std::to_string(params.max_iterations) +
                                                " pair updates with KKT gap " + std::to_string(g_max + g_max2));
        }
        ++iter;

        const std::size_t i = i_sel, j = j_sel;
        const double old_i = alpha[i], old_j = alpha[j];
        const double qii = kernel(i % l, i % l), qjj = kernel(j % l, j % l), qij = q(i, j);
        if (sign[i] != sign[j]) {
            double quad = qii + qjj + 2.0 * qij;
            if (quad <= 0.0) quad = tau;
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0.0) {
                if (alpha[j] < 0.0) {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if (diff > 0.0) {
                if (alpha[i] > c) {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if (alpha[j] > c) {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            double quad = qii + qjj - 2.0 * qij;
            if (quad <= 0.0) quad = tau;
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > c) {
                if (alpha[i] > c) {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if (alpha[j] < 0.0) {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if (sum > c) {
                if (alpha[j] > c) {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        const double d_i = alpha[i] - old_i, d_j = alpha[j] - old_j;
        for (std::size_t t = 0; t < n; ++t) grad[t] += q(i, t) * d_i + q(j, t) * d_j;
    }
    model.iterations = iter;

    // Bias from the free variables, or the midpoint of the feasible interval.
    double upper = std::numeric_limits<double>::infinity(), lower = -upper, free_sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = sign[t] * grad[t];
        if (at_upper(t)) {
            if (sign[t] == -1) upper = std::min(upper, yg);
            else lower = std::max(lower, yg);
        } else if (at_lower(t)) {
            if (sign[t] == 1) upper = std::min(upper, yg);
            else lower = std::max(lower, yg);
        } else {
            ++free_count;
            free_sum += yg;
        }
    }
    const double rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : 0.5 * (upper + lower);
    model.bias = -rho;

    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < l; ++i) {
        const double coef = alpha[i] - alpha[i + l];
        if (coef != 0.0) {
            support.push_back(i);
            model.coefficients.push_back(coef);
        }
    }
    model.support_vectors = select_rows(x, support);
    return model;
}

// ---------------------------------------------------------------------------
// Random forest

double RegressionTree::predict(std::span<const double> x) const {
    std::size_t node = 0;
    while (nodes[node].feature >= 0) {
        const auto& n = nodes[node];
        node = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes[node].value;
}

std::size_t RegressionTree::depth() const {
    if (nodes.empty()) return 0;
    std::vector<std::size_t> level(nodes.size(), 0);
    std::size_t deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        deepest = std::max(deepest, level[i]);
        if (nodes[i].feature >= 0) {
            level[static_cast<std::size_t>(nodes[i].left)] = level[i] + 1;
            level[static_cast<std::size_t>(nodes[i].right)] = level[i] + 1;
        }
    }
    return deepest;
}

double ForestModel::predict(std::span<const double> x) const {
    double acc = 0.0;
    for (const auto& tree : trees) acc += tree.predict(x);
    return acc / static_cast<double>(trees.size());
}

Vector ForestModel::predict(const Matrix& x) const {
    Vector out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = predict(x.row(r));
    return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class TreeBuilder {
public:
    TreeBuilder(const Matrix& x, std::span<const double> y, const ForestParams& params, std::size_t max_features,
                std::mt19937_64& rng)
        : x_(x), y_(y), params_(params), max_features_(max_features), rng_(rng), features_(x.cols()) {
        std::iota(features_.begin(), features_.end(), std::size_t{0});
    }

    RegressionTree build(std::vector<std::size_t> samples) {
        tree_.nodes.clear();
        grow(samples, 0);
        return std::move(tree_);
    }

private:
    int grow(std::vector<std::size_t>& samples, std::size_t depth) {
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        double sum = 0.0;
        for (auto s : samples) sum += y_[s];
        const double mean = sum / static_cast<double>(samples.size());
        tree_.nodes[static_cast<std::size_t>(id)].value = mean;
        tree_.nodes[static_cast<std::size_t>(id)].samples = samples.size();

        const bool depth_limited = params_.max_depth > 0 && depth >= params_.max_depth;
        if (depth_limited || samples.size() < std::max<std::size_t>(2, params_.min_samples_split)) return id;

        double best_gain = 0.0;
        int best_feature = -1;
        double best_threshold = 0.0;
        const double parent_sse = sse(samples, mean);
        if (parent_sse <= 0.0) return id;

        // Partial Fisher-Yates draw of the candidate features.
        for (std::size_t k = 0; k < max_features_; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, features_.size() - 1);
            std::swap(features_[k], features_[pick(rng_)]);
        }
        std::vector<std::size_t> order(samples);
        for (std::size_t k = 0; k < max_features_; ++k) {
            const std::size_t f = features_[k];
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x_(a, f) < x_(b, f); });
            double left_sum = 0.0, left_sq = 0.0, total_sq = 0.0;
            for (auto s : order) total_sq += y_[s] * y_[s];
            for (std::size_t m = 0; m + 1 < order.size(); ++m) {
                const double v = y_[order[m]];
                left_sum += v;
                left_sq += v * v;
                const double xa = x_(order[m], f), xb = x_(order[m + 1], f);
                if (!(xa < xb)) continue;
                const double nl = static_cast<double>(m + 1);
                const double nr = static_cast<double>(order.size() - m - 1);
                const double right_sum = sum - left_sum;
                const double child_sse =
                    (left_sq - left_sum * left_sum / nl) + (total_sq - left_sq - right_sum * right_sum / nr);
                const double gain = parent_sse - child_sse;
                if (gain > best_gain + 1e-15 * parent_sse) {
                    best_gain = gain;
                    best_feature = static_cast<int>(f);
                    best_threshold = 0.5 * (xa + xb);
                    if (best_threshold >= xb) best_threshold = xa;
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<std::size_t> left, right;
        for (auto s : samples) {
            (x_(s, static_cast<std::size_t>(best_feature)) <= best_threshold ? left : right).push_back(s);
        }
        samples.clear();
        samples.shrink_to_fit();
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        auto& node = tree_.nodes[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    double sse(const std::vector<std::size_t>& samples, double mean) const {
        double acc = 0.0;
        for (auto s : samples) acc += (y_[s] - mean) * (y_[s] - mean);
        return acc;
    }

    const Matrix& x_;
    std::span<const double> y_;
    const ForestParams& params_;
    std::size_t max_features_;
    std::mt19937_64& rng_;
    std::vector<std::size_t> features_;
    RegressionTree tree_;
};

}  // namespace

ForestModel rf_fit(const Matrix& x, std::span<const double> y, const ForestParams& params, std::uint64_t seed) {
    const std::size_t n = x.rows();
    if (y.size() != n) raise(ErrorKind::LengthMismatch, "rf_fit: one target per row required");
    if (n == 0 || n < params.min_samples_split || x.cols() == 0) {
        raise(ErrorKind::InsufficientData, "rf_fit needs at least min_samples_split samples");
    }
    if (params.n_trees == 0) raise(ErrorKind::InvalidArgument, "rf_fit needs at least one tree");
    const std::size_t p = x.cols();
    const std::size_t max_features =
        params.max_features == 0 ? (p + 2) / 3 : std::min(params.max_features, p);

    ForestModel forest;
    forest.params = params;
    forest.seed = seed;
    forest.trees.reserve(params.n_trees);
    for (std::size_t t = 0; t < params.n_trees; ++t) {
        std::mt19937_64 rng(splitmix64(seed * 0x100000001b3ULL + t));
        std::vector<std::size_t> samples(n);
        if (params.bootstrap) {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (auto& s : samples) s = pick(rng);
        } else {
            std::iota(samples.begin(), samples.end(), std::size_t{0});
        }
        TreeBuilder builder(x, y, params, max_features, rng);
        forest.trees.push_back(builder.build(std::move(samples)));
    }
    return forest;
}

// ---------------------------------------------------------------------------
// Grid search

std::vector<std::size_t> contiguous_folds(std::size_t n, std::size_t k) {
    if (k == 0 || n < k) raise(ErrorKind::InsufficientData, "need at least k samples for k folds");
    std::vector<std::size_t> fold(n);
    const std::size_t base = n / k, extra = n % k;
    std::size_t i = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        for (std::size_t m = 0; m < size; ++m) fold[i++] = f;
    }
    return fold;
}

std::vector<SvrParams> default_svr_grid() {
    std::vector<SvrParams> grid;
    for (double c : {0.1, 1.0, 10.0, 100.0}) {
        for (double gamma : {0.01, 0.1, 1.0}) {
            for (double eps : {0.001, 0.01}) {
                SvrParams p;
                p.c = c;
                p.gamma = gamma;
                p.epsilon = eps;
                grid.push_back(p);
            }
        }
    }
    return grid;
}

std::vector<ForestParams> default_forest_grid() {
    std::vector<ForestParams> grid;
    for (std::size_t trees : {50, 100, 200}) {
        for (std::size_t depth : {3, 5, 10, 0}) {
            for (std::size_t split : {2, 5, 10}) {
                ForestParams p;
                p.n_trees = trees;
                p.max_depth = depth;
                p.min_samples_split = split;
                grid.push_back(p);
            }
        }
    }
    return grid;
}

}  // namespace moldweight::classic
