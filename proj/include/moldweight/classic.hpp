#pragma once

// Classical regression baselines: epsilon-SVR with an RBF kernel (SMO solver),
// random-forest regression, and grid search with contiguous k-fold CV.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "moldweight/errors.hpp"
#include "moldweight/nn.hpp"

namespace moldweight::classic {

using nn::Matrix;
using nn::Vector;

[[nodiscard]] Matrix select_rows(const Matrix& x, std::span<const std::size_t> rows);

// ---------------------------------------------------------------------------
// SVR

struct SvrParams {
    double c = 1.0;
    double epsilon = 0.01;
    double gamma = 0.1;
    /// Stop when the maximal KKT violation m(a) - M(a) drops below this.
    double tolerance = 1e-3;
    std::size_t max_iterations = 100000;
};

struct SvrModel {
    Matrix support_vectors;    // one row per support vector
    Vector coefficients;       // alpha_i - alpha_i^*, each in [-C, C]
    double bias = 0.0;
    double gamma = 0.1;
    double c = 1.0;
    double epsilon = 0.01;
    std::size_t iterations = 0;
    double kkt_gap = 0.0;

    [[nodiscard]] double predict(std::span<const double> x) const;
    [[nodiscard]] Vector predict(const Matrix& x) const;
};

[[nodiscard]] double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma);

/// Solves the epsilon-SVR dual
///   min 1/2 (a - a*)^T K (a - a*) + eps sum (a + a*) - y^T (a - a*)
///   s.t. sum (a - a*) = 0, 0 <= a, a* <= C
/// with pairwise (SMO) updates and second-order working-set selection.
/// Throws NonFiniteInput, InvalidArgument or NoConvergence.
[[nodiscard]] SvrModel svr_fit(const Matrix& x, std::span<const double> y, const SvrParams& params);

// ---------------------------------------------------------------------------
// Random forest

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
    std::size_t samples = 0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    [[nodiscard]] double predict(std::span<const double> x) const;
    [[nodiscard]] std::size_t depth() const;
};

struct ForestParams {
    std::size_t n_trees = 100;
    std::size_t max_depth = 0;  // 0 = unlimited
    std::size_t min_samples_split = 2;
    bool bootstrap = true;
    std::size_t max_features = 0;  // 0 = ceil(p / 3)
};

struct ForestModel {
    std::vector<RegressionTree> trees;
    ForestParams params;
    std::uint64_t seed = 0;

    [[nodiscard]] double predict(std::span<const double> x) const;
    [[nodiscard]] Vector predict(const Matrix& x) const;
};

/// Each tree is grown on a bootstrap resample with variance-reduction splits
/// over a random feature subset per node. Throws InsufficientData.
[[nodiscard]] ForestModel rf_fit(const Matrix& x, std::span<const double> y, const ForestParams& params,
                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// Grid search

/// Fold id per sample: k contiguous blocks in time order, sizes differing by
/// at most one.
[[nodiscard]] std::vector<std::size_t> contiguous_folds(std::size_t n, std::size_t k);

template <typename Params>
struct GridSearchResult {
    Params best{};
    std::size_t best_index = 0;
    std::vector<Params> grid;
    std::vector<double> mean_rmse;              // per combination
    std::vector<std::vector<double>> fold_rmse;  // per combination, per fold
    std::vector<std::size_t> fold_of_sample;
};

/// Fits on x_train/y_train and returns predictions for x_val.
template <typename Params>
using FitPredict = std::function<Vector(const Params&, const Matrix& x_train, std::span<const double> y_train,
                                        const Matrix& x_val, std::uint64_t seed)>;

[[nodiscard]] double rmse(std::span<const double> pred, std::span<const double> actual);

/// Argmin of mean fold RMSE; ties resolve to the first combination in grid
/// order. Throws EmptyGrid or InsufficientData (fewer than k samples).
template <typename Params>
[[nodiscard]] GridSearchResult<Params> grid_search_cv(const FitPredict<Params>& fit_predict,
                                                      const std::vector<Params>& grid, const Matrix& x,
                                                      std::span<const double> y, std::size_t k = 5,
                                                      std::uint64_t seed = 0) {
    if (grid.empty()) raise(ErrorKind::EmptyGrid, "grid search needs at least one combination");
    if (k < 2 || x.rows() < k || y.size() != x.rows()) {
        raise(ErrorKind::InsufficientData, "grid search needs at least k samples and k >= 2");
    }
    GridSearchResult<Params> out;
    out.grid = grid;
    out.fold_of_sample = contiguous_folds(x.rows(), k);
    std::vector<std::vector<std::size_t>> train_rows(k), val_rows(k);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t f = 0; f < k; ++f) (f == out.fold_of_sample[i] ? val_rows : train_rows)[f].push_back(i);
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        std::vector<double> folds;
        for (std::size_t f = 0; f < k; ++f) {
            const Matrix x_train = select_rows(x, train_rows[f]);
            const Matrix x_val = select_rows(x, val_rows[f]);
            Vector y_train, y_val;
            for (auto i : train_rows[f]) y_train.push_back(y[i]);
            for (auto i : val_rows[f]) y_val.push_back(y[i]);
            const Vector pred = fit_predict(grid[g], x_train, y_train, x_val, seed);
            folds.push_back(rmse(pred, y_val));
        }
        double mean = 0.0;
        for (double r : folds) mean += r;
        mean /= static_cast<double>(k);
        if (!std::isfinite(mean)) mean = std::numeric_limits<double>::infinity();
        out.mean_rmse.push_back(mean);
        out.fold_rmse.push_back(std::move(folds));
        if (mean < best) {
            best = mean;
            out.best_index = g;
        }
    }
    out.best = grid[out.best_index];
    return out;
}

/// C in {0.1, 1, 10, 100}, gamma in {0.01, 0.1, 1}, epsilon in {0.001, 0.01}.
[[nodiscard]] std::vector<SvrParams> default_svr_grid();
/// trees in {50, 100, 200}, depth in {3, 5, 10, unlimited}, min split in {2, 5, 10}.
[[nodiscard]] std::vector<ForestParams> default_forest_grid();

}  // namespace moldweight::classic
