#pragma once

// Differentiable kernels for the weight regressor: LSTM cell, feature
// self-attention, a one-hidden-layer ReLU network with inverted dropout, MSE
// and AdamW. Each kernel records what its backward pass needs in a tape
// struct; the backward functions accumulate (+=) into gradient tensors of the
// same shapes as the parameters.

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace moldweight::nn {

using Vector = std::vector<double>;
using Rng = std::mt19937_64;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// Throws ShapeMismatch when values.size() != rows * cols.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    [[nodiscard]] static Matrix column(std::span<const double> values);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const double& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    const double& operator[](std::size_t i) const noexcept { return data_[i]; }

    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return std::span<const double>(data_).subspan(r * cols_, cols_);
    }

    void fill(double value) noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// A parameter tensor exposed to optimizers and gradient checks.
struct NamedTensor {
    std::string name;
    Matrix* tensor = nullptr;
};

[[nodiscard]] double sigmoid(double x) noexcept;

/// Uniform Glorot initialization over (rows + cols).
void xavier_uniform(Matrix& m, Rng& rng);

// ---------------------------------------------------------------------------
// LSTM

/// Gate weights act on the concatenation [h_{t-1}; x_t].
struct LstmParams {
    Matrix w_f, w_i, w_o, w_c;  // hidden x (hidden + input)
    Matrix b_f, b_i, b_o, b_c;  // hidden x 1

    [[nodiscard]] static LstmParams zeros(std::size_t hidden, std::size_t input);
    /// Weights uniform in +-1/sqrt(hidden), biases zero except b_f = 1.
    [[nodiscard]] static LstmParams init(std::size_t hidden, std::size_t input, Rng& rng);

    [[nodiscard]] std::size_t hidden() const noexcept { return w_f.rows(); }
    [[nodiscard]] std::size_t input() const noexcept { return w_f.cols() - w_f.rows(); }
    [[nodiscard]] std::vector<NamedTensor> tensors(const std::string& prefix);
};

struct LstmState {
    Vector h;
    Vector c;

    [[nodiscard]] static LstmState zeros(std::size_t hidden) { return {Vector(hidden, 0.0), Vector(hidden, 0.0)}; }
};

struct LstmStepCache {
    Vector z;  // [h_{t-1}; x_t]
    Vector f, i, o, g;
    Vector c_prev, c, tanh_c;
};

struct LstmTape {
    std::vector<LstmStepCache> steps;
};

/// One cell update. Throws ShapeMismatch or NonFiniteInput.
[[nodiscard]] LstmState lstm_step(const LstmParams& params, std::span<const double> x, const LstmState& prev,
                                  LstmStepCache* cache = nullptr);

/// Folds lstm_step over `window` from the zero state and returns h_L.
/// Throws EmptyWindow.
[[nodiscard]] Vector lstm_forward(const LstmParams& params, std::span<const Vector> window,
                                  LstmTape* tape = nullptr);

/// Backpropagation through time from dL/dh_L. `dx`, when given, receives one
/// input gradient per step. Throws IncompleteTape.
void lstm_backward(const LstmParams& params, const LstmTape& tape, std::span<const double> dh_last,
                   LstmParams& grads, std::vector<Vector>* dx = nullptr);

// ---------------------------------------------------------------------------
// Self-attention

struct AttentionParams {
    Matrix w_q;  // embed x d_k
    Matrix w_k;  // embed x d_k
    Matrix w_v;  // embed x d_v

    [[nodiscard]] static AttentionParams init(std::size_t embed, std::size_t d_k, std::size_t d_v, Rng& rng);
    [[nodiscard]] std::size_t key_dim() const noexcept { return w_q.cols(); }
    [[nodiscard]] std::vector<NamedTensor> tensors(const std::string& prefix);
};

struct AttentionResult {
    Matrix output;   // tokens x d_v
    Matrix weights;  // tokens x tokens, row-stochastic
};

struct AttentionTape {
    Matrix x, q, k, v, a;
};

/// Row-wise softmax with max subtraction.
[[nodiscard]] Matrix softmax_rows(const Matrix& scores);

/// SoftMax(Q K^T / sqrt(d_k)) V with Q = X W_q, K = X W_k, V = X W_v.
/// Throws ShapeMismatch.
[[nodiscard]] AttentionResult self_attention(const AttentionParams& params, const Matrix& tokens,
                                             AttentionTape* tape = nullptr);

void attention_backward(const AttentionParams& params, const AttentionTape& tape, const Matrix& d_output,
                        AttentionParams& grads, Matrix* d_tokens = nullptr);

// ---------------------------------------------------------------------------
// Dense layers and the prediction head

struct Dense {
    Matrix weight;  // out x in
    Matrix bias;    // out x 1

    [[nodiscard]] static Dense init(std::size_t in, std::size_t out, Rng& rng);
    [[nodiscard]] std::size_t in() const noexcept { return weight.cols(); }
    [[nodiscard]] std::size_t out() const noexcept { return weight.rows(); }
};

[[nodiscard]] Vector dense_forward(const Dense& layer, std::span<const double> x);
void dense_backward(const Dense& layer, std::span<const double> x, std::span<const double> dy, Dense& grads,
                    std::span<double> dx = {});

/// dense -> ReLU -> inverted dropout -> dense(1).
struct Mlp {
    Dense hidden;
    Dense output;

    [[nodiscard]] static Mlp init(std::size_t in, std::size_t width, Rng& rng);
    [[nodiscard]] std::vector<NamedTensor> tensors(const std::string& prefix);
};

struct MlpTape {
    Vector x;
    Vector pre;   // hidden pre-activation
    Vector mask;  // 0 or 1/(1-p) per hidden unit; all ones at inference
    Vector act;   // relu(pre) * mask
};

/// Dropout is applied only when `training` is set, drawing from `rng`.
/// Throws ShapeMismatch or InvalidArgument (dropout outside [0, 1), or training
/// with dropout > 0 and no rng).
[[nodiscard]] double mlp_forward(const Mlp& mlp, double dropout_rate, bool training, std::span<const double> x,
                                 Rng* rng = nullptr, MlpTape* tape = nullptr);

void mlp_backward(const Mlp& mlp, const MlpTape& tape, double d_output, Mlp& grads, std::span<double> dx = {});

// ---------------------------------------------------------------------------
// Loss and optimizer

/// (1/n) sum (y_i - yhat_i)^2. Throws LengthMismatch.
[[nodiscard]] double mse_loss(std::span<const double> pred, std::span<const double> target);
/// d mse / d pred.
[[nodiscard]] Vector mse_gradient(std::span<const double> pred, std::span<const double> target);

struct AdamWConfig {
    double lr = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with bias correction plus decoupled weight decay
/// theta <- theta - lr * wd * theta, applied before the moment step.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    /// Throws ShapeMismatch when params and grads disagree, or when the
    /// parameter set changes shape between steps.
    void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads);

    [[nodiscard]] std::size_t steps() const noexcept { return t_; }
    [[nodiscard]] const AdamWConfig& config() const noexcept { return config_; }

private:
    AdamWConfig config_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    std::size_t entries_checked = 0;
    bool passed = false;
};

/// Compares `analytic[i]` against central differences of `loss` over every
/// entry of `params[i].tensor`. Relative error is |a - n| / max(|a|, |n|, floor)
/// with floor = 1e-6, so entries whose gradient is numerically zero are judged
/// on absolute error. Parameters are restored after probing.
[[nodiscard]] GradCheckReport grad_check(const std::function<double()>& loss, std::span<const NamedTensor> params,
                                         std::span<const Matrix* const> analytic, double epsilon, double tolerance);

}  // namespace moldweight::nn
