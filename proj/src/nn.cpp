#include "moldweight/nn.hpp"

#include <algorithm>
#include <cmath>

#include "moldweight/errors.hpp"

namespace moldweight::nn {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols) {
        raise(ErrorKind::ShapeMismatch, "matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                                            std::to_string(data_.size()) + " entries");
    }
}

Matrix Matrix::column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void xavier_uniform(Matrix& m, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : m.values()) v = dist(rng);
}

namespace {

void require(bool condition, ErrorKind kind, const char* message) {
    if (!condition) raise(kind, message);
}

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// out = W z + b for W (rows x cols).
void affine(const Matrix& w, const Matrix& b, std::span<const double> z, Vector& out) {
    out.resize(w.rows());
    const std::size_t cols = w.cols();
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double* row = &w[r * cols];
        double acc = b[r];
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * z[c];
        out[r] = acc;
    }
}

// grad_w += da z^T, grad_b += da, dz += W^T da.
void affine_backward(const Matrix& w, std::span<const double> z, std::span<const double> da, Matrix& grad_w,
                     Matrix& grad_b, std::span<double> dz) {
    const std::size_t cols = w.cols();
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double g = da[r];
        if (g == 0.0) continue;
        grad_b[r] += g;
        double* grow = &grad_w[r * cols];
        const double* wrow = &w[r * cols];
        for (std::size_t c = 0; c < cols; ++c) grow[c] += g * z[c];
        if (!dz.empty()) {
            for (std::size_t c = 0; c < cols; ++c) dz[c] += g * wrow[c];
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// LSTM

LstmParams LstmParams::zeros(std::size_t hidden, std::size_t input) {
    LstmParams p;
    for (Matrix* w : {&p.w_f, &p.w_i, &p.w_o, &p.w_c}) *w = Matrix(hidden, hidden + input);
    for (Matrix* b : {&p.b_f, &p.b_i, &p.b_o, &p.b_c}) *b = Matrix(hidden, 1);
    return p;
}

LstmParams LstmParams::init(std::size_t hidden, std::size_t input, Rng& rng) {
    LstmParams p = zeros(hidden, input);
    const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Matrix* w : {&p.w_f, &p.w_i, &p.w_o, &p.w_c}) {
        for (double& v : w->values()) v = dist(rng);
    }
    p.b_f.fill(1.0);
    return p;
}

std::vector<NamedTensor> LstmParams::tensors(const std::string& prefix) {
    return {{prefix + "w_f", &w_f}, {prefix + "w_i", &w_i}, {prefix + "w_o", &w_o}, {prefix + "w_c", &w_c},
            {prefix + "b_f", &b_f}, {prefix + "b_i", &b_i}, {prefix + "b_o", &b_o}, {prefix + "b_c", &b_c}};
}

LstmState lstm_step(const LstmParams& params, std::span<const double> x, const LstmState& prev,
                    LstmStepCache* cache) {
    const std::size_t hidden = params.hidden();
    require(x.size() == params.input(), ErrorKind::ShapeMismatch, "lstm_step: input size differs from W columns");
    require(prev.h.size() == hidden && prev.c.size() == hidden, ErrorKind::ShapeMismatch,
            "lstm_step: state size differs from hidden size");
    require(all_finite(x) && all_finite(prev.h) && all_finite(prev.c), ErrorKind::NonFiniteInput,
            "lstm_step: non-finite input");

    LstmStepCache local;
    LstmStepCache& s = cache ? *cache : local;
    s.z.resize(hidden + x.size());
    std::copy(prev.h.begin(), prev.h.end(), s.z.begin());
    std::copy(x.begin(), x.end(), s.z.begin() + static_cast<std::ptrdiff_t>(hidden));

    affine(params.w_f, params.b_f, s.z, s.f);
    affine(params.w_i, params.b_i, s.z, s.i);
    affine(params.w_o, params.b_o, s.z, s.o);
    affine(params.w_c, params.b_c, s.z, s.g);
    s.c_prev = prev.c;
    s.c.resize(hidden);
    s.tanh_c.resize(hidden);

    LstmState next{Vector(hidden), Vector(hidden)};
    for (std::size_t j = 0; j < hidden; ++j) {
        s.f[j] = sigmoid(s.f[j]);
        s.i[j] = sigmoid(s.i[j]);
        s.o[j] = sigmoid(s.o[j]);
        s.g[j] = std::tanh(s.g[j]);
        s.c[j] = s.f[j] * prev.c[j] + s.i[j] * s.g[j];
        s.tanh_c[j] = std::tanh(s.c[j]);
        next.c[j] = s.c[j];
        next.h[j] = s.o[j] * s.tanh_c[j];
    }
    return next;
}

Vector lstm_forward(const LstmParams& params, std::span<const Vector> window, LstmTape* tape) {
    require(!window.empty(), ErrorKind::EmptyWindow, "lstm_forward: empty window");
    LstmState state = LstmState::zeros(params.hidden());
    if (tape) tape->steps.resize(window.size());
    for (std::size_t t = 0; t < window.size(); ++t) {
        state = lstm_step(params, window[t], state, tape ? &tape->steps[t] : nullptr);
    }
    return state.h;
}

void lstm_backward(const LstmParams& params, const LstmTape& tape, std::span<const double> dh_last,
                   LstmParams& grads, std::vector<Vector>* dx) {
    require(!tape.steps.empty(), ErrorKind::IncompleteTape, "lstm_backward: tape holds no steps");
    const std::size_t hidden = params.hidden();
    const std::size_t input = params.input();
    require(dh_last.size() == hidden, ErrorKind::ShapeMismatch, "lstm_backward: dh size differs from hidden size");
    for (const auto& s : tape.steps) {
        require(s.z.size() == hidden + input && s.f.size() == hidden, ErrorKind::IncompleteTape,
                "lstm_backward: tape step was not recorded by these parameters");
    }
    if (dx) dx->assign(tape.steps.size(), Vector(input, 0.0));

    Vector dh(dh_last.begin(), dh_last.end());
    Vector dc(hidden, 0.0);
    Vector da_f(hidden), da_i(hidden), da_o(hidden), da_g(hidden);
    Vector dz(hidden + input);
    for (std::size_t t = tape.steps.size(); t-- > 0;) {
        const auto& s = tape.steps[t];
        for (std::size_t j = 0; j < hidden; ++j) {
            const double d_o = dh[j] * s.tanh_c[j];
            dc[j] += dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
            const double d_f = dc[j] * s.c_prev[j];
            const double d_i = dc[j] * s.g[j];
            const double d_g = dc[j] * s.i[j];
            da_f[j] = d_f * s.f[j] * (1.0 - s.f[j]);
            da_i[j] = d_i * s.i[j] * (1.0 - s.i[j]);
            da_o[j] = d_o * s.o[j] * (1.0 - s.o[j]);
            da_g[j] = d_g * (1.0 - s.g[j] * s.g[j]);
            dc[j] *= s.f[j];
        }
        std::fill(dz.begin(), dz.end(), 0.0);
        affine_backward(params.w_f, s.z, da_f, grads.w_f, grads.b_f, dz);
        affine_backward(params.w_i, s.z, da_i, grads.w_i, grads.b_i, dz);
        affine_backward(params.w_o, s.z, da_o, grads.w_o, grads.b_o, dz);
        affine_backward(params.w_c, s.z, da_g, grads.w_c, grads.b_c, dz);
        std::copy(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(hidden), dh.begin());
        if (dx) std::copy(dz.begin() + static_cast<std::ptrdiff_t>(hidden), dz.end(), (*dx)[t].begin());
    }
}

// ---------------------------------------------------------------------------
// Attention

AttentionParams AttentionParams::init(std::size_t embed, std::size_t d_k, std::size_t d_v, Rng& rng) {
    AttentionParams p{Matrix(embed, d_k), Matrix(embed, d_k), Matrix(embed, d_v)};
    xavier_uniform(p.w_q, rng);
    xavier_uniform(p.w_k, rng);
    xavier_uniform(p.w_v, rng);
    return p;
}

std::vector<NamedTensor> AttentionParams::tensors(const std::string& prefix) {
    return {{prefix + "w_q", &w_q}, {prefix + "w_k", &w_k}, {prefix + "w_v", &w_v}};
}

namespace {

// a (n x m) * b (m x p)
Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

// a^T b for a (m x n), b (m x p)
Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
        }
    }
    return out;
}

// a b^T for a (n x m), b (p x m)
Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
            out(i, j) = acc;
        }
    }
    return out;
}

void add_into(Matrix& target, const Matrix& delta) {
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += delta[i];
}

}  // namespace

Matrix softmax_rows(const Matrix& scores) {
    Matrix out(scores.rows(), scores.cols());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        double max = scores(r, 0);
        for (std::size_t c = 1; c < scores.cols(); ++c) max = std::max(max, scores(r, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < scores.cols(); ++c) {
            out(r, c) = std::exp(scores(r, c) - max);
            sum += out(r, c);
        }
        for (std::size_t c = 0; c < scores.cols(); ++c) out(r, c) /= sum;
    }
    return out;
}

AttentionResult self_attention(const AttentionParams& params, const Matrix& tokens, AttentionTape* tape) {
    require(tokens.rows() >= 1, ErrorKind::ShapeMismatch, "self_attention: need at least one token");
    require(tokens.cols() == params.w_q.rows() && tokens.cols() == params.w_k.rows() &&
                tokens.cols() == params.w_v.rows(),
            ErrorKind::ShapeMismatch, "self_attention: token width differs from projection input");
    require(params.w_q.cols() == params.w_k.cols() && params.w_q.cols() >= 1, ErrorKind::ShapeMismatch,
            "self_attention: W_q and W_k must share d_k >= 1");

    Matrix q = matmul(tokens, params.w_q);
    Matrix k = matmul(tokens, params.w_k);
    Matrix v = matmul(tokens, params.w_v);
    Matrix scores = matmul_nt(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.key_dim()));
    for (double& s : scores.values()) s *= scale;
    AttentionResult out;
    out.weights = softmax_rows(scores);
    out.output = matmul(out.weights, v);
    if (tape) {
        tape->x = tokens;
        tape->q = std::move(q);
        tape->k = std::move(k);
        tape->v = std::move(v);
        tape->a = out.weights;
    }
    return out;
}

void attention_backward(const AttentionParams& params, const AttentionTape& tape, const Matrix& d_output,
                        AttentionParams& grads, Matrix* d_tokens) {
    require(tape.a.rows() >= 1 && tape.x.rows() == tape.a.rows(), ErrorKind::IncompleteTape,
            "attention_backward: tape not recorded");
    require(d_output.rows() == tape.v.rows() && d_output.cols() == tape.v.cols(), ErrorKind::ShapeMismatch,
            "attention_backward: d_output shape differs from output");
    const std::size_t n = tape.a.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.key_dim()));

    const Matrix d_a = matmul_nt(d_output, tape.v);  // n x n
    const Matrix d_v = matmul_tn(tape.a, d_output);  // n x d_v
    Matrix d_s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += tape.a(i, j) * d_a(i, j);
        for (std::size_t j = 0; j < n; ++j) d_s(i, j) = tape.a(i, j) * (d_a(i, j) - dot) * scale;
    }
    const Matrix d_q = matmul(d_s, tape.k);     // n x d_k
    const Matrix d_k = matmul_tn(d_s, tape.q);  // n x d_k

    add_into(grads.w_q, matmul_tn(tape.x, d_q));
    add_into(grads.w_k, matmul_tn(tape.x, d_k));
    add_into(grads.w_v, matmul_tn(tape.x, d_v));
    if (d_tokens) {
        *d_tokens = matmul_nt(d_q, params.w_q);
        add_into(*d_tokens, matmul_nt(d_k, params.w_k));
        add_into(*d_tokens, matmul_nt(d_v, params.w_v));
    }
}

// ---------------------------------------------------------------------------
// Dense / MLP

Dense Dense::init(std::size_t in, std::size_t out, Rng& rng) {
    Dense d{Matrix(out, in), Matrix(out, 1)};
    xavier_uniform(d.weight, rng);
    return d;
}

Vector dense_forward(const Dense& layer, std::span<const double> x) {
    require(x.size() == layer.in(), ErrorKind::ShapeMismatch, "dense_forward: input size differs from layer");
    Vector y;
    affine(layer.weight, layer.bias, x, y);
    return y;
}

void dense_backward(const Dense& layer, std::span<const double> x, std::span<const double> dy, Dense& grads,
                    std::span<double> dx) {
    require(dy.size() == layer.out() && x.size() == layer.in(), ErrorKind::ShapeMismatch,
            "dense_backward: shape mismatch");
    affine_backward(layer.weight, x, dy, grads.weight, grads.bias, dx);
}

Mlp Mlp::init(std::size_t in, std::size_t width, Rng& rng) {
    Mlp m;
    m.hidden = Dense::init(in, width, rng);
    m.output = Dense::init(width, 1, rng);
    return m;
}

std::vector<NamedTensor> Mlp::tensors(const std::string& prefix) {
    return {{prefix + "hidden.weight", &hidden.weight},
            {prefix + "hidden.bias", &hidden.bias},
            {prefix + "output.weight", &output.weight},
            {prefix + "output.bias", &output.bias}};
}

double mlp_forward(const Mlp& mlp, double dropout_rate, bool training, std::span<const double> x, Rng* rng,
                   MlpTape* tape) {
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorKind::InvalidArgument, "dropout rate must be in [0, 1)");
    require(mlp.hidden.out() == mlp.output.in() && mlp.output.out() == 1, ErrorKind::ShapeMismatch,
            "mlp_forward: layer shapes do not chain");
    const bool drop = training && dropout_rate > 0.0;
    require(!drop || rng != nullptr, ErrorKind::InvalidArgument, "mlp_forward: dropout needs an rng");

    MlpTape local;
    MlpTape& t = tape ? *tape : local;
    t.x.assign(x.begin(), x.end());
    t.pre = dense_forward(mlp.hidden, x);
    const std::size_t width = t.pre.size();
    t.mask.assign(width, 1.0);
    if (drop) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double keep_scale = 1.0 / (1.0 - dropout_rate);
        for (double& m : t.mask) m = unit(*rng) < dropout_rate ? 0.0 : keep_scale;
    }
    t.act.resize(width);
    for (std::size_t j = 0; j < width; ++j) t.act[j] = std::max(0.0, t.pre[j]) * t.mask[j];
    return dense_forward(mlp.output, t.act)[0];
}

void mlp_backward(const Mlp& mlp, const MlpTape& tape, double d_output, Mlp& grads, std::span<double> dx) {
    require(tape.act.size() == mlp.hidden.out() && tape.x.size() == mlp.hidden.in(), ErrorKind::IncompleteTape,
            "mlp_backward: tape not recorded");
    const std::size_t width = tape.act.size();
    Vector d_act(width, 0.0);
    const double dy[1] = {d_output};
    dense_backward(mlp.output, tape.act, dy, grads.output, d_act);
    Vector d_pre(width);
    for (std::size_t j = 0; j < width; ++j) d_pre[j] = tape.pre[j] > 0.0 ? d_act[j] * tape.mask[j] : 0.0;
    dense_backward(mlp.hidden, tape.x, d_pre, grads.hidden, dx);
}

// ---------------------------------------------------------------------------
// Loss / optimizer

double mse_loss(std::span<const double> pred, std::span<const double> target) {
    require(pred.size() == target.size(), ErrorKind::LengthMismatch, "mse_loss: length mismatch");
    require(!pred.empty(), ErrorKind::LengthMismatch, "mse_loss: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (target[i] - pred[i]) * (target[i] - pred[i]);
    return acc / static_cast<double>(pred.size());
}

Vector mse_gradient(std::span<const double> pred, std::span<const double> target) {
    require(pred.size() == target.size() && !pred.empty(), ErrorKind::LengthMismatch, "mse_gradient: length mismatch");
    Vector g(pred.size());
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
    return g;
}

void AdamW::step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
    require(params.size() == grads.size(), ErrorKind::ShapeMismatch, "AdamW: parameter/gradient count mismatch");
    if (m_.empty()) {
        for (const Matrix* p : params) {
            m_.emplace_back(p->rows(), p->cols());
            v_.emplace_back(p->rows(), p->cols());
        }
    }
    require(m_.size() == params.size(), ErrorKind::ShapeMismatch, "AdamW: parameter set changed between steps");
    ++t_;
    const auto& c = config_;
    const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix& theta = *params[p];
        const Matrix& g = *grads[p];
        require(theta.same_shape(g) && theta.same_shape(m_[p]), ErrorKind::ShapeMismatch,
                "AdamW: gradient shape differs from parameter");
        for (std::size_t i = 0; i < theta.size(); ++i) {
            theta[i] -= c.lr * c.weight_decay * theta[i];
            m_[p][i] = c.beta1 * m_[p][i] + (1.0 - c.beta1) * g[i];
            v_[p][i] = c.beta2 * v_[p][i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = m_[p][i] / bias1;
            const double v_hat = v_[p][i] / bias2;
            theta[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const NamedTensor> params,
                           std::span<const Matrix* const> analytic, double epsilon, double tolerance) {
    require(params.size() == analytic.size(), ErrorKind::ShapeMismatch, "grad_check: tensor count mismatch");
    constexpr double floor = 1e-6;
    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix& theta = *params[p].tensor;
        require(theta.same_shape(*analytic[p]), ErrorKind::ShapeMismatch, "grad_check: gradient shape mismatch");
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + epsilon;
            const double up = loss();
            theta[i] = saved - epsilon;
            const double down = loss();
            theta[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = (*analytic[p])[i];
            const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), floor});
            ++report.entries_checked;
            if (rel > report.max_relative_error || !std::isfinite(rel)) {
                report.max_relative_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
                report.worst_tensor = params[p].name;
                report.worst_index = i;
            }
        }
    }
    report.passed = report.max_relative_error < tolerance;
    return report;
}

}  // namespace moldweight::nn
