#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "moldweight/errors.hpp"
#include "moldweight/nn.hpp"
#include "nn_oracle.hpp"

using namespace moldweight;
using namespace moldweight::nn;
using namespace nn_oracle;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(r, c);
    for (auto& v : m.values()) v = g(rng);
    return m;
}

LstmParams random_lstm(std::size_t hidden, std::size_t input, Rng& rng) {
    LstmParams p = LstmParams::zeros(hidden, input);
    for (auto& t : p.tensors("")) *t.tensor = random_matrix(t.tensor->rows(), t.tensor->cols(), rng, 0.5);
    return p;
}

Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Vector v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

std::vector<const Matrix*> as_const(std::vector<NamedTensor> tensors) {
    std::vector<const Matrix*> out;
    for (auto& t : tensors) out.push_back(t.tensor);
    return out;
}

}  // namespace

TEST_CASE("matrix shape checks") {
    CHECK_THROWS_AS(Matrix(2, 2, Vector{1, 2, 3}), Error);
    const Matrix m(2, 3, Vector{1, 2, 3, 4, 5, 6});
    CHECK(m(1, 0) == 4);
    CHECK(m.row(1)[2] == 6);
    CHECK(Matrix::column(Vector{1, 2}).rows() == 2);
}

TEST_CASE("lstm_step analytic examples") {
    auto p = LstmParams::zeros(3, 2);
    const auto s = lstm_step(p, Vector{0.4, -7.0}, LstmState::zeros(3));
    for (double v : s.h) CHECK(v == 0.0);
    for (double v : s.c) CHECK(v == 0.0);
    LstmStepCache cache;
    const auto s2 = lstm_step(p, Vector{1.0, 2.0}, LstmState{Vector(3, 0.0), Vector(3, 1.0)}, &cache);
    for (double g : cache.f) CHECK(g == 0.5);
    for (double v : s2.c) CHECK(v == doctest::Approx(0.5));
    for (double v : s2.h) CHECK(v == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-12));
    CHECK(s2.h[0] == doctest::Approx(0.2311).epsilon(1e-3));
}

TEST_CASE("lstm matches the scalar oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const auto p = random_lstm(2 + seed % 3, 3, rng);
        std::vector<Vector> window;
        for (int t = 0; t < 5; ++t) window.push_back(random_vector(3, rng));
        LstmState state = LstmState::zeros(p.hidden());
        for (const auto& x : window) {
            const auto fast = lstm_step(p, x, state);
            state = oracle_lstm_step(p, x, state);
            for (std::size_t j = 0; j < p.hidden(); ++j) {
                CHECK(fast.h[j] == doctest::Approx(state.h[j]).epsilon(1e-13));
                CHECK(fast.c[j] == doctest::Approx(state.c[j]).epsilon(1e-13));
                CHECK(std::abs(fast.h[j]) < 1.0);
            }
        }
        const auto h = lstm_forward(p, window);
        for (std::size_t j = 0; j < p.hidden(); ++j) CHECK(h[j] == doctest::Approx(state.h[j]).epsilon(1e-13));
        // L = 1 is a single step from the zero state.
        const auto one = lstm_forward(p, std::span<const Vector>(window).first(1));
        const auto step = lstm_step(p, window[0], LstmState::zeros(p.hidden()));
        CHECK(one == step.h);
    }
}

TEST_CASE("lstm gates stay in (0, 1)") {
    Rng rng(9);
    const auto p = random_lstm(4, 3, rng);
    LstmStepCache cache;
    (void)lstm_step(p, random_vector(3, rng, 3.0), LstmState::zeros(4), &cache);
    for (const auto* gate : {&cache.f, &cache.i, &cache.o}) {
        for (double g : *gate) CHECK((g > 0.0 && g < 1.0));
    }
}

TEST_CASE("lstm errors") {
    const auto p = LstmParams::zeros(2, 3);
    CHECK(lstm_forward(p, std::vector<Vector>(4, Vector(3, 1.0))) == Vector(2, 0.0));
    try {
        (void)lstm_forward(p, std::vector<Vector>{});
        FAIL("expected EmptyWindow");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmptyWindow);
    }
    try {
        (void)lstm_step(p, Vector{1.0}, LstmState::zeros(2));
        FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ShapeMismatch);
    }
    try {
        (void)lstm_step(p, Vector{1.0, std::nan(""), 0.0}, LstmState::zeros(2));
        FAIL("expected NonFiniteInput");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonFiniteInput);
    }
    LstmParams grads = LstmParams::zeros(2, 3);
    try {
        lstm_backward(p, LstmTape{}, Vector(2, 1.0), grads);
        FAIL("expected IncompleteTape");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::IncompleteTape);
    }
}

TEST_CASE("attention matches the loop oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(100 + seed);
        const std::size_t embed = 1 + seed % 3, d = 4;
        const auto p = AttentionParams::init(embed, 4, 1 + seed % 2, rng);
        const auto x = random_matrix(d, embed, rng);
        const auto fast = self_attention(p, x);
        const auto slow = oracle_attention(p, x);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) CHECK(fast.weights(i, j) == doctest::Approx(slow.weights[i][j]).epsilon(1e-13));
            for (std::size_t a = 0; a < fast.output.cols(); ++a) {
                CHECK(fast.output(i, a) == doctest::Approx(slow.out[i][a]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("attention structural properties") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const auto p = AttentionParams::init(1, 4, 1, rng);
        const auto x = random_matrix(6, 1, rng, 2.0);
        const auto r = self_attention(p, x);
        for (std::size_t i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                sum += r.weights(i, j);
                CHECK((r.weights(i, j) > 0.0 && r.weights(i, j) < 1.0));
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
        const auto single = self_attention(p, Matrix(1, 1, Vector{x[0]}));
        CHECK(single.weights(0, 0) == 1.0);
        CHECK(single.output(0, 0) == doctest::Approx(x[0] * p.w_v(0, 0)).epsilon(1e-15));
        const auto same = self_attention(p, Matrix(3, 1, Vector(3, x[1])));
        for (double w : same.weights.values()) CHECK(std::abs(w - 1.0 / 3.0) < 1e-12);
    }
    Rng rng(1);
    CHECK_THROWS_AS((void)self_attention(AttentionParams::init(2, 4, 1, rng), Matrix(3, 1)), Error);
}

TEST_CASE("softmax is shift invariant per row") {
    Rng rng(4);
    const auto s = random_matrix(5, 5, rng, 3.0);
    auto shifted = s;
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) shifted(i, j) += 100.0 + static_cast<double>(i);
    }
    const auto a = softmax_rows(s), b = softmax_rows(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
}

TEST_CASE("mlp forward contracts") {
    Rng rng(3);
    auto mlp = Mlp::init(4, 5, rng);
    const Vector x = random_vector(4, rng);
    // Plain two-layer evaluation.
    double expected = mlp.output.bias(0, 0);
    for (std::size_t j = 0; j < 5; ++j) {
        double pre = mlp.hidden.bias(j, 0);
        for (std::size_t k = 0; k < 4; ++k) pre += mlp.hidden.weight(j, k) * x[k];
        expected += mlp.output.weight(0, j) * std::max(0.0, pre);
    }
    CHECK(mlp_forward(mlp, 0.3, false, x) == doctest::Approx(expected).epsilon(1e-14));
    Rng drop(1);
    CHECK(mlp_forward(mlp, 0.0, true, x, &drop) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(mlp_forward(mlp, 0.3, false, x) == mlp_forward(mlp, 0.3, false, x));

    auto zero = mlp;
    zero.hidden.weight.fill(0.0);
    zero.output.weight.fill(0.0);
    zero.output.bias(0, 0) = 0.75;
    CHECK(mlp_forward(zero, 0.3, false, x) == 0.75);

    // Inverted dropout: mask entries are 0 or 1/(1-p).
    MlpTape tape;
    Rng r2(5);
    (void)mlp_forward(mlp, 0.5, true, x, &r2, &tape);
    for (double m : tape.mask) CHECK((m == 0.0 || m == doctest::Approx(2.0)));
    CHECK_THROWS_AS((void)mlp_forward(mlp, 1.0, false, x), Error);
    CHECK_THROWS_AS((void)mlp_forward(mlp, 0.3, false, Vector(3, 0.0)), Error);
}

TEST_CASE("mse loss and gradient") {
    CHECK(mse_loss(Vector{1, 2}, Vector{1, 2}) == 0.0);
    CHECK(mse_loss(Vector{0, 0}, Vector{1, -1}) == 1.0);
    CHECK(mse_loss(Vector{1, 2}, Vector{3, 2}) == 2.0);
    CHECK(mse_gradient(Vector{1, 2}, Vector{3, 2}) == Vector{-2.0, 0.0});
    try {
        (void)mse_loss(Vector{1}, Vector{1, 2});
        FAIL("expected LengthMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::LengthMismatch);
    }
}

TEST_CASE("dense gradient matches the closed form") {
    // Single output dense layer, MSE over n samples: dL/dw = 2/n X^T (yhat - y).
    Rng rng(8);
    Dense layer = Dense::init(3, 1, rng);
    const std::size_t n = 6;
    std::vector<Vector> xs;
    Vector ys;
    for (std::size_t i = 0; i < n; ++i) {
        xs.push_back(random_vector(3, rng));
        ys.push_back(rng() % 7 * 0.1);
    }
    Dense grads{Matrix(1, 3), Matrix(1, 1)};
    Vector closed(3, 0.0);
    double closed_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double yhat = dense_forward(layer, xs[i])[0];
        const double d = 2.0 / n * (yhat - ys[i]);
        dense_backward(layer, xs[i], Vector{d}, grads);
        for (std::size_t k = 0; k < 3; ++k) closed[k] += d * xs[i][k];
        closed_b += d;
    }
    for (std::size_t k = 0; k < 3; ++k) CHECK(grads.weight[k] == doctest::Approx(closed[k]).epsilon(1e-14));
    CHECK(grads.bias[0] == doctest::Approx(closed_b).epsilon(1e-14));

    auto loss = [&] {
        Vector pred;
        for (const auto& x : xs) pred.push_back(dense_forward(layer, x)[0]);
        return mse_loss(pred, ys);
    };
    std::vector<NamedTensor> params{{"w", &layer.weight}, {"b", &layer.bias}};
    std::vector<const Matrix*> analytic{&grads.weight, &grads.bias};
    const auto report = grad_check(loss, params, analytic, 1e-5, 1e-6);
    CHECK(report.passed);

    // Negative control: a corrupted entry must be caught.
    auto corrupted = grads;
    corrupted.weight[1] += 0.01;
    std::vector<const Matrix*> wrong{&corrupted.weight, &corrupted.bias};
    const auto bad = grad_check(loss, params, wrong, 1e-5, 1e-6);
    CHECK_FALSE(bad.passed);
    CHECK(bad.worst_tensor == "w");
    CHECK(bad.worst_index == 1);
}

TEST_CASE("lstm -> attention -> mlp gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(500 + seed);
        auto lstm = random_lstm(2, 3, rng);
        auto att = AttentionParams::init(1, 2, 1, rng);
        auto mlp = Mlp::init(5, 3, rng);
        std::vector<Vector> window;
        for (int t = 0; t < 3; ++t) window.push_back(random_vector(3, rng));
        const Vector direct = random_vector(3, rng);
        const double target = 0.3;

        auto forward = [&](LstmTape* lt, AttentionTape* at, MlpTape* mt, Vector* fused) {
            Vector f = lstm_forward(lstm, window, lt);
            f.insert(f.end(), direct.begin(), direct.end());
            const auto r = self_attention(att, Matrix::column(f), at);
            Vector head(r.output.values().begin(), r.output.values().end());
            if (fused) *fused = f;
            return mlp_forward(mlp, 0.0, false, head, nullptr, mt);
        };
        auto loss = [&] {
            const double e = forward(nullptr, nullptr, nullptr, nullptr) - target;
            return e * e;
        };

        LstmTape lt;
        AttentionTape at;
        MlpTape mt;
        Vector fused;
        const double pred = forward(&lt, &at, &mt, &fused);
        LstmParams g_lstm = LstmParams::zeros(2, 3);
        AttentionParams g_att{Matrix(1, 2), Matrix(1, 2), Matrix(1, 1)};
        Mlp g_mlp{{Matrix(3, 5), Matrix(3, 1)}, {Matrix(1, 3), Matrix(1, 1)}};
        Vector d_head(5, 0.0);
        mlp_backward(mlp, mt, 2.0 * (pred - target), g_mlp, d_head);
        Matrix d_tokens;
        attention_backward(att, at, Matrix(5, 1, d_head), g_att, &d_tokens);
        lstm_backward(lstm, lt, Vector{d_tokens[0], d_tokens[1]}, g_lstm);

        std::vector<NamedTensor> params;
        for (auto& t : lstm.tensors("lstm.")) params.push_back(t);
        for (auto& t : att.tensors("att.")) params.push_back(t);
        for (auto& t : mlp.tensors("mlp.")) params.push_back(t);
        std::vector<const Matrix*> analytic;
        for (auto* m : as_const(g_lstm.tensors(""))) analytic.push_back(m);
        for (auto* m : as_const(g_att.tensors(""))) analytic.push_back(m);
        for (auto* m : as_const(g_mlp.tensors(""))) analytic.push_back(m);
        const auto report = grad_check(loss, params, analytic, 1e-5, 1e-4);
        CHECK_MESSAGE(report.passed, "seed " << seed << " worst " << report.worst_tensor << " "
                                            << report.max_relative_error);
    }
}

TEST_CASE("parameters the loss ignores get exactly zero gradient") {
    Rng rng(2);
    auto mlp = Mlp::init(3, 4, rng);
    mlp.output.weight(0, 2) = 0.0;  // hidden unit 2 is disconnected from the output
    MlpTape tape;
    (void)mlp_forward(mlp, 0.0, false, Vector{0.5, -1.0, 2.0}, nullptr, &tape);
    Mlp grads{{Matrix(4, 3), Matrix(4, 1)}, {Matrix(1, 4), Matrix(1, 1)}};
    mlp_backward(mlp, tape, 1.0, grads);
    for (std::size_t k = 0; k < 3; ++k) CHECK(grads.hidden.weight(2, k) == 0.0);
    CHECK(grads.hidden.bias(2, 0) == 0.0);
}

TEST_CASE("adamw examples") {
    Matrix theta(1, 3, Vector{1.0, -2.0, 0.5});
    const Matrix zero(1, 3);
    std::vector<Matrix*> params{&theta};
    std::vector<const Matrix*> grads{&zero};

    AdamW plain({0.0005, 0.9, 0.999, 1e-8, 0.0});
    plain.step(params, grads);
    CHECK(theta == Matrix(1, 3, Vector{1.0, -2.0, 0.5}));

    AdamW decay({0.0005, 0.9, 0.999, 1e-8, 0.01});
    decay.step(params, grads);
    CHECK(theta[0] == doctest::Approx(1.0 * (1 - 5e-6)).epsilon(1e-15));
    CHECK(theta[1] == doctest::Approx(-2.0 * (1 - 5e-6)).epsilon(1e-15));

    Matrix scalar(1, 1, Vector{3.0});
    const Matrix one(1, 1, Vector{1.0});
    std::vector<Matrix*> sp{&scalar};
    std::vector<const Matrix*> sg{&one};
    AdamW adam({0.001, 0.9, 0.999, 1e-8, 0.0});
    adam.step(sp, sg);
    CHECK(scalar[0] == doctest::Approx(3.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(adam.steps() == 1);

    Matrix wrong(2, 2);
    std::vector<const Matrix*> bad{&wrong};
    CHECK_THROWS_AS(adam.step(sp, bad), Error);
}

TEST_CASE("adamw with zero decay equals a reference Adam trajectory") {
    Rng rng(11);
    Matrix theta = random_matrix(2, 3, rng);
    Vector ref(theta.values().begin(), theta.values().end());
    Vector m(6, 0.0), v(6, 0.0);
    AdamW opt({0.01, 0.9, 0.999, 1e-8, 0.0});
    std::vector<Matrix*> params{&theta};
    for (int t = 1; t <= 25; ++t) {
        Matrix g = random_matrix(2, 3, rng);
        std::vector<const Matrix*> grads{&g};
        opt.step(params, grads);
        for (std::size_t i = 0; i < 6; ++i) {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(theta[i] - ref[i]) < 1e-12);
}
