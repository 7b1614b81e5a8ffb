#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>

#include "doctest.h"
#include "moldweight/data.hpp"
#include "moldweight/errors.hpp"
#include "moldweight/tsa.hpp"

using namespace moldweight;
using namespace moldweight::data;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no exception");
    return ErrorKind::InvalidArgument;
}

Dataset tiny(std::size_t n) {
    Dataset ds;
    ds.channels = {"a", "b"};
    for (std::size_t i = 1; i <= n; ++i) {
        const double x = static_cast<double>(i);
        ds.records.push_back({static_cast<long>(i), {x, std::sin(x)}, 1.0 + 0.001 * x});
    }
    return ds;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double stdev(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / v.size());
}

}  // namespace

TEST_CASE("csv round trip") {
    const auto g = generate_synthetic({}, 4);
    const auto dir = std::filesystem::temp_directory_path() / "moldweight_test_data";
    std::filesystem::create_directories(dir);
    const auto path = dir / "d.csv";
    save_csv(g.dataset, path);
    CHECK(load_csv(path) == g.dataset);
    CHECK(load_csv(path, g.schema) == g.dataset);
    CHECK(parse_csv(format_csv(g.dataset)) == g.dataset);
    save_schema(g.schema, dir / "s.json");
    CHECK(load_schema(dir / "s.json").fingerprint() == g.schema.fingerprint());
    std::filesystem::remove_all(dir);

    for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 123456.789, 1e300}) CHECK(std::stod(format_real(v)) == v);
}

TEST_CASE("csv errors") {
    CHECK(kind_of([] { (void)parse_csv("mold_index,a,b\n1,2,3\n"); }) == ErrorKind::HeaderMismatch);
    CHECK(kind_of([] { (void)parse_csv("index,a,weight\n1,2,3\n"); }) == ErrorKind::HeaderMismatch);
    try {
        (void)parse_csv("mold_index,a,b,weight\n1,2,3,4\n2,2,oops,4\n");
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ParseError);
        const std::string msg = e.what();
        CHECK(msg.find("row 3") != std::string::npos);  // file line, header is row 1
        CHECK(msg.find("'b'") != std::string::npos);
    }
    CHECK(kind_of([] { (void)parse_csv("mold_index,a,weight\n2,1,1\n1,1,1\n"); }) ==
          ErrorKind::NonMonotonicMoldIndex);
    CHECK(kind_of([] { (void)parse_csv("mold_index,a,weight\n1,1\n"); }) == ErrorKind::ParseError);
    CHECK(kind_of([] { (void)load_csv("/nonexistent/file.csv"); }) == ErrorKind::Io);
    const auto g = generate_synthetic({}, 1);
    auto other = g.schema;
    std::swap(other.channels[0], other.channels[1]);
    const auto path = std::filesystem::temp_directory_path() / "moldweight_swap.csv";
    save_csv(g.dataset, path);
    CHECK(kind_of([&] { (void)load_csv(path, other); }) == ErrorKind::HeaderMismatch);
    std::filesystem::remove(path);
}

TEST_CASE("split examples") {
    const auto ds = tiny(400);
    const auto parts = split(ds);
    CHECK(parts.train.size() == 100);
    CHECK(parts.test.size() == 100);
    CHECK(parts.train.records.front().mold_index == 1);
    CHECK(parts.test.records.front().mold_index == 101);
    CHECK(kind_of([] { (void)split(tiny(150)); }) == ErrorKind::InsufficientData);
    const auto custom = split(ds, {1, 50, 51, 80});
    CHECK(custom.train.size() == 50);
    CHECK(custom.test.size() == 30);
    CHECK(slice(ds, 10, 12).size() == 3);
}

TEST_CASE("windowing") {
    const auto ds = tiny(100);
    CHECK(make_windows(ds, 1).size() == 100);
    const auto w = make_windows(ds, 5);
    CHECK(w.size() == 96);
    const auto it = std::find_if(w.begin(), w.end(), [](const WindowSample& s) { return s.mold_index == 10; });
    REQUIRE(it != w.end());
    for (std::size_t k = 0; k < 5; ++k) CHECK(it->history[k] == ds.records[5 + k].features);
    for (const auto& s : w) {
        CHECK(s.current() == ds.records[s.mold_index - 1].features);
        CHECK(s.weight == ds.records[s.mold_index - 1].weight);
    }
    // Test windows may reach back into the training range.
    const auto test = make_windows(ds, 5, 51, 60);
    CHECK(test.size() == 10);
    CHECK(test.front().history.front() == ds.records[46].features);
    CHECK(make_windows(tiny(3), 5).empty());
}

TEST_CASE("quantize examples") {
    const QuantizationSpec spec{30.0, {}, Rounding::HalfAwayFromZero};
    const std::vector<double> v{2827.43, 1000.0, 0.0, -1000.0};
    const auto q = quantize(v, spec);
    CHECK(q == std::vector<double>{4.0, 1.0, 0.0, -1.0});
    // Exact halves: 4 v / (pi D^2) = 0.5 and 2.5.
    const double half = 0.5 * std::numbers::pi * 900.0 / 4.0;
    CHECK(quantize(std::vector<double>{half, 5 * half}, spec) == std::vector<double>{1.0, 3.0});
    const QuantizationSpec even{30.0, {}, Rounding::HalfToEven};
    CHECK(quantize(std::vector<double>{half, 5 * half}, even) == std::vector<double>{0.0, 2.0});

    const auto g = generate_synthetic({}, 2);
    QuantizationSpec ds_spec;
    ds_spec.channels = default_quantized_channels();
    REQUIRE_FALSE(ds_spec.channels.empty());
    const auto out = quantize(g.dataset, ds_spec);
    for (const auto& name : ds_spec.channels) {
        const auto idx = *g.dataset.find(name);
        for (double x : out.column(idx)) CHECK(x == std::round(x));
    }
    // Untouched channels are copied verbatim.
    const auto idx0 = std::size_t{0};
    if (std::find(ds_spec.channels.begin(), ds_spec.channels.end(), g.dataset.channels[0]) == ds_spec.channels.end()) {
        CHECK(out.column(idx0) == g.dataset.column(idx0));
    }
    ds_spec.channels.push_back("missing");
    CHECK(kind_of([&] { (void)quantize(g.dataset, ds_spec); }) == ErrorKind::UnknownChannelName);
}

TEST_CASE("standardization") {
    const auto g = generate_synthetic({}, 6);
    const auto train = split(g.dataset).train;
    const auto stats = standardize_fit(train);
    const auto z = standardize_apply(stats, train);
    for (std::size_t c = 0; c < z.channels.size(); ++c) {
        const auto col = z.column(c);
        CHECK(std::abs(mean(col)) < 1e-9);
        CHECK(std::abs(stdev(col) - 1.0) < 1e-9);
    }
    const auto back = standardize_invert(stats, z);
    for (std::size_t i = 0; i < back.size(); ++i) {
        for (std::size_t c = 0; c < back.channels.size(); ++c) {
            CHECK(std::abs(back.records[i].features[c] - train.records[i].features[c]) <=
                  1e-12 * std::max(1.0, std::abs(train.records[i].features[c])));
        }
    }
    CHECK(stats.destandardize_target(stats.standardize_target(1.234)) == doctest::Approx(1.234).epsilon(1e-14));

    auto flat = tiny(20);
    for (auto& r : flat.records) r.features[1] = 3.0;
    CHECK(kind_of([&] { (void)standardize_fit(flat); }) == ErrorKind::ZeroVariance);
    auto constant_target = tiny(20);
    for (auto& r : constant_target.records) r.weight = 2.0;
    CHECK(standardize_fit(constant_target).target_std == 1.0);
}

TEST_CASE("generator determinism and trivial configuration") {
    CHECK(format_csv(generate_synthetic({}, 8).dataset) == format_csv(generate_synthetic({}, 8).dataset));
    CHECK(format_csv(generate_synthetic({}, 8).dataset) != format_csv(generate_synthetic({}, 9).dataset));

    GenConfig flat;
    flat.noise_std = 1e-300;
    flat.lag_weights.assign(4, 0.0);
    flat.nonsequential_coefficients.assign(flat.n_nonsequential, 0.0);
    for (const auto& r : generate_synthetic(flat, 3).dataset.records) CHECK(r.weight == doctest::Approx(1.0).epsilon(1e-15));

    GenConfig bad;
    bad.ar_coefficients.assign(8, 1.0);
    CHECK(kind_of([&] { (void)generate_synthetic(bad, 1); }) == ErrorKind::InvalidConfig);
    GenConfig zero_noise;
    zero_noise.noise_std = 0.0;
    CHECK(kind_of([&] { (void)generate_synthetic(zero_noise, 1); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("generated sequential channels follow their AR coefficient") {
    GenConfig config;
    config.n_molds = 10000;
    const auto g = generate_synthetic(config, 21);
    const double tol = 3.0 / std::sqrt(10000.0);
    for (std::size_t j = 0; j < config.n_sequential; ++j) {
        const auto r = tsa::acf(g.dataset.column(j), 1);
        CHECK(std::abs(r.coefficients[1] - g.truth.ar_coefficients[j]) < tol);
    }
}

TEST_CASE("no predictor beats the noise floor") {
    // The Bayes predictor rebuilt from the ground truth and the recorded
    // channels; its residual is exactly the injected noise, so across seeds
    // its RMSE sits at sigma_w.
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto g = generate_synthetic({}, seed);
        const auto& t = g.truth;
        const std::size_t n_seq = t.ar_coefficients.size();
        auto latent = [&](std::size_t mold, std::size_t c) {
            return (g.dataset.records[mold].features[c] - t.channel_offset[c]) / t.channel_scale[c];
        };
        double sse = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 100; i < 200; ++i) {
            double w = t.base_weight;
            for (std::size_t j = 0; j < t.nonsequential_coefficients.size(); ++j) {
                w += t.nonsequential_coefficients[j] * latent(i, n_seq + j);
            }
            for (std::size_t l = 1; l <= t.lag_weights.size(); ++l) {
                double p = 0.0;
                for (std::size_t j = 0; j < n_seq; ++j) p += t.sequential_direction[j] * latent(i - l, j);
                w += t.lag_weights[l - 1] * std::tanh(p);
            }
            const double e = w - g.dataset.records[i].weight;
            sse += e * e;
            ++n;
        }
        total += std::sqrt(sse / n) / t.noise_std;
    }
    CHECK(total / 10.0 >= 0.8);
    CHECK(total / 10.0 <= 1.2);
}
