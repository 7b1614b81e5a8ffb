#include "moldweight/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "moldweight/errors.hpp"
#include "moldweight/special.hpp"

namespace moldweight::eval {

double rmse(std::span<const double> pred, std::span<const double> actual) {
    if (pred.size() != actual.size() || pred.empty()) {
        raise(ErrorKind::LengthMismatch, "rmse needs equal nonzero lengths, got " + std::to_string(pred.size()) +
                                             " and " + std::to_string(actual.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = actual[i] - pred[i];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

double student_t_cdf(double t, double df) {
    if (!(df >= 1.0) || !std::isfinite(df)) raise(ErrorKind::InvalidDf, "degrees of freedom must be >= 1");
    if (std::isnan(t)) raise(ErrorKind::NonFiniteInput, "t statistic is NaN");
    if (t == 0.0) return 0.5;
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double x = df / (df + t * t);
    const double tail = 0.5 * special::incomplete_beta(df / 2.0, 0.5, x);
    return t > 0 ? 1.0 - tail : tail;
}

std::string to_string(Pairing pairing) { return pairing == Pairing::Absolute ? "absolute" : "signed"; }

TTestResult paired_t_test(std::span<const double> errors_a, std::span<const double> errors_b, Pairing pairing) {
    if (errors_a.size() != errors_b.size() || errors_a.size() < 2) {
        raise(ErrorKind::LengthMismatch, "paired t-test needs two equal-length samples with n >= 2");
    }
    const std::size_t n = errors_a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = pairing == Pairing::Absolute ? std::abs(errors_a[i]) - std::abs(errors_b[i]) : errors_a[i] - errors_b[i];
    }
    TTestResult r;
    r.pairing = pairing;
    r.degrees_of_freedom = n - 1;
    if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; })) return r;

    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0) || sd <= 1e-14 * std::abs(mean)) {
        raise(ErrorKind::ZeroVarianceDifferences, "all paired differences are identical; t is undefined");
    }
    r.mean_difference = mean;
    r.sd_difference = sd;
    r.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
    const double upper = 1.0 - student_t_cdf(std::abs(r.t_statistic), static_cast<double>(n - 1));
    // The lower tail is more accurate for large |t|.
    const double lower = student_t_cdf(-std::abs(r.t_statistic), static_cast<double>(n - 1));
    r.p_value_two_sided = std::clamp(2.0 * std::min(upper, lower), 0.0, 1.0);
    return r;
}

std::string format_p_value(double p) {
    if (p < 1e-15) return "<1e-15";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", p);
    return buf;
}

std::vector<CdfPoint> error_cdf(std::span<const double> errors, bool absolute) {
    if (errors.empty()) raise(ErrorKind::LengthMismatch, "error_cdf needs at least one error");
    std::vector<double> v(errors.begin(), errors.end());
    if (absolute) {
        for (auto& e : v) e = std::abs(e);
    }
    std::sort(v.begin(), v.end());
    std::vector<CdfPoint> out;
    const double n = static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i + 1 < v.size() && v[i + 1] == v[i]) continue;  // ties collapse onto the last step
        out.push_back({v[i], static_cast<double>(i + 1) / n});
    }
    out.back().probability = 1.0;
    return out;
}

namespace {

double quantile_sorted(const std::vector<double>& s, double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double mean_of(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

nlohmann::json box_json(const BoxSummary& b) {
    return {{"n", b.n},       {"min", b.min}, {"q1", b.q1},     {"median", b.median},
            {"q3", b.q3},     {"max", b.max}, {"mean", b.mean}};
}

std::vector<double> absolute(std::span<const double> v) {
    std::vector<double> out;
    for (double x : v) out.push_back(std::abs(x));
    return out;
}

}  // namespace

BoxSummary box_summary(std::span<const double> values) {
    if (values.empty()) raise(ErrorKind::LengthMismatch, "box summary of an empty sample");
    std::vector<double> s(values.begin(), values.end());
    std::sort(s.begin(), s.end());
    BoxSummary b;
    b.n = s.size();
    b.min = s.front();
    b.max = s.back();
    b.q1 = quantile_sorted(s, 0.25);
    b.median = quantile_sorted(s, 0.5);
    b.q3 = quantile_sorted(s, 0.75);
    b.mean = mean_of(values);
    return b;
}

EvalReport make_report(const std::vector<model::Prediction>& predictions) {
    if (predictions.empty()) raise(ErrorKind::InsufficientData, "no predictions to evaluate");
    EvalReport r;
    for (const auto& p : predictions) {
        r.mold_index.push_back(p.mold_index);
        r.predicted.push_back(p.predicted);
        r.actual.push_back(p.actual);
        r.errors.push_back(p.actual - p.predicted);
    }
    r.rmse = rmse(r.predicted, r.actual);
    r.cdf = error_cdf(r.errors);
    r.abs_error_box = box_summary(absolute(r.errors));
    r.signed_error_box = box_summary(r.errors);
    return r;
}

nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json cdf = nlohmann::json::array();
    for (const auto& c : report.cdf) cdf.push_back({c.error, c.probability});
    return {{"rmse", report.rmse},
            {"n", report.errors.size()},
            {"mold_index", report.mold_index},
            {"predicted", report.predicted},
            {"actual", report.actual},
            {"errors", report.errors},
            {"cdf_points", cdf},
            {"abs_error_summary", box_json(report.abs_error_box)},
            {"signed_error_summary", box_json(report.signed_error_box)}};
}

std::string cdf_csv(std::span<const CdfPoint> cdf) {
    std::string out = "abs_error,cum_prob\n";
    for (const auto& c : cdf) out += data::format_real(c.error) + "," + data::format_real(c.probability) + "\n";
    return out;
}

std::string box_csv(const std::vector<std::pair<std::string, BoxSummary>>& rows) {
    std::string out = "label,n,min,q1,median,q3,max,mean\n";
    for (const auto& [label, b] : rows) {
        out += label + "," + std::to_string(b.n) + "," + data::format_real(b.min) + "," + data::format_real(b.q1) +
               "," + data::format_real(b.median) + "," + data::format_real(b.q3) + "," + data::format_real(b.max) +
               "," + data::format_real(b.mean) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Harnesses

CellResult run_cell(const data::Dataset& dataset, const data::FeatureSchema& schema, model::Variant variant,
                    std::uint64_t seed, const HarnessConfig& config) {
    const auto parts = data::split(dataset, config.split);
    model::ModelConfig mc = config.model;
    mc.variant = variant;
    model::TrainConfig tc = config.train;
    tc.seed = seed;
    auto trained = model::train(model::build(mc, schema, seed), parts.train, tc);
    const auto history = data::slice(dataset, dataset.records.front().mold_index, config.split.test_last);
    const auto preds = model::predict(trained.model, history, config.split.test_first, config.split.test_last);

    CellResult cell;
    cell.variant = variant;
    cell.seed = seed;
    cell.best_epoch = trained.best_epoch;
    std::vector<double> p, a;
    for (const auto& pr : preds) {
        cell.mold_index.push_back(pr.mold_index);
        cell.errors.push_back(pr.actual - pr.predicted);
        p.push_back(pr.predicted);
        a.push_back(pr.actual);
    }
    cell.rmse = rmse(p, a);
    return cell;
}

namespace {

/// Runs every job index in [0, n) on up to `threads` workers; rethrows the
/// first failure after all workers stop.
template <typename Job>
void parallel_for(std::size_t n, std::size_t threads, Job job) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::vector<std::vector<CellResult>> run_cells(const data::Dataset& dataset, const data::FeatureSchema& schema,
                                               const std::vector<model::Variant>& variants,
                                               const HarnessConfig& config) {
    if (config.seeds.empty()) raise(ErrorKind::InvalidConfig, "at least one seed is required");
    const std::size_t n_seeds = config.seeds.size();
    std::vector<std::vector<CellResult>> cells(variants.size(), std::vector<CellResult>(n_seeds));
    parallel_for(variants.size() * n_seeds, config.threads, [&](std::size_t job) {
        const std::size_t v = job / n_seeds, s = job % n_seeds;
        cells[v][s] = run_cell(dataset, schema, variants[v], config.seeds[s], config);
    });
    return cells;
}

VariantSummary summarize(const std::vector<CellResult>& cells, Pairing pairing) {
    VariantSummary s;
    s.variant = cells.front().variant;
    s.mold_index = cells.front().mold_index;
    s.paired_errors.assign(s.mold_index.size(), 0.0);
    for (const auto& c : cells) {
        s.rmse_per_seed.push_back(c.rmse);
        for (std::size_t i = 0; i < c.errors.size(); ++i) {
            s.paired_errors[i] += pairing == Pairing::Absolute ? std::abs(c.errors[i]) : c.errors[i];
            s.pooled_errors.push_back(c.errors[i]);
        }
    }
    for (auto& e : s.paired_errors) e /= static_cast<double>(cells.size());
    s.mean_rmse = mean_of(s.rmse_per_seed);
    s.std_rmse = std_of(s.rmse_per_seed);
    return s;
}

ComparisonReport assemble(const std::vector<std::vector<CellResult>>& cells, const HarnessConfig& config) {
    ComparisonReport r;
    r.seeds = config.seeds;
    r.pairing = config.pairing;
    for (const auto& row : cells) r.variants.push_back(summarize(row, config.pairing));
    const std::size_t k = r.variants.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.p_values.assign(k, std::vector<double>(k, nan));
    r.t_statistics.assign(k, std::vector<double>(k, nan));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            // Per-mold values are already |e| or e as the pairing requires.
            const auto t = paired_t_test(r.variants[i].paired_errors, r.variants[j].paired_errors, Pairing::Signed);
            r.p_values[i][j] = t.p_value_two_sided;
            r.t_statistics[i][j] = t.t_statistic;
        }
    }
    return r;
}

}  // namespace

ComparisonReport run_comparison(const data::Dataset& dataset, const data::FeatureSchema& schema,
                                const std::vector<model::Variant>& variants, const HarnessConfig& config) {
    if (variants.empty()) raise(ErrorKind::InvalidConfig, "at least one variant is required");
    return assemble(run_cells(dataset, schema, variants, config), config);
}

std::vector<std::vector<std::string>> comparison_cells(const ComparisonReport& report) {
    const std::size_t k = report.variants.size();
    std::vector<std::vector<std::string>> cells(k, std::vector<std::string>(k, "×"));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < i; ++j) cells[i][j] = format_p_value(report.p_values[i][j]);
    }
    return cells;
}

namespace {

// Display width in code points, so "×" counts as one column.
std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
}

std::string pad(const std::string& s, std::size_t width) {
    return s + std::string(width > display_width(s) ? width - display_width(s) : 0, ' ');
}

}  // namespace

std::string render_comparison(const ComparisonReport& report) {
    const auto cells = comparison_cells(report);
    std::vector<std::string> names;
    for (const auto& v : report.variants) names.push_back(model::to_string(v.variant));
    std::size_t width = 7;
    for (const auto& n : names) width = std::max(width, display_width(n));
    for (const auto& row : cells) {
        for (const auto& c : row) width = std::max(width, display_width(c));
    }
    width += 2;
    std::ostringstream out;
    out << pad("", width);
    for (const auto& n : names) out << pad(n, width);
    out << "\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        out << pad(names[i], width);
        for (const auto& c : cells[i]) out << pad(c, width);
        out << "\n";
    }
    out << "pairing: " << to_string(report.pairing) << ", seeds: " << report.seeds.size() << "\n";
    for (const auto& v : report.variants) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-20s rmse %.6f +- %.6f\n", model::to_string(v.variant).c_str(), v.mean_rmse,
                      v.std_rmse);
        out << buf;
    }
    return out.str();
}

nlohmann::json to_json(const ComparisonReport& report) {
    nlohmann::json variants = nlohmann::json::array();
    for (const auto& v : report.variants) {
        variants.push_back({{"variant", model::to_string(v.variant)},
                            {"rmse_per_seed", v.rmse_per_seed},
                            {"mean_rmse", v.mean_rmse},
                            {"std_rmse", v.std_rmse},
                            {"mold_index", v.mold_index},
                            {"paired_errors", v.paired_errors}});
    }
    nlohmann::json p = nlohmann::json::array();
    nlohmann::json t = nlohmann::json::array();
    for (std::size_t i = 0; i < report.p_values.size(); ++i) {
        nlohmann::json prow = nlohmann::json::array(), trow = nlohmann::json::array();
        for (std::size_t j = 0; j < report.p_values.size(); ++j) {
            prow.push_back(j < i ? nlohmann::json(report.p_values[i][j]) : nlohmann::json(nullptr));
            trow.push_back(j < i ? nlohmann::json(report.t_statistics[i][j]) : nlohmann::json(nullptr));
        }
        p.push_back(prow);
        t.push_back(trow);
    }
    return {{"seeds", report.seeds},
            {"pairing", to_string(report.pairing)},
            {"variants", variants},
            {"p_values", p},
            {"t_statistics", t},
            {"matrix_text", comparison_cells(report)}};
}

AblationReport run_ablation(const data::Dataset& dataset, const data::FeatureSchema& schema,
                            const HarnessConfig& config) {
    using model::Variant;
    const std::vector<Variant> groups{Variant::MfaAnn, Variant::MixedNoAttention, Variant::FlatWithAttention,
                                      Variant::FlatAnn};
    AblationReport r;
    r.comparison = run_comparison(dataset, schema, groups, config);
    const double base = r.comparison.variants[3].mean_rmse;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        AblationRow row;
        row.group = static_cast<int>(g + 1);
        row.variant = groups[g];
        row.mixed_features = g < 2;
        row.attention = g == 0 || g == 2;
        row.rmse = r.comparison.variants[g].mean_rmse;
        row.rmse_std = r.comparison.variants[g].std_rmse;
        row.improvement_percent = (base - row.rmse) / base * 100.0;
        row.p_value = g == 3 ? 1.0 : r.comparison.p_values[3][g];
        r.rows.push_back(row);
    }
    return r;
}

std::string ablation_csv(const AblationReport& report) {
    std::string out = "group,mixed_features,attention,variant,rmse,rmse_std,improvement_percent,p_value_vs_group4\n";
    for (const auto& row : report.rows) {
        out += std::to_string(row.group) + "," + (row.mixed_features ? "yes" : "no") + "," +
               (row.attention ? "yes" : "no") + "," + model::to_string(row.variant) + "," + data::format_real(row.rmse) +
               "," + data::format_real(row.rmse_std) + "," + data::format_real(row.improvement_percent) + "," +
               (row.group == 4 ? "×" : format_p_value(row.p_value)) + "\n";
    }
    return out;
}

nlohmann::json to_json(const AblationReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : report.rows) {
        rows.push_back({{"group", row.group},
                        {"mixed_features", row.mixed_features},
                        {"attention", row.attention},
                        {"variant", model::to_string(row.variant)},
                        {"rmse", row.rmse},
                        {"rmse_std", row.rmse_std},
                        {"improvement_percent", row.improvement_percent},
                        {"p_value_vs_group4", row.group == 4 ? nlohmann::json(nullptr) : nlohmann::json(row.p_value)}});
    }
    return {{"rows", rows}, {"comparison", to_json(report.comparison)}};
}

PrecisionReport run_precision_study(const data::Dataset& dataset, const data::FeatureSchema& schema,
                                    const data::QuantizationSpec& quantization, const HarnessConfig& config) {
    const data::Dataset quantized = data::quantize(dataset, quantization);
    const std::vector<model::Variant> arm{model::Variant::MfaAnn};
    const auto original_cells = run_cells(dataset, schema, arm, config);
    const auto quantized_cells = run_cells(quantized, schema, arm, config);
    const auto original = summarize(original_cells.front(), config.pairing);
    const auto degraded = summarize(quantized_cells.front(), config.pairing);

    PrecisionReport r;
    r.seeds = config.seeds;
    r.quantization = quantization;
    r.rmse_original = original.rmse_per_seed;
    r.rmse_quantized = degraded.rmse_per_seed;
    r.mean_original = original.mean_rmse;
    r.mean_quantized = degraded.mean_rmse;
    r.degradation_percent = (r.mean_quantized - r.mean_original) / r.mean_original * 100.0;
    r.original_box = box_summary(absolute(original.pooled_errors));
    r.quantized_box = box_summary(absolute(degraded.pooled_errors));
    try {
        r.test = paired_t_test(degraded.paired_errors, original.paired_errors, Pairing::Signed);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::ZeroVarianceDifferences) throw;
        r.test.degrees_of_freedom = original.paired_errors.size() - 1;
    }
    r.test.pairing = config.pairing;
    return r;
}

nlohmann::json to_json(const PrecisionReport& report) {
    return {{"seeds", report.seeds},
            {"screw_diameter_mm", report.quantization.screw_diameter_mm},
            {"quantized_channels", report.quantization.channels},
            {"rmse_original", report.rmse_original},
            {"rmse_quantized", report.rmse_quantized},
            {"mean_rmse_original", report.mean_original},
            {"mean_rmse_quantized", report.mean_quantized},
            {"degradation_percent", report.degradation_percent},
            {"original_abs_error_summary", box_json(report.original_box)},
            {"quantized_abs_error_summary", box_json(report.quantized_box)},
            {"t_test",
             {{"pairing", to_string(report.test.pairing)},
              {"t", report.test.t_statistic},
              {"df", report.test.degrees_of_freedom},
              {"p_value", report.test.p_value_two_sided}}}};
}

}  // namespace moldweight::eval
