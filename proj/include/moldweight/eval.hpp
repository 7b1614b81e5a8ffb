#pragma once

// Metrics, paired significance tests, error distributions, and the experiment
// harnesses (baseline comparison, ablation groups, export-precision study).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "moldweight/data.hpp"
#include "moldweight/model.hpp"

namespace moldweight::eval {

/// Throws LengthMismatch for unequal or empty inputs.
[[nodiscard]] double rmse(std::span<const double> pred, std::span<const double> actual);

/// Student-t CDF through I_x(df/2, 1/2), x = df / (df + t^2). Throws InvalidDf.
[[nodiscard]] double student_t_cdf(double t, double df);

/// What each paired difference compares: |e_a| - |e_b| or e_a - e_b.
enum class Pairing { Absolute, Signed };

[[nodiscard]] std::string to_string(Pairing pairing);

struct TTestResult {
    double t_statistic = 0.0;
    std::size_t degrees_of_freedom = 0;
    double p_value_two_sided = 1.0;
    double mean_difference = 0.0;
    double sd_difference = 0.0;
    Pairing pairing = Pairing::Absolute;
};

/// t = mean(d) / (s_d / sqrt(n)) with n - 1 degrees of freedom.
/// All-zero differences give t = 0, p = 1. Identical non-zero differences
/// throw ZeroVarianceDifferences; unequal lengths or n < 2 throw LengthMismatch.
[[nodiscard]] TTestResult paired_t_test(std::span<const double> errors_a, std::span<const double> errors_b,
                                        Pairing pairing = Pairing::Absolute);

/// "<1e-15" below that threshold, otherwise four significant digits.
[[nodiscard]] std::string format_p_value(double p);

struct CdfPoint {
    double error = 0.0;
    double probability = 0.0;
};

/// Empirical CDF at each distinct sorted value (of |e| when `absolute`).
[[nodiscard]] std::vector<CdfPoint> error_cdf(std::span<const double> errors, bool absolute = true);

/// Quartiles use linear interpolation between order statistics.
struct BoxSummary {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    double mean = 0.0;
    std::size_t n = 0;
};

[[nodiscard]] BoxSummary box_summary(std::span<const double> values);

struct EvalReport {
    std::vector<long> mold_index;
    std::vector<double> predicted;
    std::vector<double> actual;
    std::vector<double> errors;  // actual - predicted, grams
    double rmse = 0.0;
    std::vector<CdfPoint> cdf;
    BoxSummary abs_error_box;
    BoxSummary signed_error_box;
};

[[nodiscard]] EvalReport make_report(const std::vector<model::Prediction>& predictions);
[[nodiscard]] nlohmann::json to_json(const EvalReport& report);
/// Columns abs_error,cum_prob.
[[nodiscard]] std::string cdf_csv(std::span<const CdfPoint> cdf);
/// One row per labelled summary: label,n,min,q1,median,q3,max,mean.
[[nodiscard]] std::string box_csv(const std::vector<std::pair<std::string, BoxSummary>>& rows);

// ---------------------------------------------------------------------------
// Harnesses

struct HarnessConfig {
    model::ModelConfig model;  // variant is overridden per cell
    model::TrainConfig train;  // seed is overridden per cell
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    data::SplitBounds split;
    Pairing pairing = Pairing::Absolute;
    std::size_t threads = 1;
};

/// Test-split outcome of one trained (variant, seed) cell.
struct CellResult {
    model::Variant variant = model::Variant::MfaAnn;
    std::uint64_t seed = 0;
    double rmse = 0.0;
    std::vector<long> mold_index;
    std::vector<double> errors;
    std::size_t best_epoch = 0;
};

/// Trains `variant` with `seed` on the training molds and evaluates on the test molds.
[[nodiscard]] CellResult run_cell(const data::Dataset& dataset, const data::FeatureSchema& schema,
                                  model::Variant variant, std::uint64_t seed, const HarnessConfig& config);

/// Per-seed RMSEs plus the per-mold errors used for significance testing:
/// across seeds, the mean |e| per mold (Absolute pairing) or mean e (Signed).
struct VariantSummary {
    model::Variant variant = model::Variant::MfaAnn;
    std::vector<double> rmse_per_seed;
    double mean_rmse = 0.0;
    double std_rmse = 0.0;
    std::vector<long> mold_index;
    std::vector<double> paired_errors;
    std::vector<double> pooled_errors;  // every (seed, mold) signed error
};

struct ComparisonReport {
    std::vector<VariantSummary> variants;
    std::vector<std::uint64_t> seeds;
    Pairing pairing = Pairing::Absolute;
    /// p_values[i][j] is defined for i > j only (lower triangle).
    std::vector<std::vector<double>> p_values;
    std::vector<std::vector<double>> t_statistics;
};

[[nodiscard]] ComparisonReport run_comparison(const data::Dataset& dataset, const data::FeatureSchema& schema,
                                              const std::vector<model::Variant>& variants,
                                              const HarnessConfig& config);

/// Cell text for the p-value matrix: the p-value below the diagonal, "×" elsewhere.
[[nodiscard]] std::vector<std::vector<std::string>> comparison_cells(const ComparisonReport& report);
[[nodiscard]] std::string render_comparison(const ComparisonReport& report);
[[nodiscard]] nlohmann::json to_json(const ComparisonReport& report);

struct AblationRow {
    int group = 0;
    bool mixed_features = false;
    bool attention = false;
    model::Variant variant = model::Variant::MfaAnn;
    double rmse = 0.0;  // mean over seeds
    double rmse_std = 0.0;
    double improvement_percent = 0.0;  // vs group 4
    double p_value = 1.0;              // vs group 4; 1 for group 4 itself
};

struct AblationReport {
    std::vector<AblationRow> rows;
    ComparisonReport comparison;
};

[[nodiscard]] AblationReport run_ablation(const data::Dataset& dataset, const data::FeatureSchema& schema,
                                          const HarnessConfig& config);
[[nodiscard]] std::string ablation_csv(const AblationReport& report);
[[nodiscard]] nlohmann::json to_json(const AblationReport& report);

struct PrecisionReport {
    std::vector<std::uint64_t> seeds;
    std::vector<double> rmse_original;
    std::vector<double> rmse_quantized;
    double mean_original = 0.0;
    double mean_quantized = 0.0;
    double degradation_percent = 0.0;  // (quantized - original) / original * 100
    BoxSummary original_box;            // pooled |e| across seeds
    BoxSummary quantized_box;
    TTestResult test;  // original vs quantized, on per-mold errors
    data::QuantizationSpec quantization;
};

[[nodiscard]] PrecisionReport run_precision_study(const data::Dataset& dataset, const data::FeatureSchema& schema,
                                                  const data::QuantizationSpec& quantization,
                                                  const HarnessConfig& config);
[[nodiscard]] nlohmann::json to_json(const PrecisionReport& report);

}  // namespace moldweight::eval
