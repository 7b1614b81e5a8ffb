#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "moldweight/data.hpp"

namespace moldweight::tsa {

inline constexpr std::size_t kDefaultMaxLag = 20;
inline constexpr double kDefaultConfidence = 0.99;

struct TimeSeries {
    std::string name;
    std::vector<double> values;
};

struct AcfResult {
    std::vector<double> coefficients;  // r_0..r_K
    std::size_t max_lag = 0;
    std::size_t n = 0;
    double bound = 0.0;
    std::vector<std::size_t> significant_lags;
};

/// Half-width z_{(1+confidence)/2} / sqrt(n) of the white-noise band.
/// Throws InvalidConfidence unless 0 < confidence < 1.
[[nodiscard]] double significance_bound(std::size_t n, double confidence);

/**
 * Sample autocorrelation
 *
 *   r_k = sum_{t=1}^{n-k} (x_t - mean)(x_{t+k} - mean) / sum_{t=1}^{n} (x_t - mean)^2
 *
 * for k = 0..max_lag, with the significance band at `confidence`.
 * Throws ZeroVariance, LagTooLarge (max_lag < 1 or >= n) or NonFiniteInput.
 */
[[nodiscard]] AcfResult acf(std::span<const double> series, std::size_t max_lag,
                            double confidence = kDefaultConfidence);

/// How the per-lag band is widened when a whole lag window is tested at once.
enum class LagCorrection {
    /// Per-lag confidence 1 - (1 - confidence) / max_lag, so a white-noise
    /// channel is misclassified with probability at most 1 - confidence.
    Bonferroni,
    /// Every lag tested against the plain `confidence` band.
    None,
};

/// Band used by classify_feature for a window of `max_lag` lags.
[[nodiscard]] double classification_bound(std::size_t n, std::size_t max_lag, double confidence,
                                          LagCorrection correction = LagCorrection::Bonferroni);

struct Classification {
    data::FeatureProperty property = data::FeatureProperty::NonSequential;
    data::DecidedBy decided_by = data::DecidedBy::Acf;
};

/// Sequential iff any lag in 1..max_lag lies outside classification_bound.
[[nodiscard]] Classification classify_feature(std::span<const double> series,
                                              std::size_t max_lag = kDefaultMaxLag,
                                              double confidence = kDefaultConfidence,
                                              LagCorrection correction = LagCorrection::Bonferroni);

using Overrides = std::map<std::string, data::FeatureProperty>;

/// Tags every channel of `dataset`, by ACF unless the channel has an override.
/// Units and sources are taken from `base` when it names the channel.
/// max_lag is clamped to n - 1 for short datasets. Throws UnknownChannelName.
[[nodiscard]] data::FeatureSchema classify_dataset(const data::Dataset& dataset, const Overrides& overrides = {},
                                                   std::size_t max_lag = kDefaultMaxLag,
                                                   double confidence = kDefaultConfidence,
                                                   const data::FeatureSchema* base = nullptr,
                                                   LagCorrection correction = LagCorrection::Bonferroni);

}  // namespace moldweight::tsa
