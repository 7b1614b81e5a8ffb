#include "moldweight/tsa.hpp"

#include <algorithm>
#include <cmath>

#include "moldweight/errors.hpp"
#include "moldweight/special.hpp"

namespace moldweight::tsa {

double significance_bound(std::size_t n, double confidence) {
    if (!(confidence > 0.0 && confidence < 1.0)) {
        raise(ErrorKind::InvalidConfidence, "confidence must lie in (0, 1)");
    }
    if (n < 2) raise(ErrorKind::InsufficientData, "significance bound needs n >= 2");
    return special::normal_quantile(0.5 * (1.0 + confidence)) / std::sqrt(static_cast<double>(n));
}

AcfResult acf(std::span<const double> series, std::size_t max_lag, double confidence) {
    const std::size_t n = series.size();
    if (n < 2) raise(ErrorKind::LagTooLarge, "series needs at least 2 observations");
    if (max_lag < 1 || max_lag >= n) {
        raise(ErrorKind::LagTooLarge, "max_lag " + std::to_string(max_lag) + " must lie in [1, " +
                                          std::to_string(n - 1) + "]");
    }
    if (!std::all_of(series.begin(), series.end(), [](double v) { return std::isfinite(v); })) {
        raise(ErrorKind::NonFiniteInput, "series contains NaN or infinity");
    }

    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(n);
    std::vector<double> centered(n);
    double denominator = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        centered[t] = series[t] - mean;
        denominator += centered[t] * centered[t];
    }
    if (!(denominator > 0.0) ||
        std::sqrt(denominator / static_cast<double>(n)) <= 1e-14 * std::max(1.0, std::fabs(mean))) {
        raise(ErrorKind::ZeroVariance, "constant series has no autocorrelation");
    }

    AcfResult out;
    out.max_lag = max_lag;
    out.n = n;
    out.bound = significance_bound(n, confidence);
    out.coefficients.resize(max_lag + 1);
    out.coefficients[0] = 1.0;
    for (std::size_t k = 1; k <= max_lag; ++k) {
        double numerator = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) numerator += centered[t] * centered[t + k];
        out.coefficients[k] = numerator / denominator;
        if (std::fabs(out.coefficients[k]) > out.bound) out.significant_lags.push_back(k);
    }
    return out;
}

namespace {

double per_lag_confidence(std::size_t max_lag, double confidence, LagCorrection correction) {
    if (!(confidence > 0.0 && confidence < 1.0)) {
        raise(ErrorKind::InvalidConfidence, "confidence must lie in (0, 1)");
    }
    if (correction == LagCorrection::None || max_lag <= 1) return confidence;
    return 1.0 - (1.0 - confidence) / static_cast<double>(max_lag);
}

}  // namespace

double classification_bound(std::size_t n, std::size_t max_lag, double confidence, LagCorrection correction) {
    return significance_bound(n, per_lag_confidence(max_lag, confidence, correction));
}

Classification classify_feature(std::span<const double> series, std::size_t max_lag, double confidence,
                                LagCorrection correction) {
    const auto result = acf(series, max_lag, per_lag_confidence(max_lag, confidence, correction));
    return {result.significant_lags.empty() ? data::FeatureProperty::NonSequential
                                            : data::FeatureProperty::Sequential,
            data::DecidedBy::Acf};
}

data::FeatureSchema classify_dataset(const data::Dataset& dataset, const Overrides& overrides,
                                     std::size_t max_lag, double confidence, const data::FeatureSchema* base,
                                     LagCorrection correction) {
    if (dataset.empty() || dataset.channels.empty()) {
        raise(ErrorKind::InsufficientData, "cannot classify an empty dataset");
    }
    for (const auto& [name, property] : overrides) {
        if (!dataset.find(name)) raise(ErrorKind::UnknownChannelName, "override names unknown channel '" + name + "'");
    }
    const std::size_t lag = std::min(max_lag, dataset.size() - 1);

    data::FeatureSchema schema;
    for (std::size_t j = 0; j < dataset.channels.size(); ++j) {
        data::ChannelSpec channel;
        channel.name = dataset.channels[j];
        if (base) {
            if (const auto k = base->find(channel.name)) {
                channel.unit = base->channels[*k].unit;
                channel.source = base->channels[*k].source;
            }
        }
        if (const auto it = overrides.find(channel.name); it != overrides.end()) {
            channel.property = it->second;
            channel.decided_by = data::DecidedBy::Override;
        } else {
            const auto column = dataset.column(j);
            const auto c = classify_feature(column, lag, confidence, correction);
            channel.property = c.property;
            channel.decided_by = c.decided_by;
        }
        schema.channels.push_back(std::move(channel));
    }
    return schema;
}

}  // namespace moldweight::tsa
