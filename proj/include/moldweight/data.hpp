#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace moldweight::data {

enum class FeatureProperty { Sequential, NonSequential };
enum class DecidedBy { Acf, Override };
enum class Source { Machine, Cavity };

[[nodiscard]] std::string to_string(FeatureProperty property);
[[nodiscard]] FeatureProperty parse_property(const std::string& text);

struct ChannelSpec {
    std::string name;
    std::string unit;
    Source source = Source::Machine;
    FeatureProperty property = FeatureProperty::NonSequential;
    DecidedBy decided_by = DecidedBy::Acf;
};

/// Channel names, units, sources and sequential/non-sequential tags, in
/// dataset column order.
struct FeatureSchema {
    std::vector<ChannelSpec> channels;

    [[nodiscard]] std::size_t size() const noexcept { return channels.size(); }
    [[nodiscard]] std::vector<std::size_t> indices(FeatureProperty property) const;
    [[nodiscard]] std::size_t count(FeatureProperty property) const;
    [[nodiscard]] std::vector<std::string> names() const;
    [[nodiscard]] std::optional<std::size_t> find(const std::string& name) const;
    /// FNV-1a over the ordered channel names and property tags, as 16 hex digits.
    [[nodiscard]] std::string fingerprint() const;
};

[[nodiscard]] nlohmann::json schema_to_json(const FeatureSchema& schema);
[[nodiscard]] FeatureSchema schema_from_json(const nlohmann::json& j);
void save_schema(const FeatureSchema& schema, const std::filesystem::path& path);
[[nodiscard]] FeatureSchema load_schema(const std::filesystem::path& path);

struct MoldRecord {
    long mold_index = 0;
    std::vector<double> features;
    double weight = 0.0;  // grams

    friend bool operator==(const MoldRecord&, const MoldRecord&) = default;
};

struct Dataset {
    std::vector<std::string> channels;
    std::vector<MoldRecord> records;

    [[nodiscard]] std::size_t size() const noexcept { return records.size(); }
    [[nodiscard]] bool empty() const noexcept { return records.empty(); }
    [[nodiscard]] std::vector<double> column(std::size_t channel) const;
    [[nodiscard]] std::vector<double> weights() const;
    [[nodiscard]] std::optional<std::size_t> find(const std::string& name) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws NonMonotonicMoldIndex, NonFiniteInput or ShapeMismatch.
void validate(const Dataset& dataset);

// ---------------------------------------------------------------------------
// CSV ingestion

void save_csv(const Dataset& dataset, const std::filesystem::path& path);
/// Header must be `mold_index,<channels...>,weight`.
[[nodiscard]] Dataset load_csv(const std::filesystem::path& path);
/// As above, additionally checking the channel columns against `schema`.
[[nodiscard]] Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema);
[[nodiscard]] Dataset parse_csv(std::string_view text);
[[nodiscard]] std::string format_csv(const Dataset& dataset);
/// Shortest decimal string that parses back to the identical double.
[[nodiscard]] std::string format_real(double value);

// ---------------------------------------------------------------------------
// Synthetic generator

struct GenConfig {
    std::size_t n_molds = 400;
    std::size_t n_sequential = 8;
    std::size_t n_nonsequential = 8;
    /// AR(1) coefficient per sequential channel; empty draws from [0.6, 0.85].
    std::vector<double> ar_coefficients;
    /// Sequential channels that drive the lagged weight term, and
    /// non-sequential channels that drive the current-mold term.
    std::size_t relevant_sequential = 4;
    std::size_t relevant_nonsequential = 5;
    /// Direction u of the lagged term; empty draws one with unit norm.
    std::vector<double> sequential_direction;
    /// beta per non-sequential channel (grams per unit latent); empty draws
    /// magnitudes uniformly in beta_range with random sign for the relevant ones.
    std::vector<double> nonsequential_coefficients;
    std::pair<double, double> beta_range = {0.004, 0.01};
    /// gamma_1..gamma_4 for lags 1..4 (grams).
    std::vector<double> lag_weights = {0.015, 0.0125, 0.01, 0.0075};
    double base_weight = 1.0;
    double noise_std = 0.01;
    /// Shot-to-shot spread of the two volume channels, in mm of screw travel
    /// (rendered in mm3 for a 30 mm screw).
    double volume_std_mm = 0.5;
    double drift_amplitude = 0.0;
    double drift_period = 200.0;
};

struct GroundTruth {
    std::vector<double> ar_coefficients;
    std::vector<double> sequential_direction;
    std::vector<double> nonsequential_coefficients;
    std::vector<double> lag_weights;
    double base_weight = 0.0;
    double noise_std = 0.0;
    /// Physical rendering: value = offset + scale * latent.
    std::vector<double> channel_offset;
    std::vector<double> channel_scale;
};

struct Generated {
    Dataset dataset;
    FeatureSchema schema;
    GroundTruth truth;
};

/// Sequential channels follow unit-variance AR(1) processes, non-sequential
/// channels are iid N(0,1); the weight of mold t depends on the current
/// non-sequential values and on the sequential values of molds t-1..t-4.
[[nodiscard]] Generated generate_synthetic(const GenConfig& config, std::uint64_t seed);

[[nodiscard]] nlohmann::json truth_to_json(const GroundTruth& truth);

// ---------------------------------------------------------------------------
// Train/test split and windowing

struct SplitBounds {
    long train_first = 1;
    long train_last = 100;
    long test_first = 101;
    long test_last = 200;
};

struct SplitResult {
    Dataset train;
    Dataset test;
};

/// Throws InsufficientData when the dataset does not reach `test_last`.
[[nodiscard]] SplitResult split(const Dataset& dataset, const SplitBounds& bounds = {});

/// Molds whose index lies in [first, last].
[[nodiscard]] Dataset slice(const Dataset& dataset, long first, long last);

struct WindowSample {
    long mold_index = 0;
    /// Full channel vectors of molds t-L+1..t, oldest first.
    std::vector<std::vector<double>> history;
    double weight = 0.0;

    [[nodiscard]] const std::vector<double>& current() const { return history.back(); }
};

[[nodiscard]] std::vector<WindowSample> make_windows(const Dataset& dataset, std::size_t window_length);

/// Windows over `dataset` whose target mold lies in [first, last]; history may
/// reach before `first`.
[[nodiscard]] std::vector<WindowSample> make_windows(const Dataset& dataset, std::size_t window_length,
                                                     long first, long last);

// ---------------------------------------------------------------------------
// Export-precision quantizer

enum class Rounding { HalfAwayFromZero, HalfToEven };

struct QuantizationSpec {
    double screw_diameter_mm = 30.0;
    std::vector<std::string> channels;
    Rounding rounding = Rounding::HalfAwayFromZero;
};

/// Channels the generator renders in controller volume units.
[[nodiscard]] std::vector<std::string> default_quantized_channels();

/// v -> round(4 v / (pi D^2)).
[[nodiscard]] std::vector<double> quantize(std::span<const double> values, const QuantizationSpec& spec);
/// Copy of `dataset` with every channel in `spec.channels` quantized.
/// Throws UnknownChannelName.
[[nodiscard]] Dataset quantize(const Dataset& dataset, const QuantizationSpec& spec);

// ---------------------------------------------------------------------------
// Standardization

struct Standardization {
    std::vector<double> mean;
    std::vector<double> std;
    double target_mean = 0.0;
    double target_std = 1.0;

    [[nodiscard]] static Standardization identity(std::size_t channels);

    void apply(std::span<double> features) const;
    [[nodiscard]] double standardize_target(double weight) const { return (weight - target_mean) / target_std; }
    [[nodiscard]] double destandardize_target(double z) const { return target_mean + z * target_std; }
};

/// Per-channel z-score statistics. Throws ZeroVariance for a constant channel.
/// A constant target falls back to target_std = 1.
[[nodiscard]] Standardization standardize_fit(const Dataset& train);
[[nodiscard]] Dataset standardize_apply(const Standardization& stats, const Dataset& dataset);
[[nodiscard]] Dataset standardize_invert(const Standardization& stats, const Dataset& dataset);

}  // namespace moldweight::data
