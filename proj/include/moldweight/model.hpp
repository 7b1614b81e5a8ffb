#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "moldweight/classic.hpp"
#include "moldweight/data.hpp"
#include "moldweight/nn.hpp"

namespace moldweight::model {

using nn::Vector;

/// Neural variants follow the ablation grid: MfaAnn (mixed features +
/// attention), MixedNoAttention, FlatWithAttention, FlatAnn; AllLstm runs every
/// channel through the LSTM. Svr and RandomForest are the classical baselines
/// on the flat current-mold vector.
enum class Variant { MfaAnn, MixedNoAttention, FlatWithAttention, FlatAnn, AllLstm, Svr, RandomForest };

[[nodiscard]] std::string to_string(Variant variant);
/// Accepts mfa-ann, mixed-no-attention, flat-attention, flat-ann, all-lstm, svr, rf.
[[nodiscard]] Variant parse_variant(const std::string& text);
[[nodiscard]] bool is_neural(Variant variant) noexcept;
[[nodiscard]] bool uses_lstm(Variant variant) noexcept;
[[nodiscard]] bool uses_attention(Variant variant) noexcept;

/// Which channels a flat (no-window) model sees.
enum class FlatInputs { AllChannels, NonSequentialOnly };

struct ModelConfig {
    Variant variant = Variant::MfaAnn;
    std::size_t window_length = 5;
    std::size_t lstm_hidden = 8;
    std::size_t attention_dk = 4;
    std::size_t attention_dv = 1;
    std::size_t mlp_hidden = 16;
    double dropout = 0.3;
    /// Adds the fused vector back onto the attention output (requires d_v = 1).
    bool attention_residual = true;
    FlatInputs flat_inputs = FlatInputs::AllChannels;

    /// Window actually consumed: window_length for LSTM variants, 1 otherwise.
    [[nodiscard]] std::size_t effective_window() const noexcept;
};

struct TrainConfig {
    double lr = 0.0005;
    std::size_t batch_size = 4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t max_epochs = 2000;
    std::size_t early_stop_patience = 100;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    /// Classical variants: grid search with k contiguous folds, or fit the
    /// first grid entry directly when disabled.
    bool grid_search = true;
    std::size_t cv_folds = 5;
};

struct Network {
    std::optional<nn::LstmParams> lstm;
    std::optional<nn::AttentionParams> attention;
    std::optional<nn::Mlp> mlp;

    [[nodiscard]] std::vector<nn::NamedTensor> tensors();
    [[nodiscard]] Network zeros_like() const;
    void set_zero();
};

struct ModelParams {
    ModelConfig config;
    data::FeatureSchema schema;
    data::Standardization standardization;
    Network network;
    std::optional<classic::SvrModel> svr;
    std::optional<classic::ForestModel> forest;

    [[nodiscard]] std::string schema_fingerprint() const { return schema.fingerprint(); }
    /// Learnable scalars (neural tensors, or SVR/forest payload size).
    [[nodiscard]] std::size_t parameter_count() const;
    /// Width of the vector entering attention / the prediction head.
    [[nodiscard]] std::size_t fused_dimension() const;
};

/// Throws SchemaVariantMismatch or InvalidConfig. Deterministic in `seed`.
[[nodiscard]] ModelParams build(const ModelConfig& config, const data::FeatureSchema& schema, std::uint64_t seed);

/// A window already standardized and split into the variant's inputs.
struct PreparedSample {
    long mold_index = 0;
    std::vector<Vector> steps;  // LSTM input per time step
    Vector direct;              // vector concatenated after H (mixed) or fed whole (flat)
    double target = 0.0;        // standardized weight
};

/// Throws WindowLengthMismatch or SchemaMismatch.
[[nodiscard]] PreparedSample prepare(const ModelParams& model, const data::WindowSample& sample);

struct ForwardTape {
    nn::LstmTape lstm;
    nn::AttentionTape attention;
    nn::MlpTape mlp;
    Vector fused;
    Vector head_input;
};

/// Prediction in standardized target units.
[[nodiscard]] double forward_standardized(const ModelParams& model, const PreparedSample& sample, bool training,
                                          nn::Rng* rng = nullptr, ForwardTape* tape = nullptr);

/// Accumulates d(output)/d(params) * d_output into `grads`.
void backward(const ModelParams& model, const ForwardTape& tape, double d_output, Network& grads);

/// Predicted weight in grams for a raw (unstandardized) window.
[[nodiscard]] double forward(const ModelParams& model, const data::WindowSample& sample, bool training = false,
                             nn::Rng* rng = nullptr);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // standardized MSE, inference mode
    double val_rmse = 0.0;    // grams
};

struct TrainResult {
    ModelParams model;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_rmse = 0.0;
    /// Classical variants: the mean CV RMSE per grid entry and the chosen one.
    nlohmann::json selection;
};

/// Fits standardization on `train_set`, then minibatch AdamW on MSE with early
/// stopping on the last `val_fraction` of windows (time order), restoring the
/// best-validation parameters. Classical variants run grid search instead.
/// Throws InsufficientData.
[[nodiscard]] TrainResult train(ModelParams model, const data::Dataset& train_set, const TrainConfig& config);

struct Prediction {
    long mold_index = 0;
    double predicted = 0.0;
    double actual = 0.0;
};

/// Batch predictions for every mold in [first, last] whose window fits in
/// `dataset`. Throws SchemaMismatch when the channel columns differ.
[[nodiscard]] std::vector<Prediction> predict(const ModelParams& model, const data::Dataset& dataset, long first,
                                              long last);

/// Throws SchemaFingerprintMismatch when `schema` differs from the model's.
void check_schema(const ModelParams& model, const data::FeatureSchema& schema);

struct OnlineOutput {
    long mold_index = 0;
    std::optional<double> prediction;  // empty while warming up
};

/// Streaming prediction over molds arriving in order. Keeps the last L
/// channel vectors; emits warming-up markers until the window is full.
class OnlinePredictor {
public:
    explicit OnlinePredictor(const ModelParams& model);

    /// Throws OutOfOrderRecord for a non-increasing mold index, or
    /// ShapeMismatch for a wrong feature count.
    OnlineOutput push(const data::MoldRecord& record);

private:
    const ModelParams& model_;
    std::size_t window_;
    std::deque<std::vector<double>> buffer_;
    std::optional<long> last_index_;
};

inline constexpr int kModelFileVersion = 1;

[[nodiscard]] nlohmann::json to_json(const ModelParams& model);
/// Throws VersionMismatch or CorruptFile.
[[nodiscard]] ModelParams from_json(const nlohmann::json& j);
void save(const ModelParams& model, const std::filesystem::path& path);
[[nodiscard]] ModelParams load(const std::filesystem::path& path);

}  // namespace moldweight::model
