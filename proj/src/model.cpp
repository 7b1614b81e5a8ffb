#include "moldweight/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "moldweight/errors.hpp"

namespace moldweight::model {

namespace {

struct VariantName {
    Variant variant;
    const char* name;
};

constexpr VariantName kVariantNames[] = {
    {Variant::MfaAnn, "mfa-ann"},       {Variant::MixedNoAttention, "mixed-no-attention"},
    {Variant::FlatWithAttention, "flat-attention"}, {Variant::FlatAnn, "flat-ann"},
    {Variant::AllLstm, "all-lstm"},     {Variant::Svr, "svr"},
    {Variant::RandomForest, "rf"},
};

bool is_mixed(Variant v) { return v == Variant::MfaAnn || v == Variant::MixedNoAttention; }

}  // namespace

std::string to_string(Variant variant) {
    for (const auto& v : kVariantNames) {
        if (v.variant == variant) return v.name;
    }
    return "unknown";
}

Variant parse_variant(const std::string& text) {
    for (const auto& v : kVariantNames) {
        if (text == v.name) return v.variant;
    }
    raise(ErrorKind::InvalidArgument, "unknown variant '" + text + "'");
}

bool is_neural(Variant variant) noexcept { return variant != Variant::Svr && variant != Variant::RandomForest; }

bool uses_lstm(Variant variant) noexcept { return is_mixed(variant) || variant == Variant::AllLstm; }

bool uses_attention(Variant variant) noexcept {
    return variant == Variant::MfaAnn || variant == Variant::FlatWithAttention;
}

std::size_t ModelConfig::effective_window() const noexcept { return uses_lstm(variant) ? window_length : 1; }

// ---------------------------------------------------------------------------
// Network

std::vector<nn::NamedTensor> Network::tensors() {
    std::vector<nn::NamedTensor> out;
    auto append = [&](std::vector<nn::NamedTensor> more) { out.insert(out.end(), more.begin(), more.end()); };
    if (lstm) append(lstm->tensors("lstm."));
    if (attention) append(attention->tensors("attention."));
    if (mlp) append(mlp->tensors("mlp."));
    return out;
}

Network Network::zeros_like() const {
    Network out = *this;
    out.set_zero();
    return out;
}

void Network::set_zero() {
    for (auto& t : tensors()) t.tensor->fill(0.0);
}

std::size_t ModelParams::parameter_count() const {
    std::size_t count = 0;
    for (auto& t : const_cast<Network&>(network).tensors()) count += t.tensor->size();
    if (svr) count += svr->coefficients.size() * (svr->support_vectors.cols() + 1) + 1;
    if (forest) {
        for (const auto& tree : forest->trees) count += tree.nodes.size();
    }
    return count;
}

namespace {

std::size_t direct_width(const ModelConfig& config, const data::FeatureSchema& schema) {
    if (is_mixed(config.variant)) return schema.count(data::FeatureProperty::NonSequential);
    if (config.variant == Variant::AllLstm) return 0;
    return config.flat_inputs == FlatInputs::NonSequentialOnly ? schema.count(data::FeatureProperty::NonSequential)
                                                               : schema.size();
}

}  // namespace

std::size_t ModelParams::fused_dimension() const {
    const std::size_t hidden = uses_lstm(config.variant) ? config.lstm_hidden : 0;
    return hidden + direct_width(config, schema);
}

ModelParams build(const ModelConfig& config, const data::FeatureSchema& schema, std::uint64_t seed) {
    const std::size_t n_seq = schema.count(data::FeatureProperty::Sequential);
    const std::size_t n_non = schema.count(data::FeatureProperty::NonSequential);
    if (schema.size() == 0) raise(ErrorKind::SchemaVariantMismatch, "schema has no channels");
    if (is_mixed(config.variant) && (n_seq == 0 || n_non == 0)) {
        raise(ErrorKind::SchemaVariantMismatch, to_string(config.variant) +
                                                    " needs at least one sequential and one non-sequential channel");
    }
    if (!is_mixed(config.variant) && config.variant != Variant::AllLstm &&
        config.flat_inputs == FlatInputs::NonSequentialOnly && n_non == 0) {
        raise(ErrorKind::SchemaVariantMismatch, "flat non-sequential inputs requested but schema has none");
    }
    if (config.window_length < 1) raise(ErrorKind::InvalidConfig, "window length must be at least 1");
    if (config.lstm_hidden < 1 || config.mlp_hidden < 1 || config.attention_dk < 1 || config.attention_dv < 1) {
        raise(ErrorKind::InvalidConfig, "layer sizes must be at least 1");
    }
    if (!(config.dropout >= 0.0 && config.dropout < 1.0)) raise(ErrorKind::InvalidConfig, "dropout must be in [0, 1)");
    if (config.attention_residual && config.attention_dv != 1 && uses_attention(config.variant)) {
        raise(ErrorKind::InvalidConfig, "attention residual requires d_v = 1");
    }

    ModelParams model;
    model.config = config;
    model.schema = schema;
    model.standardization = data::Standardization::identity(schema.size());
    if (!is_neural(config.variant)) return model;

    nn::Rng rng(seed);
    if (uses_lstm(config.variant)) {
        const std::size_t input = config.variant == Variant::AllLstm ? schema.size() : n_seq;
        model.network.lstm = nn::LstmParams::init(config.lstm_hidden, input, rng);
    }
    std::size_t head_in = model.fused_dimension();
    if (uses_attention(config.variant)) {
        model.network.attention = nn::AttentionParams::init(1, config.attention_dk, config.attention_dv, rng);
        head_in *= config.attention_dv;
    }
    model.network.mlp = nn::Mlp::init(head_in, config.mlp_hidden, rng);
    return model;
}

// ---------------------------------------------------------------------------
// Forward / backward

PreparedSample prepare(const ModelParams& model, const data::WindowSample& sample) {
    const std::size_t window = model.config.effective_window();
    if (sample.history.size() != window) {
        raise(ErrorKind::WindowLengthMismatch, "model expects a window of " + std::to_string(window) + ", got " +
                                                   std::to_string(sample.history.size()));
    }
    const auto& schema = model.schema;
    std::vector<Vector> rows = sample.history;
    for (auto& row : rows) {
        if (row.size() != schema.size()) {
            raise(ErrorKind::SchemaMismatch, "sample has " + std::to_string(row.size()) + " channels, model expects " +
                                                 std::to_string(schema.size()));
        }
        model.standardization.apply(row);
    }

    PreparedSample out;
    out.mold_index = sample.mold_index;
    out.target = model.standardization.standardize_target(sample.weight);
    const auto seq = schema.indices(data::FeatureProperty::Sequential);
    const auto non = schema.indices(data::FeatureProperty::NonSequential);
    auto pick = [](const Vector& row, const std::vector<std::size_t>& idx) {
        Vector v;
        v.reserve(idx.size());
        for (auto i : idx) v.push_back(row[i]);
        return v;
    };
    const Variant variant = model.config.variant;
    if (is_mixed(variant)) {
        for (const auto& row : rows) out.steps.push_back(pick(row, seq));
        out.direct = pick(rows.back(), non);
    } else if (variant == Variant::AllLstm) {
        out.steps = std::move(rows);
    } else if (model.config.flat_inputs == FlatInputs::NonSequentialOnly) {
        out.direct = pick(rows.back(), non);
    } else {
        out.direct = std::move(rows.back());
    }
    return out;
}

double forward_standardized(const ModelParams& model, const PreparedSample& sample, bool training, nn::Rng* rng,
                            ForwardTape* tape) {
    const Variant variant = model.config.variant;
    if (variant == Variant::Svr) return model.svr.value().predict(sample.direct);
    if (variant == Variant::RandomForest) return model.forest.value().predict(sample.direct);

    const Network& net = model.network;
    ForwardTape local;
    ForwardTape& t = tape ? *tape : local;

    t.fused.clear();
    if (uses_lstm(variant)) {
        t.fused = nn::lstm_forward(*net.lstm, sample.steps, &t.lstm);
    }
    t.fused.insert(t.fused.end(), sample.direct.begin(), sample.direct.end());

    if (uses_attention(variant)) {
        const nn::Matrix tokens = nn::Matrix::column(t.fused);
        const auto attended = nn::self_attention(*net.attention, tokens, &t.attention);
        const auto values = attended.output.values();
        t.head_input.assign(values.begin(), values.end());
        if (model.config.attention_residual) {
            for (std::size_t i = 0; i < t.fused.size(); ++i) t.head_input[i] += t.fused[i];
        }
    } else {
        t.head_input = t.fused;
    }
    return nn::mlp_forward(*net.mlp, model.config.dropout, training, t.head_input, rng, &t.mlp);
}

void backward(const ModelParams& model, const ForwardTape& tape, double d_output, Network& grads) {
    const Variant variant = model.config.variant;
    if (!is_neural(variant)) raise(ErrorKind::InvalidArgument, "classical variants have no gradient");
    const Network& net = model.network;
    if (tape.head_input.size() != net.mlp->hidden.in()) {
        raise(ErrorKind::IncompleteTape, "backward: forward pass was not recorded");
    }

    Vector d_head(tape.head_input.size(), 0.0);
    nn::mlp_backward(*net.mlp, tape.mlp, d_output, *grads.mlp, d_head);

    Vector d_fused(tape.fused.size(), 0.0);
    if (uses_attention(variant)) {
        if (model.config.attention_residual) d_fused = d_head;
        const nn::Matrix d_out(tape.fused.size(), model.config.attention_dv, d_head);
        nn::Matrix d_tokens;
        nn::attention_backward(*net.attention, tape.attention, d_out, *grads.attention, &d_tokens);
        for (std::size_t i = 0; i < d_fused.size(); ++i) d_fused[i] += d_tokens[i];
    } else {
        d_fused = d_head;
    }

    if (uses_lstm(variant)) {
        const std::size_t hidden = net.lstm->hidden();
        nn::lstm_backward(*net.lstm, tape.lstm, std::span<const double>(d_fused).first(hidden), *grads.lstm);
    }
}

double forward(const ModelParams& model, const data::WindowSample& sample, bool training, nn::Rng* rng) {
    const PreparedSample prepared = prepare(model, sample);
    return model.standardization.destandardize_target(forward_standardized(model, prepared, training, rng));
}

// ---------------------------------------------------------------------------
// Training

namespace {

nn::Matrix design_matrix(const std::vector<PreparedSample>& samples) {
    const std::size_t p = samples.front().direct.size();
    nn::Matrix x(samples.size(), p);
    for (std::size_t r = 0; r < samples.size(); ++r) {
        std::copy(samples[r].direct.begin(), samples[r].direct.end(),
                  x.values().begin() + static_cast<std::ptrdiff_t>(r * p));
    }
    return x;
}

TrainResult train_classic(ModelParams model, const std::vector<PreparedSample>& samples, const TrainConfig& config) {
    const nn::Matrix x = design_matrix(samples);
    Vector y;
    for (const auto& s : samples) y.push_back(s.target);
    TrainResult result;
    const auto k = std::min(config.cv_folds, samples.size());

    if (model.config.variant == Variant::Svr) {
        const auto grid = classic::default_svr_grid();
        classic::SvrParams chosen = grid.front();
        if (config.grid_search) {
            const classic::FitPredict<classic::SvrParams> fit =
                [](const classic::SvrParams& p, const nn::Matrix& xt, std::span<const double> yt, const nn::Matrix& xv,
                   std::uint64_t) -> Vector {
                try {
                    return classic::svr_fit(xt, yt, p).predict(xv);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::NoConvergence) throw;
                    return Vector(xv.rows(), std::numeric_limits<double>::quiet_NaN());
                }
            };
            const auto search = classic::grid_search_cv(fit, grid, x, y, k, config.seed);
            chosen = search.best;
            nlohmann::json rows = nlohmann::json::array();
            for (std::size_t g = 0; g < grid.size(); ++g) {
                rows.push_back({{"c", grid[g].c},
                                {"gamma", grid[g].gamma},
                                {"epsilon", grid[g].epsilon},
                                {"mean_cv_rmse", search.mean_rmse[g]}});
            }
            result.selection = {{"grid", rows}, {"best_index", search.best_index}, {"folds", k}};
        }
        model.svr = classic::svr_fit(x, y, chosen);
    } else {
        const auto grid = classic::default_forest_grid();
        classic::ForestParams chosen = grid.front();
        if (config.grid_search) {
            const classic::FitPredict<classic::ForestParams> fit =
                [](const classic::ForestParams& p, const nn::Matrix& xt, std::span<const double> yt,
                   const nn::Matrix& xv, std::uint64_t seed) -> Vector {
                return classic::rf_fit(xt, yt, p, seed).predict(xv);
            };
            const auto search = classic::grid_search_cv(fit, grid, x, y, k, config.seed);
            chosen = search.best;
            nlohmann::json rows = nlohmann::json::array();
            for (std::size_t g = 0; g < grid.size(); ++g) {
                rows.push_back({{"n_trees", grid[g].n_trees},
                                {"max_depth", grid[g].max_depth},
                                {"min_samples_split", grid[g].min_samples_split},
                                {"mean_cv_rmse", search.mean_rmse[g]}});
            }
            result.selection = {{"grid", rows}, {"best_index", search.best_index}, {"folds", k}};
        }
        model.forest = classic::rf_fit(x, y, chosen, config.seed);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace

TrainResult train(ModelParams model, const data::Dataset& train_set, const TrainConfig& config) {
    if (config.batch_size < 1) raise(ErrorKind::InvalidConfig, "batch size must be at least 1");
    if (!(config.val_fraction >= 0.0 && config.val_fraction <= 0.5)) {
        raise(ErrorKind::InvalidConfig, "val_fraction must lie in [0, 0.5]");
    }
    if (train_set.channels != model.schema.names()) {
        raise(ErrorKind::SchemaMismatch, "training data columns differ from the model schema");
    }
    data::validate(train_set);
    model.standardization = data::standardize_fit(train_set);

    const auto windows = data::make_windows(train_set, model.config.effective_window());
    std::vector<PreparedSample> samples;
    samples.reserve(windows.size());
    for (const auto& w : windows) samples.push_back(prepare(model, w));

    if (!is_neural(model.config.variant)) {
        if (samples.size() < std::max<std::size_t>(2, config.grid_search ? config.cv_folds : 2)) {
            raise(ErrorKind::InsufficientData, "too few training windows for the classical baseline");
        }
        return train_classic(std::move(model), samples, config);
    }

    const auto n_val = static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(samples.size())));
    const std::size_t n_train = samples.size() - n_val;
    if (n_train < config.batch_size || (config.val_fraction > 0.0 && n_val == 0)) {
        raise(ErrorKind::InsufficientData, std::to_string(samples.size()) + " training windows cannot fill a batch of " +
                                               std::to_string(config.batch_size) + " plus a validation split");
    }

    nn::Rng rng(config.seed ^ 0x5851f42d4c957f2dULL);
    nn::AdamW optimizer({config.lr, config.beta1, config.beta2, config.epsilon, config.weight_decay});
    Network grads = model.network.zeros_like();
    auto param_refs = model.network.tensors();
    auto grad_refs = grads.tensors();
    std::vector<nn::Matrix*> params, grad_ptrs;
    for (auto& t : param_refs) params.push_back(t.tensor);
    for (auto& t : grad_refs) grad_ptrs.push_back(t.tensor);
    std::vector<const nn::Matrix*> grad_const(grad_ptrs.begin(), grad_ptrs.end());

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    ForwardTape tape;

    auto mean_square = [&](std::size_t begin, std::size_t end) {
        double acc = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double e = forward_standardized(model, samples[i], false) - samples[i].target;
            acc += e * e;
        }
        return acc / static_cast<double>(end - begin);
    };

    TrainResult result;
    Network best = model.network;
    double best_score = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n_train; start += config.batch_size) {
            const std::size_t end = std::min(start + config.batch_size, n_train);
            const double inv = 1.0 / static_cast<double>(end - start);
            grads.set_zero();
            for (std::size_t b = start; b < end; ++b) {
                const auto& s = samples[order[b]];
                const double pred = forward_standardized(model, s, true, &rng, &tape);
                backward(model, tape, 2.0 * (pred - s.target) * inv, grads);
            }
            optimizer.step(params, grad_const);
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = mean_square(0, n_train);
        const double val_ms = n_val > 0 ? mean_square(n_train, samples.size()) : record.train_loss;
        record.val_rmse = std::sqrt(val_ms) * model.standardization.target_std;
        if (!std::isfinite(record.train_loss)) raise(ErrorKind::NonFiniteInput, "training diverged");
        result.history.push_back(record);

        if (record.val_rmse < best_score) {
            best_score = record.val_rmse;
            best = model.network;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.early_stop_patience) {
            break;
        }
    }
    model.network = std::move(best);
    result.best_val_rmse = best_score;
    result.model = std::move(model);
    return result;
}

// ---------------------------------------------------------------------------
// Prediction

std::vector<Prediction> predict(const ModelParams& model, const data::Dataset& dataset, long first, long last) {
    if (dataset.channels != model.schema.names()) {
        raise(ErrorKind::SchemaMismatch, "dataset columns differ from the model schema");
    }
    std::vector<Prediction> out;
    for (const auto& w : data::make_windows(dataset, model.config.effective_window(), first, last)) {
        out.push_back({w.mold_index, forward(model, w), w.weight});
    }
    return out;
}

void check_schema(const ModelParams& model, const data::FeatureSchema& schema) {
    if (schema.fingerprint() != model.schema_fingerprint()) {
        raise(ErrorKind::SchemaFingerprintMismatch, "dataset schema " + schema.fingerprint() +
                                                        " does not match the model's " + model.schema_fingerprint());
    }
}

OnlinePredictor::OnlinePredictor(const ModelParams& model)
    : model_(model), window_(model.config.effective_window()) {}

OnlineOutput OnlinePredictor::push(const data::MoldRecord& record) {
    if (last_index_ && record.mold_index <= *last_index_) {
        raise(ErrorKind::OutOfOrderRecord, "mold " + std::to_string(record.mold_index) + " arrived after mold " +
                                               std::to_string(*last_index_));
    }
    if (record.features.size() != model_.schema.size()) {
        raise(ErrorKind::ShapeMismatch, "record has " + std::to_string(record.features.size()) +
                                            " channels, model expects " + std::to_string(model_.schema.size()));
    }
    last_index_ = record.mold_index;
    buffer_.push_back(record.features);
    if (buffer_.size() > window_) buffer_.pop_front();
    if (buffer_.size() < window_) return {record.mold_index, std::nullopt};
    data::WindowSample sample;
    sample.mold_index = record.mold_index;
    sample.weight = record.weight;
    sample.history.assign(buffer_.begin(), buffer_.end());
    return {record.mold_index, forward(model_, sample)};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json tensor_json(const nn::Matrix& m) {
    return {{"shape", {m.rows(), m.cols()}}, {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

nn::Matrix tensor_from_json(const nlohmann::json& j) {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) raise(ErrorKind::CorruptFile, "tensor shape must have two entries");
    auto values = j.at("data").get<std::vector<double>>();
    if (values.size() != shape[0] * shape[1]) raise(ErrorKind::CorruptFile, "tensor data does not match its shape");
    return nn::Matrix(shape[0], shape[1], std::move(values));
}

}  // namespace

nlohmann::json to_json(const ModelParams& model) {
    const auto& c = model.config;
    nlohmann::json config = {
        {"window_length", c.window_length},
        {"lstm_hidden", c.lstm_hidden},
        {"attention_dk", c.attention_dk},
        {"attention_dv", c.attention_dv},
        {"mlp_hidden", c.mlp_hidden},
        {"dropout", c.dropout},
        {"attention_residual", c.attention_residual},
        {"flat_inputs", c.flat_inputs == FlatInputs::AllChannels ? "all" : "non-sequential"},
        {"schema", data::schema_to_json(model.schema)},
    };
    nlohmann::json standardization = {{"mean", model.standardization.mean},
                                      {"std", model.standardization.std},
                                      {"target_mean", model.standardization.target_mean},
                                      {"target_std", model.standardization.target_std}};
    nlohmann::json tensors = nlohmann::json::object();
    for (auto& t : const_cast<Network&>(model.network).tensors()) tensors[t.name] = tensor_json(*t.tensor);
    if (model.svr) {
        const auto& s = *model.svr;
        tensors["svr.support_vectors"] = tensor_json(s.support_vectors);
        tensors["svr.coefficients"] = tensor_json(nn::Matrix::column(s.coefficients));
        tensors["svr.scalars"] = {{"bias", s.bias}, {"gamma", s.gamma}, {"c", s.c}, {"epsilon", s.epsilon}};
    }
    if (model.forest) {
        nlohmann::json trees = nlohmann::json::array();
        for (const auto& tree : model.forest->trees) {
            std::vector<int> feature, left, right;
            std::vector<double> threshold, value;
            for (const auto& node : tree.nodes) {
                feature.push_back(node.feature);
                left.push_back(node.left);
                right.push_back(node.right);
                threshold.push_back(node.threshold);
                value.push_back(node.value);
            }
            trees.push_back({{"feature", feature},
                             {"threshold", threshold},
                             {"left", left},
                             {"right", right},
                             {"value", value}});
        }
        const auto& p = model.forest->params;
        tensors["forest.trees"] = trees;
        tensors["forest.params"] = {{"n_trees", p.n_trees},
                                    {"max_depth", p.max_depth},
                                    {"min_samples_split", p.min_samples_split},
                                    {"bootstrap", p.bootstrap},
                                    {"max_features", p.max_features},
                                    {"seed", model.forest->seed}};
    }
    return {{"version", kModelFileVersion},
            {"variant", to_string(c.variant)},
            {"config", config},
            {"schema_fingerprint", model.schema_fingerprint()},
            {"standardization", standardization},
            {"tensors", tensors}};
}

ModelParams from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) raise(ErrorKind::CorruptFile, "model file must be a JSON object");
        const int version = j.at("version").get<int>();
        if (version != kModelFileVersion) {
            raise(ErrorKind::VersionMismatch, "model file version " + std::to_string(version) + " is not supported");
        }
        const auto& jc = j.at("config");
        ModelConfig c;
        c.variant = parse_variant(j.at("variant").get<std::string>());
        c.window_length = jc.at("window_length").get<std::size_t>();
        c.lstm_hidden = jc.at("lstm_hidden").get<std::size_t>();
        c.attention_dk = jc.at("attention_dk").get<std::size_t>();
        c.attention_dv = jc.at("attention_dv").get<std::size_t>();
        c.mlp_hidden = jc.at("mlp_hidden").get<std::size_t>();
        c.dropout = jc.at("dropout").get<double>();
        c.attention_residual = jc.at("attention_residual").get<bool>();
        c.flat_inputs = jc.at("flat_inputs").get<std::string>() == "all" ? FlatInputs::AllChannels
                                                                          : FlatInputs::NonSequentialOnly;
        const auto schema = data::schema_from_json(jc.at("schema"));

        ModelParams model = build(c, schema, 0);
        if (model.schema_fingerprint() != j.at("schema_fingerprint").get<std::string>()) {
            raise(ErrorKind::CorruptFile, "stored schema fingerprint does not match the stored schema");
        }
        const auto& js = j.at("standardization");
        model.standardization.mean = js.at("mean").get<std::vector<double>>();
        model.standardization.std = js.at("std").get<std::vector<double>>();
        model.standardization.target_mean = js.at("target_mean").get<double>();
        model.standardization.target_std = js.at("target_std").get<double>();
        if (model.standardization.mean.size() != schema.size() || model.standardization.std.size() != schema.size()) {
            raise(ErrorKind::CorruptFile, "standardization statistics do not match the schema");
        }

        const auto& jt = j.at("tensors");
        for (auto& t : model.network.tensors()) {
            nn::Matrix loaded = tensor_from_json(jt.at(t.name));
            if (!loaded.same_shape(*t.tensor)) raise(ErrorKind::CorruptFile, "tensor " + t.name + " has the wrong shape");
            *t.tensor = std::move(loaded);
        }
        if (c.variant == Variant::Svr) {
            classic::SvrModel s;
            s.support_vectors = tensor_from_json(jt.at("svr.support_vectors"));
            const auto coef = tensor_from_json(jt.at("svr.coefficients"));
            s.coefficients.assign(coef.values().begin(), coef.values().end());
            const auto& sc = jt.at("svr.scalars");
            s.bias = sc.at("bias").get<double>();
            s.gamma = sc.at("gamma").get<double>();
            s.c = sc.at("c").get<double>();
            s.epsilon = sc.at("epsilon").get<double>();
            if (s.coefficients.size() != s.support_vectors.rows()) {
                raise(ErrorKind::CorruptFile, "SVR coefficient count differs from support vectors");
            }
            model.svr = std::move(s);
        } else if (c.variant == Variant::RandomForest) {
            classic::ForestModel f;
            const auto& p = jt.at("forest.params");
            f.params.n_trees = p.at("n_trees").get<std::size_t>();
            f.params.max_depth = p.at("max_depth").get<std::size_t>();
            f.params.min_samples_split = p.at("min_samples_split").get<std::size_t>();
            f.params.bootstrap = p.at("bootstrap").get<bool>();
            f.params.max_features = p.at("max_features").get<std::size_t>();
            f.seed = p.at("seed").get<std::uint64_t>();
            for (const auto& jtree : jt.at("forest.trees")) {
                const auto feature = jtree.at("feature").get<std::vector<int>>();
                const auto left = jtree.at("left").get<std::vector<int>>();
                const auto right = jtree.at("right").get<std::vector<int>>();
                const auto threshold = jtree.at("threshold").get<std::vector<double>>();
                const auto value = jtree.at("value").get<std::vector<double>>();
                const std::size_t n = feature.size();
                if (n == 0 || left.size() != n || right.size() != n || threshold.size() != n || value.size() != n) {
                    raise(ErrorKind::CorruptFile, "tree arrays have inconsistent lengths");
                }
                classic::RegressionTree tree;
                for (std::size_t i = 0; i < n; ++i) {
                    const bool leaf = feature[i] < 0;
                    if (!leaf && (feature[i] >= static_cast<int>(schema.size()) || left[i] <= static_cast<int>(i) ||
                                  right[i] <= static_cast<int>(i) || left[i] >= static_cast<int>(n) ||
                                  right[i] >= static_cast<int>(n))) {
                        raise(ErrorKind::CorruptFile, "tree node links are invalid");
                    }
                    tree.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i], 0});
                }
                f.trees.push_back(std::move(tree));
            }
            if (f.trees.empty()) raise(ErrorKind::CorruptFile, "forest has no trees");
            model.forest = std::move(f);
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::CorruptFile, std::string("malformed model file: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::VersionMismatch || e.kind() == ErrorKind::CorruptFile) throw;
        raise(ErrorKind::CorruptFile, e.what());
    }
}

void save(const ModelParams& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
    out << to_json(model).dump(1) << '\n';
    if (!out) raise(ErrorKind::Io, "write failed for " + path.string());
}

ModelParams load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot read " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(buffer.str());
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::CorruptFile, path.string() + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace moldweight::model
