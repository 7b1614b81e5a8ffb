// moldweight: command-line front end for data generation, feature
// classification, training, prediction and the evaluation harnesses.
//
// Exit codes: 0 success, 1 usage error (nothing written), 2 data or numeric
// error (outputs of the failed command are removed).

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "moldweight/data.hpp"
#include "moldweight/errors.hpp"
#include "moldweight/eval.hpp"
#include "moldweight/model.hpp"
#include "moldweight/tsa.hpp"
#include "moldweight/version.hpp"

namespace fs = std::filesystem;
using namespace moldweight;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Everything a command writes, so a failure can remove it and the manifest
// can list it.
class Outputs {
public:
    void write(const fs::path& path, const std::string& content) {
        paths_.push_back(path);
        std::ofstream out(path, std::ios::binary);
        if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
        out << content;
        if (!out) raise(ErrorKind::Io, "write failed for " + path.string());
    }
    void track(const fs::path& path) { paths_.push_back(path); }
    void remove_all() const {
        std::error_code ec;
        for (const auto& p : paths_) fs::remove(p, ec);
    }
    [[nodiscard]] const std::vector<fs::path>& paths() const { return paths_; }

private:
    std::vector<fs::path> paths_;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot read " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

fs::path schema_sidecar(const fs::path& csv) { return fs::path(csv.string() + ".schema.json"); }

struct Context {
    std::string command_line;
    std::size_t threads = 1;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    Outputs outputs;
};

void write_manifest(Context& ctx, const fs::path& primary, const std::vector<std::uint64_t>& seeds,
                    const std::string& dataset_hash) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
    std::vector<std::string> outputs;
    for (const auto& p : ctx.outputs.paths()) outputs.push_back(p.string());
    const nlohmann::json manifest = {{"command_line", ctx.command_line},
                                     {"seeds", seeds},
                                     {"tool_version", kVersion},
                                     {"dataset_hash", dataset_hash},
                                     {"outputs", outputs},
                                     {"wall_clock_seconds", seconds}};
    ctx.outputs.write(fs::path(primary.string() + ".manifest.json"), manifest.dump(1) + "\n");
}

struct LoadedData {
    data::Dataset dataset;
    data::FeatureSchema schema;
    std::string hash;
    std::string schema_origin;
};

// Schema precedence: explicit --schema, then the <csv>.schema.json sidecar,
// then ACF classification of the file itself.
LoadedData load_data(const fs::path& csv, const std::string& schema_path) {
    LoadedData out;
    const std::string text = read_file(csv);
    out.hash = fnv1a_hex(text);
    out.dataset = data::parse_csv(text);
    fs::path sidecar = schema_path.empty() ? schema_sidecar(csv) : fs::path(schema_path);
    if (!schema_path.empty() || fs::exists(sidecar)) {
        out.schema = data::load_schema(sidecar);
        if (out.dataset.channels != out.schema.names()) {
            raise(ErrorKind::HeaderMismatch, csv.string() + " columns do not match schema " + sidecar.string());
        }
        out.schema_origin = sidecar.string();
    } else {
        out.schema = tsa::classify_dataset(out.dataset);
        out.schema_origin = "acf";
    }
    return out;
}

std::uint64_t default_seed() {
    if (const char* env = std::getenv("MOLDWEIGHT_SEED")) {
        std::uint64_t value = 0;
        const std::string text = env;
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc() || ptr != text.data() + text.size()) {
            throw UsageError("MOLDWEIGHT_SEED must be a non-negative integer, got '" + text + "'");
        }
        return value;
    }
    return 1;
}

void reject_same_file(const fs::path& in, const fs::path& out) {
    std::error_code ec;
    if (fs::weakly_canonical(in, ec) == fs::weakly_canonical(out, ec)) {
        throw UsageError("output path must differ from the input " + in.string());
    }
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenArgs {
    std::size_t molds = 400, seq = 8, nonseq = 8;
    std::optional<std::uint64_t> seed;
    double noise = 0.01, drift = 0.0, volume_std = 0.5;
    std::string out, truth;
};

int run_gen(Context& ctx, const GenArgs& a) {
    data::GenConfig config;
    config.n_molds = a.molds;
    config.n_sequential = a.seq;
    config.n_nonsequential = a.nonseq;
    config.noise_std = a.noise;
    config.drift_amplitude = a.drift;
    config.volume_std_mm = a.volume_std;
    const std::uint64_t seed = a.seed.value_or(default_seed());
    const auto generated = data::generate_synthetic(config, seed);
    const std::string csv = data::format_csv(generated.dataset);
    ctx.outputs.write(a.out, csv);
    ctx.outputs.write(schema_sidecar(a.out), data::schema_to_json(generated.schema).dump(1) + "\n");
    if (!a.truth.empty()) ctx.outputs.write(a.truth, data::truth_to_json(generated.truth).dump(1) + "\n");
    write_manifest(ctx, a.out, {seed}, fnv1a_hex(csv));
    return 0;
}

struct AcfArgs {
    std::string in, out, report, schema_out;
    std::size_t max_lag = tsa::kDefaultMaxLag;
    double confidence = tsa::kDefaultConfidence;
    bool no_correction = false;
    std::vector<std::string> overrides;
};

int run_acf(Context& ctx, const AcfArgs& a) {
    tsa::Overrides overrides;
    for (const auto& item : a.overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw UsageError("--override expects name=sequential|non-sequential");
        try {
            overrides[item.substr(0, eq)] = data::parse_property(item.substr(eq + 1));
        } catch (const Error&) {
            throw UsageError("--override expects name=sequential|non-sequential, got '" + item + "'");
        }
    }
    const std::string text = read_file(a.in);
    const auto dataset = data::parse_csv(text);
    const auto correction = a.no_correction ? tsa::LagCorrection::None : tsa::LagCorrection::Bonferroni;
    const std::size_t max_lag = std::min(a.max_lag, dataset.size() - 1);
    const auto schema = tsa::classify_dataset(dataset, overrides, max_lag, a.confidence, nullptr, correction);

    std::string csv = "channel,lag,r,bound\n";
    nlohmann::json channels = nlohmann::json::array();
    const double class_bound = tsa::classification_bound(dataset.size(), max_lag, a.confidence, correction);
    for (std::size_t c = 0; c < dataset.channels.size(); ++c) {
        const auto& name = dataset.channels[c];
        const auto result = tsa::acf(dataset.column(c), max_lag, a.confidence);
        for (std::size_t k = 0; k <= max_lag; ++k) {
            csv += name + "," + std::to_string(k) + "," + data::format_real(result.coefficients[k]) + "," +
                   data::format_real(result.bound) + "\n";
        }
        const auto& spec = schema.channels[c];
        channels.push_back({{"channel", name},
                            {"property", data::to_string(spec.property)},
                            {"decided_by", spec.decided_by == data::DecidedBy::Acf ? "acf" : "override"},
                            {"significant_lags", result.significant_lags},
                            {"r1", result.coefficients.size() > 1 ? result.coefficients[1] : 0.0}});
    }
    const nlohmann::json report = {{"n", dataset.size()},
                                   {"max_lag", max_lag},
                                   {"confidence", a.confidence},
                                   {"lag_correction", a.no_correction ? "none" : "bonferroni"},
                                   {"display_bound", tsa::significance_bound(dataset.size(), a.confidence)},
                                   {"classification_bound", class_bound},
                                   {"channels", channels}};
    ctx.outputs.write(a.out, csv);
    const fs::path report_path = a.report.empty() ? fs::path(a.out + ".report.json") : fs::path(a.report);
    ctx.outputs.write(report_path, report.dump(1) + "\n");
    if (!a.schema_out.empty()) ctx.outputs.write(a.schema_out, data::schema_to_json(schema).dump(1) + "\n");
    write_manifest(ctx, a.out, {}, fnv1a_hex(text));
    std::cout << "channel                         property        decided_by\n";
    for (const auto& ch : channels) {
        std::printf("%-31s %-15s %s\n", ch["channel"].get<std::string>().c_str(),
                    ch["property"].get<std::string>().c_str(), ch["decided_by"].get<std::string>().c_str());
    }
    return 0;
}

struct TrainArgs {
    std::string variant = "mfa-ann", in, out, schema, history;
    std::size_t window = 5, epochs = 2000, batch = 4, patience = 100, folds = 5;
    std::optional<std::uint64_t> seed;
    double lr = 0.0005, dropout = 0.3, weight_decay = 0.01, val_fraction = 0.2;
    bool no_grid_search = false, no_residual = false, nonseq_only = false;
    long train_first = 1, train_last = 100;
};

int run_train(Context& ctx, const TrainArgs& a) {
    const auto loaded = load_data(a.in, a.schema);
    model::ModelConfig mc;
    mc.variant = model::parse_variant(a.variant);
    mc.window_length = a.window;
    mc.dropout = a.dropout;
    mc.attention_residual = !a.no_residual;
    mc.flat_inputs = a.nonseq_only ? model::FlatInputs::NonSequentialOnly : model::FlatInputs::AllChannels;
    model::TrainConfig tc;
    tc.lr = a.lr;
    tc.batch_size = a.batch;
    tc.weight_decay = a.weight_decay;
    tc.max_epochs = a.epochs;
    tc.early_stop_patience = a.patience;
    tc.val_fraction = a.val_fraction;
    tc.seed = a.seed.value_or(default_seed());
    tc.grid_search = !a.no_grid_search;
    tc.cv_folds = a.folds;

    const auto train_set = data::slice(loaded.dataset, a.train_first, a.train_last);
    auto result = model::train(model::build(mc, loaded.schema, tc.seed), train_set, tc);
    model::save(result.model, a.out);
    ctx.outputs.track(a.out);
    if (!a.history.empty()) {
        std::string csv = "epoch,train_loss,val_rmse\n";
        for (const auto& e : result.history) {
            csv += std::to_string(e.epoch) + "," + data::format_real(e.train_loss) + "," +
                   data::format_real(e.val_rmse) + "\n";
        }
        ctx.outputs.write(a.history, csv);
    }
    if (!result.selection.is_null()) {
        ctx.outputs.write(a.out + ".selection.json", result.selection.dump(1) + "\n");
    }
    write_manifest(ctx, a.out, {tc.seed}, loaded.hash);
    std::cout << "variant " << a.variant << ", schema " << loaded.schema_origin << ", " << train_set.size()
              << " training molds";
    if (model::is_neural(mc.variant)) {
        std::cout << ", best epoch " << result.best_epoch << ", validation rmse " << result.best_val_rmse;
    }
    std::cout << "\n";
    return 0;
}

double parse_field(const std::string& text, std::size_t row, const std::string& column) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
        raise(ErrorKind::ParseError, "stdin row " + std::to_string(row) + ", column " + column + ": '" + text + "'");
    }
    return value;
}

// Online records: a header line, then one CSV record per line; the weight
// column is optional.
int run_online(const model::ModelParams& m) {
    std::string line;
    if (!std::getline(std::cin, line)) raise(ErrorKind::InsufficientData, "no header on standard input");
    const auto header = split_list(line);
    const auto names = m.schema.names();
    const bool has_weight = header.size() == names.size() + 2 && header.back() == "weight";
    if (header.size() != names.size() + (has_weight ? 2 : 1) || header.front() != "mold_index" ||
        !std::equal(names.begin(), names.end(), header.begin() + 1)) {
        raise(ErrorKind::HeaderMismatch, "stdin header must be mold_index,<model channels>[,weight]");
    }
    model::OnlinePredictor predictor(m);
    for (std::size_t row = 2; std::getline(std::cin, line); ++row) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_list(line);
        if (fields.size() != header.size()) {
            raise(ErrorKind::ParseError, "stdin row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                                             " fields, expected " + std::to_string(header.size()));
        }
        data::MoldRecord record;
        record.mold_index = static_cast<long>(parse_field(fields[0], row, "mold_index"));
        for (std::size_t c = 0; c < names.size(); ++c) record.features.push_back(parse_field(fields[c + 1], row, names[c]));
        if (has_weight) record.weight = parse_field(fields.back(), row, "weight");
        const auto out = predictor.push(record);
        std::cout << (out.prediction ? data::format_real(*out.prediction) : std::string("warming_up")) << std::endl;
    }
    return 0;
}

struct PredictArgs {
    std::string model, input, out;
    bool online = false;
    std::optional<long> first, last;
};

int run_predict(Context& ctx, const PredictArgs& a) {
    const auto m = model::load(a.model);
    if (a.online) return run_online(m);
    if (a.input.empty()) throw UsageError("predict needs --input unless --online is given");
    if (a.out.empty()) throw UsageError("predict needs --out unless --online is given");
    const std::string text = read_file(a.input);
    const auto dataset = data::parse_csv(text);
    if (fs::exists(schema_sidecar(a.input))) model::check_schema(m, data::load_schema(schema_sidecar(a.input)));
    if (dataset.empty()) raise(ErrorKind::InsufficientData, "input has no records");
    const long first = a.first.value_or(dataset.records.front().mold_index);
    const long last = a.last.value_or(dataset.records.back().mold_index);
    const auto preds = model::predict(m, dataset, first, last);
    std::string csv = "mold_index,predicted,actual\n";
    for (const auto& p : preds) {
        csv += std::to_string(p.mold_index) + "," + data::format_real(p.predicted) + "," + data::format_real(p.actual) +
               "\n";
    }
    ctx.outputs.write(a.out, csv);
    write_manifest(ctx, a.out, {}, fnv1a_hex(text));
    return 0;
}

struct EvalArgs {
    std::string model, in, out, cdf, box;
    long first = 101, last = 200;
};

int run_eval(Context& ctx, const EvalArgs& a) {
    const auto m = model::load(a.model);
    const std::string text = read_file(a.in);
    const auto dataset = data::parse_csv(text);
    if (fs::exists(schema_sidecar(a.in))) model::check_schema(m, data::load_schema(schema_sidecar(a.in)));
    const auto report = eval::make_report(model::predict(m, dataset, a.first, a.last));
    auto j = eval::to_json(report);
    j["variant"] = model::to_string(m.config.variant);
    j["first_mold"] = a.first;
    j["last_mold"] = a.last;
    ctx.outputs.write(a.out, j.dump(1) + "\n");
    ctx.outputs.write(a.cdf.empty() ? a.out + ".cdf.csv" : a.cdf, eval::cdf_csv(report.cdf));
    ctx.outputs.write(a.box.empty() ? a.out + ".box.csv" : a.box,
                      eval::box_csv({{"abs_error", report.abs_error_box}, {"signed_error", report.signed_error_box}}));
    write_manifest(ctx, a.out, {}, fnv1a_hex(text));
    std::printf("rmse %.6f over %zu molds\n", report.rmse, report.errors.size());
    return 0;
}

struct HarnessArgs {
    std::string in, schema, out, csv, pairing = "absolute", variants = "mfa-ann,flat-ann,all-lstm,svr,rf";
    std::string channels;
    std::optional<std::uint64_t> seed;
    std::size_t n_seeds = 10, epochs = 2000, patience = 100;
    double diameter = 30.0;
};

eval::HarnessConfig harness_config(const Context& ctx, const HarnessArgs& a) {
    eval::HarnessConfig hc;
    const std::uint64_t base = a.seed.value_or(default_seed());
    hc.seeds.clear();
    for (std::size_t i = 0; i < a.n_seeds; ++i) hc.seeds.push_back(base + i);
    hc.pairing = a.pairing == "signed" ? eval::Pairing::Signed : eval::Pairing::Absolute;
    hc.threads = ctx.threads;
    hc.train.max_epochs = a.epochs;
    hc.train.early_stop_patience = a.patience;
    return hc;
}

int run_compare(Context& ctx, const HarnessArgs& a) {
    std::vector<model::Variant> variants;
    for (const auto& v : split_list(a.variants)) {
        try {
            variants.push_back(model::parse_variant(v));
        } catch (const Error&) {
            throw UsageError("unknown variant '" + v + "'");
        }
    }
    if (variants.empty()) throw UsageError("--variants must name at least one variant");
    const auto loaded = load_data(a.in, a.schema);
    const auto hc = harness_config(ctx, a);
    const auto report = eval::run_comparison(loaded.dataset, loaded.schema, variants, hc);
    ctx.outputs.write(a.out, eval::to_json(report).dump(1) + "\n");
    const std::string text = eval::render_comparison(report);
    ctx.outputs.write(a.out + ".txt", text);
    write_manifest(ctx, a.out, hc.seeds, loaded.hash);
    std::cout << text;
    return 0;
}

int run_ablate(Context& ctx, const HarnessArgs& a) {
    const auto loaded = load_data(a.in, a.schema);
    const auto hc = harness_config(ctx, a);
    const auto report = eval::run_ablation(loaded.dataset, loaded.schema, hc);
    ctx.outputs.write(a.out, eval::to_json(report).dump(1) + "\n");
    const std::string csv = eval::ablation_csv(report);
    ctx.outputs.write(a.csv.empty() ? a.out + ".csv" : a.csv, csv);
    write_manifest(ctx, a.out, hc.seeds, loaded.hash);
    std::cout << csv;
    return 0;
}

int run_precision(Context& ctx, const HarnessArgs& a) {
    const auto loaded = load_data(a.in, a.schema);
    data::QuantizationSpec q;
    q.screw_diameter_mm = a.diameter;
    q.channels = a.channels.empty() ? data::default_quantized_channels() : split_list(a.channels);
    const auto hc = harness_config(ctx, a);
    const auto report = eval::run_precision_study(loaded.dataset, loaded.schema, q, hc);
    ctx.outputs.write(a.out, eval::to_json(report).dump(1) + "\n");
    ctx.outputs.write(a.csv.empty() ? a.out + ".box.csv" : a.csv,
                      eval::box_csv({{"high_precision", report.original_box}, {"quantized", report.quantized_box}}));
    write_manifest(ctx, a.out, hc.seeds, loaded.hash);
    std::printf("high precision rmse %.6f, quantized rmse %.6f, degradation %.2f%%\n", report.mean_original,
                report.mean_quantized, report.degradation_percent);
    return 0;
}

struct QuantizeArgs {
    std::string in, out, channels;
    double diameter = 30.0;
};

int run_quantize(Context& ctx, const QuantizeArgs& a) {
    reject_same_file(a.in, a.out);
    const std::string text = read_file(a.in);
    const auto dataset = data::parse_csv(text);
    data::QuantizationSpec q;
    q.screw_diameter_mm = a.diameter;
    q.channels = a.channels.empty() ? data::default_quantized_channels() : split_list(a.channels);
    const auto quantized = data::quantize(dataset, q);
    ctx.outputs.write(a.out, data::format_csv(quantized));
    if (fs::exists(schema_sidecar(a.in))) ctx.outputs.write(schema_sidecar(a.out), read_file(schema_sidecar(a.in)));
    write_manifest(ctx, a.out, {}, fnv1a_hex(text));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Injection-molding part weight prediction (mixed-feature attention network and baselines)",
                 "moldweight"};
    app.set_version_flag("--version", std::string("moldweight ") + kVersion);
    app.require_subcommand(1);
    app.fallthrough();
    Context ctx;
    for (int i = 0; i < argc; ++i) ctx.command_line += (i ? " " : "") + std::string(argv[i]);
    app.add_option("--threads", ctx.threads, "Parallel harness cells")->check(CLI::PositiveNumber)
        ->capture_default_str();

    const std::vector<std::string> variant_names{"mfa-ann", "mixed-no-attention", "flat-attention", "flat-ann",
                                                 "all-lstm", "svr", "rf"};

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic molding dataset");
    gen_cmd->add_option("--molds", gen.molds, "Number of molds")->capture_default_str()->check(CLI::Range(2, 1000000));
    gen_cmd->add_option("--seq", gen.seq, "Sequential channels")->capture_default_str();
    gen_cmd->add_option("--nonseq", gen.nonseq, "Non-sequential channels")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed (default $MOLDWEIGHT_SEED or 1)");
    gen_cmd->add_option("--noise", gen.noise, "Weight noise std (g)")->capture_default_str();
    gen_cmd->add_option("--drift", gen.drift, "Slow sinusoidal drift amplitude")->capture_default_str();
    gen_cmd->add_option("--volume-std", gen.volume_std, "Volume channel spread (mm of screw travel)")
        ->capture_default_str();
    gen_cmd->add_option("--truth", gen.truth, "Also write the generating coefficients as JSON");
    gen_cmd->add_option("--out", gen.out, "Dataset CSV")->required();

    AcfArgs acf;
    auto* acf_cmd = app.add_subcommand("acf", "Autocorrelation per channel and sequential/non-sequential tags");
    acf_cmd->add_option("--in", acf.in, "Dataset CSV")->required()->check(CLI::ExistingFile);
    acf_cmd->add_option("--out", acf.out, "ACF CSV (channel,lag,r,bound)")->required();
    acf_cmd->add_option("--report", acf.report, "Classification JSON (default <out>.report.json)");
    acf_cmd->add_option("--schema-out", acf.schema_out, "Write the derived schema JSON");
    acf_cmd->add_option("--max-lag", acf.max_lag, "Largest lag")->capture_default_str()->check(CLI::PositiveNumber);
    acf_cmd->add_option("--confidence", acf.confidence, "Confidence level")->capture_default_str();
    acf_cmd->add_flag("--no-correction", acf.no_correction, "Test every lag at the raw confidence level");
    acf_cmd->add_option("--override", acf.overrides, "name=sequential|non-sequential (repeatable)");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train a model on the training molds");
    train_cmd->add_option("--variant", train.variant, "Model variant")
        ->capture_default_str()
        ->check(CLI::IsMember(variant_names));
    train_cmd->add_option("--in,--input", train.in, "Dataset CSV")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--schema", train.schema, "Schema JSON (default <csv>.schema.json, else ACF)");
    train_cmd->add_option("--out", train.out, "Model JSON")->required();
    train_cmd->add_option("--history", train.history, "Per-epoch loss CSV");
    train_cmd->add_option("--window", train.window, "Window length L")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--seed", train.seed, "Training seed (default $MOLDWEIGHT_SEED or 1)");
    train_cmd->add_option("--epochs", train.epochs, "Maximum epochs")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", train.lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--batch", train.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--dropout", train.dropout, "Dropout rate")->capture_default_str();
    train_cmd->add_option("--weight-decay", train.weight_decay, "AdamW weight decay")->capture_default_str();
    train_cmd->add_option("--patience", train.patience, "Early-stopping patience")->capture_default_str();
    train_cmd->add_option("--val-fraction", train.val_fraction, "Validation share")->capture_default_str();
    train_cmd->add_option("--folds", train.folds, "CV folds for svr/rf")->capture_default_str();
    train_cmd->add_flag("--no-grid-search", train.no_grid_search, "svr/rf: fit the first grid entry");
    train_cmd->add_flag("--no-residual", train.no_residual, "Feed attention output alone to the head");
    train_cmd->add_flag("--nonseq-only", train.nonseq_only, "Flat variants see only non-sequential channels");
    train_cmd->add_option("--train-first", train.train_first, "First training mold")->capture_default_str();
    train_cmd->add_option("--train-last", train.train_last, "Last training mold")->capture_default_str();

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Predict weights in batch or from a stream on stdin");
    predict_cmd->add_option("--model", predict.model, "Model JSON")->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--input,--in", predict.input, "Dataset CSV")->check(CLI::ExistingFile);
    predict_cmd->add_option("--out", predict.out, "Predictions CSV");
    predict_cmd->add_flag("--online", predict.online, "Read a header and records from stdin, one output line each");
    predict_cmd->add_option("--first", predict.first, "First mold to predict");
    predict_cmd->add_option("--last", predict.last, "Last mold to predict");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "RMSE, error CDF and box summaries on the test molds");
    eval_cmd->add_option("--model", ev.model, "Model JSON")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--in,--input", ev.in, "Dataset CSV")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", ev.out, "Report JSON (default report.json)")->capture_default_str();
    eval_cmd->add_option("--cdf", ev.cdf, "CDF CSV (default <out>.cdf.csv)");
    eval_cmd->add_option("--box", ev.box, "Box-plot CSV (default <out>.box.csv)");
    eval_cmd->add_option("--first", ev.first, "First test mold")->capture_default_str();
    eval_cmd->add_option("--last", ev.last, "Last test mold")->capture_default_str();
    ev.out = "report.json";

    HarnessArgs cmp, abl, prec;
    cmp.out = "comparison.json";
    abl.out = "ablation.json";
    prec.out = "precision.json";
    auto harness_options = [&](CLI::App* cmd, HarnessArgs& h) {
        cmd->add_option("--in,--input", h.in, "Dataset CSV")->required()->check(CLI::ExistingFile);
        cmd->add_option("--schema", h.schema, "Schema JSON (default <csv>.schema.json, else ACF)");
        cmd->add_option("--out", h.out, "Report JSON")->capture_default_str();
        cmd->add_option("--seed", h.seed, "First seed (default $MOLDWEIGHT_SEED or 1)");
        cmd->add_option("--seeds", h.n_seeds, "Number of consecutive seeds")->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--epochs", h.epochs, "Maximum epochs per cell")->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--patience", h.patience, "Early-stopping patience")->capture_default_str();
        cmd->add_option("--pairing", h.pairing, "t-test pairing")
            ->capture_default_str()
            ->check(CLI::IsMember({"absolute", "signed"}));
    };
    auto* compare_cmd = app.add_subcommand("compare", "Baseline comparison with the pairwise p-value matrix");
    harness_options(compare_cmd, cmp);
    compare_cmd->add_option("--variants", cmp.variants, "Comma-separated variants")->capture_default_str();
    auto* ablate_cmd = app.add_subcommand("ablate", "Four-group ablation (mixed features x attention)");
    harness_options(ablate_cmd, abl);
    ablate_cmd->add_option("--csv", abl.csv, "Ablation CSV (default <out>.csv)");
    auto* precision_cmd = app.add_subcommand("precision", "High-precision vs quantized inputs");
    harness_options(precision_cmd, prec);
    precision_cmd->add_option("--diameter", prec.diameter, "Screw diameter (mm)")->capture_default_str()
        ->check(CLI::PositiveNumber);
    precision_cmd->add_option("--channels", prec.channels, "Comma-separated channels to quantize");
    precision_cmd->add_option("--csv", prec.csv, "Box-plot CSV (default <out>.box.csv)");

    QuantizeArgs quant;
    auto* quantize_cmd = app.add_subcommand("quantize", "Apply the controller export rounding to volume channels");
    quantize_cmd->add_option("--in", quant.in, "Dataset CSV")->required()->check(CLI::ExistingFile);
    quantize_cmd->add_option("--out", quant.out, "Quantized CSV")->required();
    quantize_cmd->add_option("--diameter", quant.diameter, "Screw diameter (mm)")->capture_default_str()
        ->check(CLI::PositiveNumber);
    quantize_cmd->add_option("--channels", quant.channels, "Comma-separated channels (default: volume channels)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*gen_cmd) return run_gen(ctx, gen);
        if (*acf_cmd) return run_acf(ctx, acf);
        if (*train_cmd) return run_train(ctx, train);
        if (*predict_cmd) return run_predict(ctx, predict);
        if (*eval_cmd) return run_eval(ctx, ev);
        if (*compare_cmd) return run_compare(ctx, cmp);
        if (*ablate_cmd) return run_ablate(ctx, abl);
        if (*precision_cmd) return run_precision(ctx, prec);
        if (*quantize_cmd) return run_quantize(ctx, quant);
    } catch (const UsageError& e) {
        ctx.outputs.remove_all();
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        ctx.outputs.remove_all();
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
