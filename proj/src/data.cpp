#include "moldweight/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "moldweight/errors.hpp"

namespace moldweight::data {

std::string to_string(FeatureProperty property) {
    return property == FeatureProperty::Sequential ? "sequential" : "non-sequential";
}

FeatureProperty parse_property(const std::string& text) {
    if (text == "sequential") return FeatureProperty::Sequential;
    if (text == "non-sequential" || text == "nonsequential") return FeatureProperty::NonSequential;
    raise(ErrorKind::InvalidArgument, "unknown feature property '" + text + "'");
}

namespace {

std::string to_string(Source source) { return source == Source::Machine ? "machine" : "cavity"; }

Source parse_source(const std::string& text) {
    if (text == "machine") return Source::Machine;
    if (text == "cavity") return Source::Cavity;
    raise(ErrorKind::InvalidArgument, "unknown channel source '" + text + "'");
}

}  // namespace

std::vector<std::size_t> FeatureSchema::indices(FeatureProperty property) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i].property == property) out.push_back(i);
    }
    return out;
}

std::size_t FeatureSchema::count(FeatureProperty property) const {
    return static_cast<std::size_t>(std::count_if(channels.begin(), channels.end(),
                                                  [&](const ChannelSpec& c) { return c.property == property; }));
}

std::vector<std::string> FeatureSchema::names() const {
    std::vector<std::string> out;
    out.reserve(channels.size());
    for (const auto& c : channels) out.push_back(c.name);
    return out;
}

std::optional<std::size_t> FeatureSchema::find(const std::string& name) const {
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i].name == name) return i;
    }
    return std::nullopt;
}

std::string FeatureSchema::fingerprint() const {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto feed = [&](std::string_view text) {
        for (unsigned char ch : text) {
            hash ^= ch;
            hash *= 0x100000001b3ULL;
        }
    };
    for (const auto& c : channels) {
        feed(c.name);
        feed(":");
        feed(to_string(c.property));
        feed(";");
    }
    char buffer[17];
    std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(hash));
    return buffer;
}

nlohmann::json schema_to_json(const FeatureSchema& schema) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : schema.channels) {
        out.push_back({{"name", c.name},
                       {"unit", c.unit},
                       {"source", to_string(c.source)},
                       {"property", to_string(c.property)}});
    }
    return out;
}

FeatureSchema schema_from_json(const nlohmann::json& j) {
    if (!j.is_array()) raise(ErrorKind::CorruptFile, "schema must be a JSON array");
    FeatureSchema schema;
    try {
        for (const auto& item : j) {
            ChannelSpec c;
            c.name = item.at("name").get<std::string>();
            c.unit = item.value("unit", std::string{});
            c.source = parse_source(item.value("source", std::string{"machine"}));
            c.property = parse_property(item.at("property").get<std::string>());
            c.decided_by = DecidedBy::Override;
            if (schema.find(c.name)) raise(ErrorKind::InvalidConfig, "duplicate channel '" + c.name + "'");
            schema.channels.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::CorruptFile, std::string("malformed schema: ") + e.what());
    }
    if (schema.channels.empty()) raise(ErrorKind::InvalidConfig, "schema has no channels");
    return schema;
}

void save_schema(const FeatureSchema& schema, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
    out << schema_to_json(schema).dump(2) << '\n';
}

FeatureSchema load_schema(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::CorruptFile, path.string() + ": " + e.what());
    }
    return schema_from_json(j);
}

std::vector<double> Dataset::column(std::size_t channel) const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.features.at(channel));
    return out;
}

std::vector<double> Dataset::weights() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.weight);
    return out;
}

std::optional<std::size_t> Dataset::find(const std::string& name) const {
    const auto it = std::find(channels.begin(), channels.end(), name);
    if (it == channels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - channels.begin());
}

void validate(const Dataset& dataset) {
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        const auto& r = dataset.records[i];
        if (r.features.size() != dataset.channels.size()) {
            raise(ErrorKind::ShapeMismatch, "mold " + std::to_string(r.mold_index) + " has " +
                                                std::to_string(r.features.size()) + " features, expected " +
                                                std::to_string(dataset.channels.size()));
        }
        if (i > 0 && r.mold_index <= dataset.records[i - 1].mold_index) {
            raise(ErrorKind::NonMonotonicMoldIndex, "mold index " + std::to_string(r.mold_index) +
                                                        " does not increase after " +
                                                        std::to_string(dataset.records[i - 1].mold_index));
        }
        if (!std::isfinite(r.weight) ||
            !std::all_of(r.features.begin(), r.features.end(), [](double v) { return std::isfinite(v); })) {
            raise(ErrorKind::NonFiniteInput, "mold " + std::to_string(r.mold_index) + " has a non-finite value");
        }
    }
}

// ---------------------------------------------------------------------------
// CSV

std::string format_real(double value) {
    char buffer[64];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

std::string format_csv(const Dataset& dataset) {
    std::string out = "mold_index";
    for (const auto& name : dataset.channels) {
        out += ',';
        out += name;
    }
    out += ",weight\n";
    for (const auto& r : dataset.records) {
        out += std::to_string(r.mold_index);
        for (double v : r.features) {
            out += ',';
            out += format_real(v);
        }
        out += ',';
        out += format_real(r.weight);
        out += '\n';
    }
    return out;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
    out << format_csv(dataset);
    if (!out) raise(ErrorKind::Io, "write failed for " + path.string());
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no, std::string_view column) {
    field = trim(field);
    T value{};
    const char* begin = field.data();
    const char* end = field.data() + field.size();
    if (!field.empty() && field.front() == '+') ++begin;
    const auto result = std::from_chars(begin, end, value);
    if (field.empty() || result.ec != std::errc{} || result.ptr != end) {
        raise(ErrorKind::ParseError, "row " + std::to_string(line_no) + ", column '" + std::string(column) +
                                         "': cannot parse '" + std::string(field) + "' as a number");
    }
    return value;
}

}  // namespace

Dataset parse_csv(std::string_view text) {
    Dataset dataset;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = nl == std::string_view::npos ? text : text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (header.empty()) {
            for (auto f : fields) header.emplace_back(trim(f));
            if (header.size() < 2 || header.front() != "mold_index" || header.back() != "weight") {
                raise(ErrorKind::HeaderMismatch, "header must start with 'mold_index' and end with 'weight'");
            }
            dataset.channels.assign(header.begin() + 1, header.end() - 1);
            continue;
        }
        if (fields.size() != header.size()) {
            raise(ErrorKind::ParseError, "row " + std::to_string(line_no) + ": expected " +
                                             std::to_string(header.size()) + " fields, found " +
                                             std::to_string(fields.size()));
        }
        MoldRecord r;
        r.mold_index = parse_number<long>(fields.front(), line_no, header.front());
        r.features.reserve(dataset.channels.size());
        for (std::size_t c = 1; c + 1 < fields.size(); ++c) {
            r.features.push_back(parse_number<double>(fields[c], line_no, header[c]));
        }
        r.weight = parse_number<double>(fields.back(), line_no, header.back());
        dataset.records.push_back(std::move(r));
    }
    if (header.empty()) raise(ErrorKind::HeaderMismatch, "empty CSV: no header row");
    validate(dataset);
    return dataset;
}

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot read " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_csv(buffer.str());
}

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
    Dataset dataset = load_csv(path);
    if (dataset.channels != schema.names()) {
        raise(ErrorKind::HeaderMismatch, "CSV channel columns do not match the schema in " + path.string());
    }
    return dataset;
}

// ---------------------------------------------------------------------------
// Generator

namespace {

struct CatalogEntry {
    const char* name;
    const char* unit;
    Source source;
    double offset;
    double scale;
};

// Controller volume units: one millimetre of screw travel at the default 30 mm
// screw diameter; the generator scales them by volume_std_mm.
constexpr double kVolumePerMm = std::numbers::pi * 30.0 * 30.0 / 4.0;

constexpr CatalogEntry kSequentialCatalog[] = {
    {"melt_time_s", "s", Source::Machine, 4.2, 0.05},
    {"melt_start_volume_mm3", "mm3", Source::Machine, 50.0 * kVolumePerMm, kVolumePerMm},
    {"return_water_T_C", "C", Source::Machine, 28.0, 0.3},
    {"cavity_T_C", "C", Source::Cavity, 60.0, 0.5},
    {"barrel_T1_C", "C", Source::Machine, 230.0, 0.4},
    {"barrel_T2_C", "C", Source::Machine, 225.0, 0.4},
    {"barrel_T3_C", "C", Source::Machine, 220.0, 0.4},
    {"mold_T_C", "C", Source::Machine, 45.0, 0.3},
};

constexpr CatalogEntry kNonSequentialCatalog[] = {
    {"peak_injection_pressure_MPa", "MPa", Source::Machine, 95.0, 1.5},
    {"switchover_volume_mm3", "mm3", Source::Machine, 15.0 * kVolumePerMm, kVolumePerMm},
    {"cavity_pressure_MPa", "MPa", Source::Cavity, 60.0, 1.2},
    {"holding_time_s", "s", Source::Machine, 3.0, 0.02},
    {"switchover_speed_mm_s", "mm/s", Source::Machine, 40.0, 0.3},
    {"injection_time_s", "s", Source::Machine, 1.1, 0.01},
    {"cushion_mm", "mm", Source::Machine, 5.0, 0.05},
    {"clamp_force_kN", "kN", Source::Machine, 800.0, 2.0},
};

template <std::size_t N>
ChannelSpec catalog_channel(const CatalogEntry (&catalog)[N], std::size_t i, const char* fallback_prefix,
                            FeatureProperty property, double& offset, double& scale) {
    ChannelSpec c;
    c.property = property;
    c.decided_by = DecidedBy::Override;
    if (i < N) {
        c.name = catalog[i].name;
        c.unit = catalog[i].unit;
        c.source = catalog[i].source;
        offset = catalog[i].offset;
        scale = catalog[i].scale;
    } else {
        c.name = std::string(fallback_prefix) + std::to_string(i + 1);
        c.unit = "au";
        offset = 0.0;
        scale = 1.0;
    }
    return c;
}

}  // namespace

std::vector<std::string> default_quantized_channels() {
    return {kSequentialCatalog[1].name, kNonSequentialCatalog[1].name};
}

Generated generate_synthetic(const GenConfig& config, std::uint64_t seed) {
    const std::size_t n_seq = config.n_sequential;
    const std::size_t n_non = config.n_nonsequential;
    if (config.n_molds < 2) raise(ErrorKind::InvalidConfig, "n_molds must be at least 2");
    if (n_seq + n_non == 0) raise(ErrorKind::InvalidConfig, "at least one channel is required");
    if (!(config.noise_std > 0.0)) raise(ErrorKind::InvalidConfig, "noise_std must be positive");
    if (!(config.volume_std_mm > 0.0)) raise(ErrorKind::InvalidConfig, "volume_std_mm must be positive");
    if (!config.ar_coefficients.empty() && config.ar_coefficients.size() != n_seq) {
        raise(ErrorKind::InvalidConfig, "ar_coefficients must have one entry per sequential channel");
    }
    if (!config.sequential_direction.empty() && config.sequential_direction.size() != n_seq) {
        raise(ErrorKind::InvalidConfig, "sequential_direction must have one entry per sequential channel");
    }
    if (!config.nonsequential_coefficients.empty() && config.nonsequential_coefficients.size() != n_non) {
        raise(ErrorKind::InvalidConfig, "nonsequential_coefficients must have one entry per non-sequential channel");
    }

    std::mt19937_64 coef_rng(seed);
    std::mt19937_64 process_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    GroundTruth truth;
    truth.base_weight = config.base_weight;
    truth.noise_std = config.noise_std;
    truth.lag_weights = config.lag_weights;

    truth.ar_coefficients = config.ar_coefficients;
    if (truth.ar_coefficients.empty()) {
        for (std::size_t j = 0; j < n_seq; ++j) truth.ar_coefficients.push_back(0.6 + 0.25 * unit(coef_rng));
    }
    for (double phi : truth.ar_coefficients) {
        if (!(std::fabs(phi) < 1.0)) raise(ErrorKind::InvalidConfig, "AR coefficients must satisfy |phi| < 1");
    }

    truth.sequential_direction = config.sequential_direction;
    if (truth.sequential_direction.empty()) {
        truth.sequential_direction.assign(n_seq, 0.0);
        double norm = 0.0;
        for (std::size_t j = 0; j < std::min(config.relevant_sequential, n_seq); ++j) {
            const double magnitude = 0.5 + 0.5 * unit(coef_rng);
            truth.sequential_direction[j] = unit(coef_rng) < 0.5 ? -magnitude : magnitude;
            norm += magnitude * magnitude;
        }
        if (norm > 0.0) {
            for (double& u : truth.sequential_direction) u /= std::sqrt(norm);
        }
    }

    truth.nonsequential_coefficients = config.nonsequential_coefficients;
    if (truth.nonsequential_coefficients.empty()) {
        truth.nonsequential_coefficients.assign(n_non, 0.0);
        for (std::size_t j = 0; j < std::min(config.relevant_nonsequential, n_non); ++j) {
            const double magnitude =
                config.beta_range.first + (config.beta_range.second - config.beta_range.first) * unit(coef_rng);
            truth.nonsequential_coefficients[j] = unit(coef_rng) < 0.5 ? -magnitude : magnitude;
        }
    }

    Generated out;
    for (std::size_t j = 0; j < n_seq; ++j) {
        double offset = 0.0, scale = 1.0;
        out.schema.channels.push_back(
            catalog_channel(kSequentialCatalog, j, "seq_channel_", FeatureProperty::Sequential, offset, scale));
        if (out.schema.channels.back().unit == "mm3") scale *= config.volume_std_mm;
        truth.channel_offset.push_back(offset);
        truth.channel_scale.push_back(scale);
    }
    for (std::size_t j = 0; j < n_non; ++j) {
        double offset = 0.0, scale = 1.0;
        out.schema.channels.push_back(catalog_channel(kNonSequentialCatalog, j, "nonseq_channel_",
                                                      FeatureProperty::NonSequential, offset, scale));
        if (out.schema.channels.back().unit == "mm3") scale *= config.volume_std_mm;
        truth.channel_offset.push_back(offset);
        truth.channel_scale.push_back(scale);
    }
    out.dataset.channels = out.schema.names();

    // Molds before mold 1 supply the lagged history of the first weights.
    const std::size_t max_lag = truth.lag_weights.size();
    constexpr std::size_t burn_in = 100;
    const std::size_t total = burn_in + max_lag + config.n_molds;

    std::vector<double> drift_phase(n_seq);
    for (auto& p : drift_phase) p = 2.0 * std::numbers::pi * unit(coef_rng);

    std::vector<double> state(n_seq);
    for (auto& s : state) s = normal(process_rng);
    std::vector<std::vector<double>> seq_latent(total, std::vector<double>(n_seq));
    std::vector<std::vector<double>> non_latent(total, std::vector<double>(n_non));
    std::vector<double> noise(total);
    for (std::size_t t = 0; t < total; ++t) {
        const long mold = static_cast<long>(t) - static_cast<long>(burn_in + max_lag) + 1;
        for (std::size_t j = 0; j < n_seq; ++j) {
            const double phi = truth.ar_coefficients[j];
            state[j] = phi * state[j] + std::sqrt(1.0 - phi * phi) * normal(process_rng);
            double drift = 0.0;
            if (config.drift_amplitude != 0.0) {
                drift = config.drift_amplitude *
                        std::sin(2.0 * std::numbers::pi * static_cast<double>(mold) / config.drift_period +
                                 drift_phase[j]);
            }
            seq_latent[t][j] = state[j] + drift;
        }
        for (std::size_t j = 0; j < n_non; ++j) non_latent[t][j] = normal(process_rng);
        noise[t] = config.noise_std * normal(process_rng);
    }

    out.dataset.records.reserve(config.n_molds);
    for (std::size_t t = burn_in + max_lag; t < total; ++t) {
        MoldRecord r;
        r.mold_index = static_cast<long>(t - burn_in - max_lag) + 1;
        double w = truth.base_weight;
        for (std::size_t j = 0; j < n_non; ++j) w += truth.nonsequential_coefficients[j] * non_latent[t][j];
        for (std::size_t l = 1; l <= max_lag; ++l) {
            double projection = 0.0;
            for (std::size_t j = 0; j < n_seq; ++j) projection += truth.sequential_direction[j] * seq_latent[t - l][j];
            w += truth.lag_weights[l - 1] * std::tanh(projection);
        }
        r.weight = w + noise[t];
        r.features.reserve(n_seq + n_non);
        for (std::size_t j = 0; j < n_seq; ++j) {
            r.features.push_back(truth.channel_offset[j] + truth.channel_scale[j] * seq_latent[t][j]);
        }
        for (std::size_t j = 0; j < n_non; ++j) {
            r.features.push_back(truth.channel_offset[n_seq + j] + truth.channel_scale[n_seq + j] * non_latent[t][j]);
        }
        out.dataset.records.push_back(std::move(r));
    }
    out.truth = std::move(truth);
    return out;
}

nlohmann::json truth_to_json(const GroundTruth& truth) {
    return {{"ar_coefficients", truth.ar_coefficients},
            {"sequential_direction", truth.sequential_direction},
            {"nonsequential_coefficients", truth.nonsequential_coefficients},
            {"lag_weights", truth.lag_weights},
            {"base_weight", truth.base_weight},
            {"noise_std", truth.noise_std},
            {"channel_offset", truth.channel_offset},
            {"channel_scale", truth.channel_scale}};
}

// ---------------------------------------------------------------------------
// Split and windows

Dataset slice(const Dataset& dataset, long first, long last) {
    Dataset out;
    out.channels = dataset.channels;
    for (const auto& r : dataset.records) {
        if (r.mold_index >= first && r.mold_index <= last) out.records.push_back(r);
    }
    return out;
}

SplitResult split(const Dataset& dataset, const SplitBounds& bounds) {
    if (bounds.train_first > bounds.train_last || bounds.test_first > bounds.test_last ||
        bounds.train_last >= bounds.test_first) {
        raise(ErrorKind::InvalidConfig, "split bounds must be ordered train < test");
    }
    SplitResult out{slice(dataset, bounds.train_first, bounds.train_last),
                    slice(dataset, bounds.test_first, bounds.test_last)};
    const auto expected_train = static_cast<std::size_t>(bounds.train_last - bounds.train_first + 1);
    const auto expected_test = static_cast<std::size_t>(bounds.test_last - bounds.test_first + 1);
    if (out.train.size() != expected_train || out.test.size() != expected_test) {
        raise(ErrorKind::InsufficientData, "dataset does not cover molds " + std::to_string(bounds.train_first) +
                                               ".." + std::to_string(bounds.test_last));
    }
    return out;
}

std::vector<WindowSample> make_windows(const Dataset& dataset, std::size_t window_length, long first, long last) {
    if (window_length == 0) raise(ErrorKind::InvalidArgument, "window length must be at least 1");
    std::vector<WindowSample> out;
    const auto& records = dataset.records;
    for (std::size_t t = window_length - 1; t < records.size(); ++t) {
        if (records[t].mold_index < first || records[t].mold_index > last) continue;
        WindowSample sample;
        sample.mold_index = records[t].mold_index;
        sample.weight = records[t].weight;
        sample.history.reserve(window_length);
        for (std::size_t k = t + 1 - window_length; k <= t; ++k) sample.history.push_back(records[k].features);
        out.push_back(std::move(sample));
    }
    return out;
}

std::vector<WindowSample> make_windows(const Dataset& dataset, std::size_t window_length) {
    return make_windows(dataset, window_length, std::numeric_limits<long>::min(), std::numeric_limits<long>::max());
}

// ---------------------------------------------------------------------------
// Quantizer

std::vector<double> quantize(std::span<const double> values, const QuantizationSpec& spec) {
    if (!(spec.screw_diameter_mm > 0.0)) raise(ErrorKind::InvalidArgument, "screw diameter must be positive");
    const double area = std::numbers::pi * spec.screw_diameter_mm * spec.screw_diameter_mm;
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) {
        const double scaled = 4.0 * v / area;
        out.push_back(spec.rounding == Rounding::HalfAwayFromZero ? std::round(scaled) : std::nearbyint(scaled));
    }
    return out;
}

Dataset quantize(const Dataset& dataset, const QuantizationSpec& spec) {
    Dataset out = dataset;
    for (const auto& name : spec.channels) {
        const auto channel = dataset.find(name);
        if (!channel) raise(ErrorKind::UnknownChannelName, "no channel named '" + name + "'");
        const auto column = dataset.column(*channel);
        const auto quantized = quantize(column, spec);
        for (std::size_t i = 0; i < out.records.size(); ++i) out.records[i].features[*channel] = quantized[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Standardization

Standardization Standardization::identity(std::size_t channels) {
    Standardization s;
    s.mean.assign(channels, 0.0);
    s.std.assign(channels, 1.0);
    return s;
}

void Standardization::apply(std::span<double> features) const {
    if (features.size() != mean.size()) raise(ErrorKind::ShapeMismatch, "feature count differs from statistics");
    for (std::size_t j = 0; j < features.size(); ++j) features[j] = (features[j] - mean[j]) / std[j];
}

namespace {

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

}  // namespace

Standardization standardize_fit(const Dataset& train) {
    if (train.empty()) raise(ErrorKind::InsufficientData, "cannot fit standardization on an empty dataset");
    Standardization s;
    for (std::size_t j = 0; j < train.channels.size(); ++j) {
        const auto [mean, sd] = mean_and_std(train.column(j));
        // Relative threshold: physical offsets can be large (volume channels).
        if (!(sd > 1e-12 * std::max(1.0, std::fabs(mean)))) {
            raise(ErrorKind::ZeroVariance, "channel '" + train.channels[j] + "' is constant on the training set");
        }
        s.mean.push_back(mean);
        s.std.push_back(sd);
    }
    const auto [target_mean, target_sd] = mean_and_std(train.weights());
    s.target_mean = target_mean;
    s.target_std = target_sd > 1e-12 * std::max(1.0, std::fabs(target_mean)) ? target_sd : 1.0;
    return s;
}

Dataset standardize_apply(const Standardization& stats, const Dataset& dataset) {
    Dataset out = dataset;
    for (auto& r : out.records) {
        stats.apply(r.features);
        r.weight = stats.standardize_target(r.weight);
    }
    return out;
}

Dataset standardize_invert(const Standardization& stats, const Dataset& dataset) {
    Dataset out = dataset;
    for (auto& r : out.records) {
        if (r.features.size() != stats.mean.size()) raise(ErrorKind::ShapeMismatch, "feature count differs");
        for (std::size_t j = 0; j < r.features.size(); ++j) r.features[j] = stats.mean[j] + r.features[j] * stats.std[j];
        r.weight = stats.destandardize_target(r.weight);
    }
    return out;
}

}  // namespace moldweight::data
