#include "nsfmap/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace nsfmap {

using nlohmann::json;
namespace fs = std::filesystem;

const char* nsfmap_version() { return "0.1.0"; }

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string shortest(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <class A>
std::string join_numbers(const A& a) {
    std::string out;
    for (std::size_t i = 0; i < a.size(); ++i) out += (i ? "," : "") + shortest(a[i]);
    return out;
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        auto t = trim(cur);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
    ConfigMap out;
    std::vector<std::string> errs;
    std::istringstream is(text);
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        const auto t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            errs.push_back(origin + ":" + std::to_string(n) + ": expected key = value");
            continue;
        }
        const auto key = trim(t.substr(0, eq));
        if (key.empty()) {
            errs.push_back(origin + ":" + std::to_string(n) + ": empty key");
            continue;
        }
        if (out.count(key)) errs.push_back(origin + ":" + std::to_string(n) + ": duplicate key '" + key + "'");
        out[key] = trim(t.substr(eq + 1));
    }
    if (!errs.empty()) throw ValidationError(errs);
    return out;
}

ConfigMap load_config_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.string());
}

const ConfigMap& config_defaults() {
    static const ConfigMap d = [] {
        const GenConfig g;
        const TrainConfig t;
        const AblationConfig a;
        const StreamOptions s;
        ConfigMap m;
        m["n_cycles"] = std::to_string(g.n_cycles);
        m["m_sensors"] = std::to_string(g.m_sensors);
        m["steps_per_state"] = std::to_string(g.steps_per_state);
        m["fusion_steps_per_state"] = std::to_string(g.fusion_steps_per_state);
        m["anomaly_mix"] = "ff";
        m["image_size"] = std::to_string(g.image_size);
        m["image_signal_strength"] = shortest(g.image_signal_strength);
        m["sampling_rate_hz"] = shortest(g.sampling_rate_hz);
        m["seed"] = std::to_string(g.seed);

        m["epochs"] = std::to_string(t.epochs);
        m["batch_size"] = std::to_string(t.batch_size);
        m["learning_rate"] = shortest(t.learning_rate);
        m["plateau_patience"] = std::to_string(t.plateau_patience);
        m["plateau_factor"] = shortest(t.plateau_factor);
        m["improvement_threshold"] = shortest(t.improvement_threshold);
        m["early_stopping"] = t.early_stopping ? "true" : "false";
        m["early_stopping_patience"] = std::to_string(t.early_stopping_patience);
        m["image_mean"] = join_numbers(t.image_mean);
        m["image_std"] = join_numbers(t.image_std);
        m["image_resize"] = std::to_string(t.image_resize);
        m["lambda"] = shortest(t.penalty.lambda);
        m["penalty_mode"] = std::string(to_string(t.penalty.mode));
        m["hinge_margin_scale"] = shortest(t.penalty.hinge_margin_scale);
        m["fuse_latent"] = t.fuse_latent ? "true" : "false";
        m["label_input"] = std::string(to_string(t.label_input));
        m["pretrain_epochs"] = std::to_string(t.pretrain_epochs);
        m["dropout"] = shortest(t.dropout);
        m["sensors"] = "";
        m["train_fraction"] = "0.8";
        m["validation_fraction"] = "0.1";
        m["lambda_sweep"] = "";

        m["variants"] = "all";
        m["splits"] = join_numbers(a.splits);
        m["seeds"] = "1";
        m["both_penalty_modes"] = a.both_penalty_modes ? "true" : "false";

        m["rate_hz"] = shortest(s.rate_hz);
        m["max_samples"] = "";
        m["queue_capacity"] = std::to_string(s.queue_capacity);
        return m;
    }();
    return d;
}

std::string env_var_name(const std::string& key) {
    std::string out = "NSFMAP_";
    for (char c : key) out += c == '.' || c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

ConfigMap env_config(const EnvLookup& lookup) {
    ConfigMap out;
    for (const auto& [k, _] : config_defaults()) {
        if (const char* v = lookup(env_var_name(k).c_str())) out[k] = trim(v);
    }
    return out;
}

ResolvedConfig resolve_config(const ConfigMap& file, const ConfigMap& env, const ConfigMap& cli) {
    std::map<std::string, ConfigValue> v;
    for (const auto& [k, val] : config_defaults()) v[k] = {val, "default"};
    std::vector<std::string> errs;
    auto layer = [&](const ConfigMap& m, const char* src) {
        for (const auto& [k, val] : m) {
            auto it = v.find(k);
            if (it == v.end()) {
                errs.push_back(std::string("unknown config key '") + k + "' (" + src + ")");
                continue;
            }
            it->second = {val, src};
        }
    };
    layer(file, "file");
    layer(env, "env");
    layer(cli, "cli");
    if (!errs.empty()) throw ValidationError(errs);
    return ResolvedConfig(std::move(v));
}

const std::string& ResolvedConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error("unknown config key '" + key + "'");
    return it->second.value;
}

bool ResolvedConfig::is_default(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() || it->second.source == "default";
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& s) {
    T out{};
    const auto t = trim(s);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty()) {
        throw Error("config key '" + key + "': cannot parse '" + s + "' as a number");
    }
    return out;
}

}  // namespace

int ResolvedConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
std::uint64_t ResolvedConfig::get_u64(const std::string& key) const {
    return parse_number<std::uint64_t>(key, get(key));
}
double ResolvedConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool ResolvedConfig::get_bool(const std::string& key) const {
    std::string s = trim(get(key));
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error("config key '" + key + "': expected a boolean, got '" + get(key) + "'");
}

std::vector<double> ResolvedConfig::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : split_list(get(key), ',')) out.push_back(parse_number<double>(key, s));
    return out;
}

std::vector<std::string> ResolvedConfig::get_strings(const std::string& key) const {
    return split_list(get(key), ',');
}

json ResolvedConfig::to_json() const {
    json j = json::object();
    for (const auto& [k, v] : values_) j[k] = {{"value", v.value}, {"source", v.source}};
    return j;
}

std::string ResolvedConfig::describe() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << "  " << k << " = " << v.value << "  (" << v.source << ")\n";
    return os.str();
}

std::map<AnomalyClass, double> parse_anomaly_mix(const std::string& text) {
    if (trim(text) == "ff" || trim(text).empty()) return ff_table_mix();
    std::map<AnomalyClass, double> mix;
    for (const auto& part : split_list(text, ';')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw Error("anomaly_mix entry '" + part + "' must be Class=p");
        const auto cls = anomaly_class_from_string(trim(part.substr(0, eq)));
        if (mix.count(cls)) throw Error("anomaly_mix lists " + std::string(to_string(cls)) + " twice");
        mix[cls] = parse_number<double>("anomaly_mix", part.substr(eq + 1));
    }
    return mix;
}

GenConfig gen_config_from(const ResolvedConfig& c) {
    GenConfig g;
    g.n_cycles = c.get_int("n_cycles");
    g.m_sensors = c.get_int("m_sensors");
    g.steps_per_state = c.get_int("steps_per_state");
    g.fusion_steps_per_state = c.get_int("fusion_steps_per_state");
    g.anomaly_mix = parse_anomaly_mix(c.get("anomaly_mix"));
    g.image_size = c.get_int("image_size");
    g.image_signal_strength = c.get_double("image_signal_strength");
    g.sampling_rate_hz = c.get_double("sampling_rate_hz");
    g.seed = c.get_u64("seed");
    g.validate();
    return g;
}

namespace {

std::array<double, 3> triple(const ResolvedConfig& c, const std::string& key) {
    const auto v = c.get_doubles(key);
    if (v.size() != 3) throw Error("config key '" + key + "' needs three comma-separated values");
    return {v[0], v[1], v[2]};
}

}  // namespace

TrainConfig train_config_from(const ResolvedConfig& c) {
    TrainConfig t;
    t.epochs = c.get_int("epochs");
    t.batch_size = c.get_int("batch_size");
    t.learning_rate = c.get_double("learning_rate");
    t.plateau_patience = c.get_int("plateau_patience");
    t.plateau_factor = c.get_double("plateau_factor");
    t.improvement_threshold = c.get_double("improvement_threshold");
    t.early_stopping = c.get_bool("early_stopping");
    t.early_stopping_patience = c.get_int("early_stopping_patience");
    t.image_mean = triple(c, "image_mean");
    t.image_std = triple(c, "image_std");
    t.image_resize = c.get_int("image_resize");
    t.seed = c.get_u64("seed");
    t.penalty.lambda = c.get_double("lambda");
    t.penalty.mode = penalty_mode_from_string(c.get("penalty_mode"));
    t.penalty.hinge_margin_scale = c.get_double("hinge_margin_scale");
    t.fuse_latent = c.get_bool("fuse_latent");
    t.label_input = label_input_from_string(c.get("label_input"));
    t.pretrain_epochs = c.get_int("pretrain_epochs");
    t.dropout = c.get_double("dropout");
    t.sensors = c.get_strings("sensors");
    t.validate();
    return t;
}

AblationConfig ablation_config_from(const ResolvedConfig& c) {
    AblationConfig a;
    a.train = train_config_from(c);
    const auto names = c.get_strings("variants");
    if (!(names.size() == 1 && names[0] == "all")) {
        a.variants.clear();
        for (const auto& n : names) a.variants.push_back(variant_from_string(n));
    }
    a.splits = c.get_doubles("splits");
    a.seeds.clear();
    for (const auto& s : c.get_strings("seeds")) a.seeds.push_back(parse_number<std::uint64_t>("seeds", s));
    a.lambda_sweep = c.get_doubles("lambda_sweep");
    a.both_penalty_modes = c.get_bool("both_penalty_modes");
    if (a.variants.empty() || a.splits.empty() || a.seeds.empty()) {
        throw Error("ablation needs at least one variant, split and seed");
    }
    for (double s : a.splits) {
        if (!(s > 0.0 && s < 1.0)) throw Error("split train fractions must lie in (0, 1)");
    }
    return a;
}

StreamOptions stream_options_from(const ResolvedConfig& c) {
    StreamOptions s;
    s.rate_hz = c.get_double("rate_hz");
    if (!(s.rate_hz > 0.0)) throw Error("rate_hz must be > 0");
    if (!trim(c.get("max_samples")).empty()) {
        s.max_samples = parse_number<std::size_t>("max_samples", c.get("max_samples"));
    }
    s.queue_capacity = parse_number<std::size_t>("queue_capacity", c.get("queue_capacity"));
    return s;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

namespace {

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string sha256_path(const fs::path& path) {
    if (fs::is_regular_file(path)) return sha256_hex(read_all(path));
    if (!fs::is_directory(path)) throw Error("cannot hash missing path " + path.string());
    std::vector<std::string> rel;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), path).generic_string());
    }
    std::sort(rel.begin(), rel.end());
    std::string listing;
    for (const auto& r : rel) listing += r + '\0' + sha256_hex(read_all(path / r)) + '\n';
    return sha256_hex(listing);
}

json RunManifest::to_json() const {
    return json{{"format", "nsfmap-manifest"},
                {"command", command},
                {"argv", argv},
                {"config", config.to_json()},
                {"seeds", seeds},
                {"input_hashes", input_hashes},
                {"artifacts", artifacts},
                {"wall_seconds", wall_seconds},
                {"version", version}};
}

void write_manifest(const RunManifest& m, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << m.to_json().dump(2) << '\n';
    if (!out) throw Error("failed writing manifest " + path.string());
}

}  // namespace nsfmap
