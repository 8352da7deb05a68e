#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nsfmap/datagen.hpp"
#include "nsfmap/eval.hpp"
#include "nsfmap/stream.hpp"
#include "nsfmap/trainer.hpp"

namespace nsfmap {

// Flat key = value documents. '#' starts a comment; blank lines are ignored.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigMap load_config_file(const std::filesystem::path& path);

/// Every key any subcommand understands, with its built-in default.
const ConfigMap& config_defaults();

/// NSFMAP_<KEY> with the key upper-cased, e.g. NSFMAP_LEARNING_RATE.
std::string env_var_name(const std::string& key);
using EnvLookup = std::function<const char*(const char*)>;
/// Values of known keys found in the environment.
ConfigMap env_config(const EnvLookup& lookup);

struct ConfigValue {
    std::string value;
    std::string source;  // default | file | env | cli
};

class ResolvedConfig {
public:
    ResolvedConfig() = default;
    explicit ResolvedConfig(std::map<std::string, ConfigValue> values) : values_(std::move(values)) {}

    const std::map<std::string, ConfigValue>& values() const { return values_; }
    const std::string& get(const std::string& key) const;  // throws for unknown keys
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;
    std::vector<std::string> get_strings(const std::string& key) const;
    bool is_default(const std::string& key) const;

    nlohmann::json to_json() const;
    /// One "key = value  (source)" line per key.
    std::string describe() const;

private:
    std::map<std::string, ConfigValue> values_;
};

/// Precedence cli > env > file > defaults. Unknown keys in file or cli throw
/// ValidationError listing all of them.
ResolvedConfig resolve_config(const ConfigMap& file, const ConfigMap& env, const ConfigMap& cli);

/// "Class=p;Class=p"; "ff" means the FF table mix.
std::map<AnomalyClass, double> parse_anomaly_mix(const std::string& text);

GenConfig gen_config_from(const ResolvedConfig& c);
TrainConfig train_config_from(const ResolvedConfig& c);
AblationConfig ablation_config_from(const ResolvedConfig& c);
StreamOptions stream_options_from(const ResolvedConfig& c);

std::string sha256_hex(const std::string& bytes);
/// Files hash their bytes; directories hash sorted (relative path, content digest) pairs.
std::string sha256_path(const std::filesystem::path& path);

struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    ResolvedConfig config;
    std::map<std::string, std::uint64_t> seeds;
    std::map<std::string, std::string> input_hashes;  // path -> sha256
    std::vector<std::string> artifacts;
    double wall_seconds = 0.0;
    std::string version;

    nlohmann::json to_json() const;
};

void write_manifest(const RunManifest& m, const std::filesystem::path& path);

const char* nsfmap_version();

}  // namespace nsfmap
