#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "json.hpp"
#include "nsfmap/datagen.hpp"
#include "nsfmap/ontology.hpp"

namespace nsfmap::support {

inline nlohmann::json minimal_doc() {
    return nlohmann::json::parse(R"({
      "format": "nsfmap-ontology", "version": 1,
      "states": [{"index": 4, "description": "stacking"}],
      "entities": [{"id": "variable-1", "kind": "sensor", "global_min": 0, "global_max": 8500}],
      "bindings": [{"entity": "variable-1", "state": 4, "function": "joint feedback",
                    "range": {"min": 6000, "max": 8000}}],
      "validities": [], "relations": []
    })");
}

inline std::map<AnomalyClass, double> balanced_mix() {
    std::map<AnomalyClass, double> m;
    for (auto c : all_classes()) m[c] = c == AnomalyClass::NoAnomaly ? 0.4 : 0.1;
    return m;
}

/// Small synthetic dataset, one cycle per class at least.
inline Dataset small_dataset(int n_cycles = 14, std::uint64_t seed = 3, int steps = 2, int fusion_steps = 3) {
    GenConfig g;
    g.n_cycles = n_cycles;
    g.steps_per_state = steps;
    g.fusion_steps_per_state = fusion_steps;
    g.anomaly_mix = balanced_mix();
    g.image_size = 8;
    g.seed = seed;
    return generate_dataset(g);
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("nsfmap_test_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace nsfmap::support
