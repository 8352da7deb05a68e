#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nsfmap/core.hpp"
#include "nsfmap/ontology.hpp"
#include "nsfmap/trainer.hpp"

namespace nsfmap {

// One JSON object per line. Prediction lines:
//   {"schema","seq","timestamp","cycle","state","step","sensor_ids","predicted_sensors",
//    "anomaly_value","predicted_class","scenario","routing","image_fallback","explanation"}
// Error lines carry {"schema","seq","timestamp","cycle","state","step","error"}.
inline constexpr const char* kStreamSchema = "nsfmap.prediction/1";

struct StreamConfig {
    double rate_hz = 1.95;
    std::filesystem::path source;      // dataset directory
    std::filesystem::path checkpoint;
    std::filesystem::path ontology;    // empty: built-in FF ontology
    std::filesystem::path sink;
    std::optional<std::size_t> max_samples;
    /// No wall-clock pacing; timestamps are seq / rate_hz.
    bool test_mode = false;
    std::size_t queue_capacity = 8;

    void validate() const;
};

struct StreamStats {
    std::size_t emitted = 0;  // lines written, errors included
    std::size_t errors = 0;
    std::size_t dropped_deadlines = 0;
    double max_latency_s = 0.0;
    double mean_latency_s = 0.0;
};

struct StreamOptions {
    double rate_hz = 1.95;
    std::optional<std::size_t> max_samples;
    bool test_mode = false;
    std::size_t queue_capacity = 8;
};

/// Replays ds in order through the predictor and ontology, writing one line per sample.
StreamStats replay(const Dataset& ds, const Predictor& predictor, const ProcessOntology& onto, std::ostream& sink,
                   const StreamOptions& opts);
/// Loads everything from disk. Throws when an input is unusable or the sink
/// cannot be opened.
StreamStats replay(const StreamConfig& cfg);

struct StreamProblem {
    std::size_t line = 0;  // 1-based
    std::string message;
};

struct StreamValidation {
    std::size_t valid = 0;
    std::size_t invalid = 0;
    std::size_t error_lines = 0;  // valid lines that report a mid-stream error
    std::vector<StreamProblem> problems;
};

StreamValidation validate_stream_lines(std::istream& in);
StreamValidation validate_stream_output(const std::filesystem::path& path);

}  // namespace nsfmap
