#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nsfmap {

/// Base exception for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Validation failure carrying every violation found, not just the first.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

// Ordinals follow the row order of the FF anomaly table.
enum class AnomalyClass : int {
    NoAnomaly = 0,
    NoBody1 = 1,
    NoNose = 2,
    NoNoseNoBody2 = 3,
    NoNoseNoBody2NoBody1 = 4,
    NoBody2 = 5,
    NoBody2NoBody1 = 6,
};

inline constexpr int kNumClasses = 7;
inline constexpr int kNumCycleStates = 21;

const std::array<AnomalyClass, kNumClasses>& all_classes();
int ordinal(AnomalyClass c);
AnomalyClass class_from_ordinal(int ordinal);
/// Canonical name, e.g. "NoNose+NoBody2".
std::string_view to_string(AnomalyClass c);
/// Accepts the canonical name; ',' and ", " are accepted as separators too.
std::optional<AnomalyClass> parse_anomaly_class(std::string_view name);
AnomalyClass anomaly_class_from_string(std::string_view name);  // throws

double encode_anomaly_label(AnomalyClass label);
/// Round half away from zero, clamp to [0, 6]. Throws on non-finite input.
AnomalyClass decode_anomaly_value(double v);

class CycleState {
public:
    explicit CycleState(int index);
    int index() const noexcept { return index_; }
    bool fusion_eligible() const noexcept { return index_ == 4 || index_ == 9; }
    auto operator<=>(const CycleState&) const = default;

private:
    int index_;
};

struct SensorRange {
    std::string sensor_id;
    double min = 0.0;
    double max = 0.0;

    SensorRange() = default;
    SensorRange(std::string id, double lo, double hi);
    /// Closed interval.
    bool contains(double v) const noexcept { return v >= min && v <= max; }
    bool operator==(const SensorRange&) const = default;
};

struct MultimodalSample {
    int cycle_id = 1;
    CycleState state{1};
    int step = 0;
    std::vector<double> sensors;
    AnomalyClass label = AnomalyClass::NoAnomaly;
    std::optional<std::string> image_ref;

    bool operator==(const MultimodalSample&) const = default;
};

struct SampleKey {
    int cycle_id;
    int state;
    int step;
    auto operator<=>(const SampleKey&) const = default;
};

inline SampleKey key_of(const MultimodalSample& s) { return {s.cycle_id, s.state.index(), s.step}; }

struct Dataset {
    std::vector<MultimodalSample> samples;
    std::vector<std::string> sensor_names;
    double sampling_rate_hz = 1.95;

    /// Violations of the ordering / shape invariants; empty when valid.
    std::vector<std::string> check() const;
    void validate() const;  // throws ValidationError
    std::size_t sensor_index(std::string_view name) const;  // throws
    bool operator==(const Dataset&) const = default;
};

/// Routing taken by a single prediction.
enum class Routing { Fused, TimeSeriesOnly, ImageOnly };
std::string_view to_string(Routing r);

/// One model prediction for the step after a given sample.
struct PredictionRecord {
    int cycle_id = 1;
    CycleState state{1};
    int step = 0;  // step of the predicted (target) timestep
    std::vector<std::string> sensor_ids;
    std::vector<double> predicted_sensors;  // raw units, aligned with sensor_ids
    double anomaly_value = 0.0;
    AnomalyClass predicted_label = AnomalyClass::NoAnomaly;
    std::optional<AnomalyClass> true_label;
    Routing routing = Routing::TimeSeriesOnly;
    bool image_fallback = false;
};

}  // namespace nsfmap
