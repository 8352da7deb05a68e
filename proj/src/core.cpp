#include "nsfmap/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace nsfmap {

namespace {

std::string join_violations(const std::vector<std::string>& v) {
    std::string msg = "validation failed:";
    for (const auto& s : v) {
        msg += "\n  - ";
        msg += s;
    }
    return msg;
}

constexpr std::array<std::string_view, kNumClasses> kNames = {
    "NoAnomaly",
    "NoBody1",
    "NoNose",
    "NoNose+NoBody2",
    "NoNose+NoBody2+NoBody1",
    "NoBody2",
    "NoBody2+NoBody1",
};

}  // namespace

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error(join_violations(violations)), violations_(std::move(violations)) {}

const std::array<AnomalyClass, kNumClasses>& all_classes() {
    static const std::array<AnomalyClass, kNumClasses> kAll = {
        AnomalyClass::NoAnomaly,     AnomalyClass::NoBody1,
        AnomalyClass::NoNose,        AnomalyClass::NoNoseNoBody2,
        AnomalyClass::NoNoseNoBody2NoBody1, AnomalyClass::NoBody2,
        AnomalyClass::NoBody2NoBody1,
    };
    return kAll;
}

int ordinal(AnomalyClass c) { return static_cast<int>(c); }

AnomalyClass class_from_ordinal(int ord) {
    if (ord < 0 || ord >= kNumClasses) {
        throw Error("anomaly ordinal out of range: " + std::to_string(ord));
    }
    return static_cast<AnomalyClass>(ord);
}

std::string_view to_string(AnomalyClass c) { return kNames.at(static_cast<std::size_t>(ordinal(c))); }

std::optional<AnomalyClass> parse_anomaly_class(std::string_view name) {
    std::string norm;
    norm.reserve(name.size());
    for (char ch : name) {
        if (ch == ' ') continue;
        norm.push_back(ch == ',' ? '+' : ch);
    }
    if (norm == "NoAnomaly" || norm == "None" || norm == "Normal") return AnomalyClass::NoAnomaly;
    for (int i = 0; i < kNumClasses; ++i) {
        if (norm == kNames[static_cast<std::size_t>(i)]) return static_cast<AnomalyClass>(i);
    }
    return std::nullopt;
}

AnomalyClass anomaly_class_from_string(std::string_view name) {
    if (auto c = parse_anomaly_class(name)) return *c;
    throw Error("unknown anomaly class: '" + std::string(name) + "'");
}

double encode_anomaly_label(AnomalyClass label) { return static_cast<double>(ordinal(label)); }

AnomalyClass decode_anomaly_value(double v) {
    if (!std::isfinite(v)) throw Error("cannot decode non-finite anomaly value");
    const double r = std::clamp(std::round(v), 0.0, static_cast<double>(kNumClasses - 1));
    return static_cast<AnomalyClass>(static_cast<int>(r));
}

CycleState::CycleState(int index) : index_(index) {
    if (index < 1 || index > kNumCycleStates) {
        throw Error("cycle state out of range [1,21]: " + std::to_string(index));
    }
}

SensorRange::SensorRange(std::string id, double lo, double hi) : sensor_id(std::move(id)), min(lo), max(hi) {
    if (!(lo <= hi)) {
        throw Error("sensor range for '" + sensor_id + "' has min > max");
    }
}

std::vector<std::string> Dataset::check() const {
    std::vector<std::string> out;
    if (!(sampling_rate_hz > 0.0)) out.push_back("sampling_rate_hz must be > 0");
    const std::size_t m = sensor_names.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto where = "sample " + std::to_string(i) + " (cycle " + std::to_string(s.cycle_id) + ", state " +
                           std::to_string(s.state.index()) + ", step " + std::to_string(s.step) + ")";
        if (s.sensors.size() != m) out.push_back(where + ": expected " + std::to_string(m) + " sensors");
        if (s.cycle_id < 1) out.push_back(where + ": cycle_id must be >= 1");
        if (s.step < 0) out.push_back(where + ": step must be >= 0");
        if (s.image_ref && !s.state.fusion_eligible()) out.push_back(where + ": image_ref outside states 4/9");
        if (i > 0 && !(key_of(samples[i - 1]) < key_of(s))) {
            out.push_back(where + ": out of order or duplicate key");
        }
    }
    return out;
}

void Dataset::validate() const {
    auto v = check();
    if (!v.empty()) throw ValidationError(std::move(v));
}

std::size_t Dataset::sensor_index(std::string_view name) const {
    auto it = std::find(sensor_names.begin(), sensor_names.end(), name);
    if (it == sensor_names.end()) throw Error("dataset has no sensor '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - sensor_names.begin());
}

std::string_view to_string(Routing r) {
    switch (r) {
        case Routing::Fused: return "fused";
        case Routing::TimeSeriesOnly: return "ts-only";
        case Routing::ImageOnly: return "image-only";
    }
    return "?";
}

}  // namespace nsfmap
