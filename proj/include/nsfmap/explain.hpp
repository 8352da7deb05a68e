#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nsfmap/core.hpp"
#include "nsfmap/ontology.hpp"

namespace nsfmap {

enum class Verdict { SupportsAnomaly, SupportsNormal, FlagsMisclassification };
std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

struct ResponsibleVariable {
    std::string sensor_id;
    double observed = 0.0;
    SensorRange expected;
    bool operator==(const ResponsibleVariable&) const = default;
};

struct RobotFunction {
    std::string robot_id;
    std::string function;
    bool operator==(const RobotFunction&) const = default;
};

struct Explanation {
    int cycle_id = 1;
    int step = 0;
    AnomalyClass predicted_label = AnomalyClass::NoAnomaly;
    CycleState state{1};
    std::string state_description;
    std::vector<ResponsibleVariable> responsible_variables;  // (i)
    std::vector<RobotFunction> robot_functions;              // (ii)
    Scenario scenario = Scenario::Consistent;
    Verdict verdict = Verdict::SupportsNormal;
    std::optional<std::string> misclassification_reason;

    bool operator==(const Explanation&) const = default;
};

/// Answers which variable is responsible, what the robots were doing in the
/// state, and which values were expected. Uses ontology knowledge only.
Explanation explain_prediction(const PredictionRecord& record, const ProcessOntology& onto);

enum class RenderFormat { Text, Structured };
RenderFormat render_format_from_string(std::string_view s);

std::string render_explanation(const Explanation& e, RenderFormat format);
nlohmann::json to_json(const Explanation& e);
Explanation explanation_from_json(const nlohmann::json& j);

}  // namespace nsfmap
