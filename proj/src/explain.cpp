#include "nsfmap/explain.hpp"

#include <cstdio>
#include <sstream>

namespace nsfmap {

using nlohmann::json;

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::SupportsAnomaly: return "supports-anomaly";
        case Verdict::SupportsNormal: return "supports-normal";
        case Verdict::FlagsMisclassification: return "flags-misclassification";
    }
    return "?";
}

Verdict verdict_from_string(std::string_view s) {
    for (Verdict v : {Verdict::SupportsAnomaly, Verdict::SupportsNormal, Verdict::FlagsMisclassification}) {
        if (to_string(v) == s) return v;
    }
    throw Error("unknown verdict '" + std::string(s) + "'");
}

RenderFormat render_format_from_string(std::string_view s) {
    if (s == "text") return RenderFormat::Text;
    if (s == "structured" || s == "json") return RenderFormat::Structured;
    throw Error("unknown explanation format '" + std::string(s) + "' (text|structured)");
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string label_name(AnomalyClass c) { return std::string(to_string(c)); }

std::string invalid_reason(AnomalyClass label, CycleState state, const ProcessOntology& onto) {
    std::string r = label_name(label) + " is not a valid anomaly in cycle state " + std::to_string(state.index());
    const auto v = onto.validity(label);
    if (!v || v->valid_states.empty()) return r + "; the ontology lists no state where it occurs";
    const int first = *v->valid_states.begin();
    const int last = *v->valid_states.rbegin();
    const bool contiguous = static_cast<int>(v->valid_states.size()) == last - first + 1;
    if (contiguous && last == kNumCycleStates) {
        return r + "; the ontology records it only from cycle state " + std::to_string(v->valid_from_state);
    }
    r += "; the ontology records it only in cycle states";
    bool comma = false;
    for (int s : v->valid_states) {
        r += (comma ? ", " : " ") + std::to_string(s);
        comma = true;
    }
    return r;
}

}  // namespace

Explanation explain_prediction(const PredictionRecord& record, const ProcessOntology& onto) {
    const CycleState state(record.state.index());
    const auto rep = onto.check_consistency(record.predicted_sensors, record.predicted_label, state, record.sensor_ids);
    Explanation e;
    e.cycle_id = record.cycle_id;
    e.step = record.step;
    e.predicted_label = record.predicted_label;
    e.state = state;
    e.state_description = onto.state_description(state);
    e.scenario = rep.scenario;
    for (const auto& f : rep.per_sensor_flags) {
        if (f.evaluable && !f.in_range) e.responsible_variables.push_back({f.sensor_id, f.observed, *f.expected});
    }
    for (const auto& b : onto.robot_functions(state)) e.robot_functions.push_back({b.entity_id, b.function});

    switch (rep.scenario) {
        case Scenario::Consistent:
            e.verdict = record.predicted_label == AnomalyClass::NoAnomaly ? Verdict::SupportsNormal
                                                                         : Verdict::SupportsAnomaly;
            break;
        case Scenario::InvalidAnomalyForState:
            e.verdict = Verdict::FlagsMisclassification;
            e.misclassification_reason = invalid_reason(record.predicted_label, state, onto);
            break;
        case Scenario::AnomalyDespiteInRange:
            e.verdict = Verdict::FlagsMisclassification;
            e.misclassification_reason = "predicted " + label_name(record.predicted_label) +
                                         " but every evaluated sensor is within its expected range for cycle state " +
                                         std::to_string(state.index());
            break;
        case Scenario::NormalDespiteOutOfRange: {
            e.verdict = Verdict::FlagsMisclassification;
            std::string r = "predicted NoAnomaly but";
            bool first = true;
            for (const auto& v : e.responsible_variables) {
                r += std::string(first ? " " : "; ") + v.sensor_id + " = " + num(v.observed) +
                     " is outside its expected range [" + num(v.expected.min) + ", " + num(v.expected.max) + "]";
                first = false;
            }
            e.misclassification_reason = r + " in cycle state " + std::to_string(state.index());
            break;
        }
    }
    return e;
}

json to_json(const Explanation& e) {
    json vars = json::array();
    for (const auto& v : e.responsible_variables) {
        vars.push_back({{"sensor_id", v.sensor_id},
                        {"observed", v.observed},
                        {"expected", {{"min", v.expected.min}, {"max", v.expected.max}}}});
    }
    json robots = json::array();
    for (const auto& r : e.robot_functions) robots.push_back({{"robot_id", r.robot_id}, {"function", r.function}});
    json j{{"cycle", e.cycle_id},
           {"step", e.step},
           {"predicted_label", to_string(e.predicted_label)},
           {"state", {{"index", e.state.index()}, {"description", e.state_description}}},
           {"responsible_variables", vars},
           {"robot_functions", robots},
           {"scenario", to_string(e.scenario)},
           {"verdict", to_string(e.verdict)},
           {"misclassification_reason", nullptr}};
    if (e.misclassification_reason) j["misclassification_reason"] = *e.misclassification_reason;
    return j;
}

Explanation explanation_from_json(const json& j) {
    try {
        Explanation e;
        e.cycle_id = j.at("cycle").get<int>();
        e.step = j.at("step").get<int>();
        e.predicted_label = anomaly_class_from_string(j.at("predicted_label").get<std::string>());
        e.state = CycleState(j.at("state").at("index").get<int>());
        e.state_description = j.at("state").at("description").get<std::string>();
        for (const auto& v : j.at("responsible_variables")) {
            const auto id = v.at("sensor_id").get<std::string>();
            e.responsible_variables.push_back({id, v.at("observed").get<double>(),
                                               SensorRange(id, v.at("expected").at("min").get<double>(),
                                                           v.at("expected").at("max").get<double>())});
        }
        for (const auto& r : j.at("robot_functions")) {
            e.robot_functions.push_back({r.at("robot_id").get<std::string>(), r.at("function").get<std::string>()});
        }
        e.scenario = scenario_from_string(j.at("scenario").get<std::string>());
        e.verdict = verdict_from_string(j.at("verdict").get<std::string>());
        if (!j.at("misclassification_reason").is_null()) {
            e.misclassification_reason = j.at("misclassification_reason").get<std::string>();
        }
        return e;
    } catch (const json::exception& ex) {
        throw Error(std::string("malformed explanation document: ") + ex.what());
    }
}

std::string render_explanation(const Explanation& e, RenderFormat format) {
    if (format == RenderFormat::Structured) return to_json(e).dump();
    std::ostringstream os;
    os << "Cycle " << e.cycle_id << ", cycle state " << e.state.index() << ", step " << e.step << ": predicted "
       << to_string(e.predicted_label) << ".\n";
    os << "Verdict: " << to_string(e.verdict) << ".\n";
    if (!e.responsible_variables.empty()) {
        os << "Responsible variables:\n";
        for (const auto& v : e.responsible_variables) {
            os << "  - " << v.sensor_id << " predicted " << num(v.observed) << " in cycle state " << e.state.index()
               << ", expected between " << num(v.expected.min) << " and " << num(v.expected.max) << ".\n";
        }
    }
    os << "Cycle state " << e.state.index();
    if (!e.state_description.empty()) os << ": " << e.state_description;
    os << ".\n";
    if (!e.robot_functions.empty()) {
        os << "Robot functions:\n";
        for (const auto& r : e.robot_functions) os << "  - " << r.robot_id << ": " << r.function << ".\n";
    }
    if (e.misclassification_reason) os << "Possible misclassification: " << *e.misclassification_reason << ".\n";
    return os.str();
}

}  // namespace nsfmap
