#include "nsfmap/ontology.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <tuple>

namespace nsfmap {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "nsfmap-ontology";
constexpr int kFormatVersion = 1;

bool natural_less(const std::string& a, const std::string& b) {
    auto split = [](const std::string& s) {
        std::size_t i = s.size();
        while (i > 0 && std::isdigit(static_cast<unsigned char>(s[i - 1]))) --i;
        const std::string digits = s.substr(i);
        return std::make_tuple(s.substr(0, i), digits.empty() ? -1L : std::stol(digits), s);
    };
    return split(a) < split(b);
}

bool binding_less(const StateBinding& a, const StateBinding& b) {
    return std::tie(a.entity_id, a.state, a.function) < std::tie(b.entity_id, b.state, b.function);
}

std::optional<EntityKind> parse_kind(const std::string& s) {
    if (s == "sensor") return EntityKind::Sensor;
    if (s == "robot") return EntityKind::Robot;
    if (s == "equipment") return EntityKind::Equipment;
    return std::nullopt;
}

std::optional<int> parse_state_ref(const std::string& s) {
    if (s.rfind("state:", 0) != 0) return std::nullopt;
    try {
        std::size_t used = 0;
        const int v = std::stoi(s.substr(6), &used);
        if (used != s.size() - 6) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::string fmt_num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

std::string_view to_string(EntityKind k) {
    switch (k) {
        case EntityKind::Sensor: return "sensor";
        case EntityKind::Robot: return "robot";
        case EntityKind::Equipment: return "equipment";
    }
    return "?";
}

std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::Consistent: return "consistent";
        case Scenario::AnomalyDespiteInRange: return "anomaly-despite-in-range";
        case Scenario::NormalDespiteOutOfRange: return "normal-despite-out-of-range";
        case Scenario::InvalidAnomalyForState: return "invalid-anomaly-for-state";
    }
    return "?";
}

Scenario scenario_from_string(std::string_view s) {
    for (auto sc : {Scenario::Consistent, Scenario::AnomalyDespiteInRange, Scenario::NormalDespiteOutOfRange,
                    Scenario::InvalidAnomalyForState}) {
        if (to_string(sc) == s) return sc;
    }
    throw Error("unknown scenario: " + std::string(s));
}

Scenario decide_scenario(bool any_evaluable, bool all_in_range, bool any_out_of_range, AnomalyClass label,
                         bool label_valid_for_state) {
    const bool anomalous = label != AnomalyClass::NoAnomaly;
    if (!label_valid_for_state) return Scenario::InvalidAnomalyForState;
    if (anomalous && any_evaluable && all_in_range) return Scenario::AnomalyDespiteInRange;
    if (!anomalous && any_out_of_range) return Scenario::NormalDespiteOutOfRange;
    return Scenario::Consistent;
}

const OntologyEntity& ProcessOntology::entity(const std::string& id) const {
    auto it = entities_.find(id);
    if (it == entities_.end()) throw Error("unknown ontology entity: " + id);
    return it->second;
}

std::vector<std::string> ProcessOntology::sensor_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, e] : entities_) {
        if (e.kind == EntityKind::Sensor) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end(), natural_less);
    return ids;
}

std::optional<SensorRange> ProcessOntology::expected_range(const std::string& sensor_id, CycleState state) const {
    const auto& e = entity(sensor_id);
    if (e.kind != EntityKind::Sensor) throw Error("entity is not a sensor: " + sensor_id);
    for (const auto& b : bindings_) {
        if (b.entity_id == sensor_id && b.state == state && b.expected_range) return b.expected_range;
    }
    if (e.global_min && e.global_max) return SensorRange(sensor_id, *e.global_min, *e.global_max);
    return std::nullopt;
}

std::set<AnomalyClass> ProcessOntology::valid_anomaly_types(CycleState state) const {
    std::set<AnomalyClass> out{AnomalyClass::NoAnomaly};
    for (const auto& [cls, v] : validities_) {
        if (v.valid_states.count(state.index())) out.insert(cls);
    }
    return out;
}

std::optional<AnomalyValidity> ProcessOntology::validity(AnomalyClass c) const {
    auto it = validities_.find(c);
    if (it == validities_.end()) return std::nullopt;
    return it->second;
}

std::vector<StateBinding> ProcessOntology::robot_functions(CycleState state) const {
    std::vector<StateBinding> out;
    for (const auto& b : bindings_) {
        if (b.state == state && entity(b.entity_id).kind == EntityKind::Robot) out.push_back(b);
    }
    return out;
}

std::string ProcessOntology::state_description(CycleState state) const {
    auto it = state_descriptions_.find(state.index());
    return it == state_descriptions_.end() ? std::string{} : it->second;
}

ProcessOntology ProcessOntology::update_range(const std::string& sensor_id, CycleState state, double min,
                                              double max) const {
    const auto& e = entity(sensor_id);
    if (e.kind != EntityKind::Sensor) throw Error("entity is not a sensor: " + sensor_id);
    if (!(min <= max)) throw Error("range min > max for " + sensor_id);
    if ((e.global_min && min < *e.global_min) || (e.global_max && max > *e.global_max)) {
        throw Error("range [" + fmt_num(min) + ", " + fmt_num(max) + "] for " + sensor_id +
                    " outside global bounds [" + (e.global_min ? fmt_num(*e.global_min) : "-inf") + ", " +
                    (e.global_max ? fmt_num(*e.global_max) : "inf") + "]");
    }
    ProcessOntology next = *this;
    SensorRange r(sensor_id, min, max);
    StateBinding* target = nullptr;
    for (auto& b : next.bindings_) {
        if (b.entity_id != sensor_id || b.state != state) continue;
        if (b.expected_range) {
            target = &b;
            break;
        }
        if (!target) target = &b;
    }
    if (target) {
        target->expected_range = r;
        target->synthetic = false;
    } else {
        next.bindings_.push_back(StateBinding{sensor_id, state, "", r, false});
        std::sort(next.bindings_.begin(), next.bindings_.end(), binding_less);
    }
    return next;
}

ConsistencyReport ProcessOntology::check_consistency(const std::vector<double>& predicted_sensors,
                                                     AnomalyClass predicted_label, CycleState state,
                                                     const std::vector<std::string>& sensor_ids) const {
    if (predicted_sensors.size() != sensor_ids.size()) {
        throw Error("check_consistency: " + std::to_string(predicted_sensors.size()) + " values for " +
                    std::to_string(sensor_ids.size()) + " sensor ids");
    }
    ConsistencyReport rep;
    bool any_evaluable = false, all_in = true, any_out = false;
    for (std::size_t i = 0; i < sensor_ids.size(); ++i) {
        SensorFlag f;
        f.sensor_id = sensor_ids[i];
        f.observed = predicted_sensors[i];
        auto it = entities_.find(sensor_ids[i]);
        if (it != entities_.end() && it->second.kind == EntityKind::Sensor) {
            f.expected = expected_range(sensor_ids[i], state);
        }
        if (f.expected) {
            f.evaluable = true;
            f.in_range = f.expected->contains(f.observed);
            any_evaluable = true;
            all_in = all_in && f.in_range;
            any_out = any_out || !f.in_range;
        }
        rep.per_sensor_flags.push_back(std::move(f));
    }
    const bool anomalous = predicted_label != AnomalyClass::NoAnomaly;
    const bool valid = valid_anomaly_types(state).count(predicted_label) > 0;
    rep.invalid_anomaly_for_state = !valid;
    rep.anomaly_despite_in_range = anomalous && any_evaluable && all_in;
    rep.normal_despite_out_of_range = !anomalous && any_out;
    rep.scenario = decide_scenario(any_evaluable, all_in, any_out, predicted_label, valid);
    rep.label_consistent = rep.scenario == Scenario::Consistent;
    return rep;
}

ProcessOntology build_ontology(const json& doc) {
    std::vector<std::string> errs;
    ProcessOntology o;
    if (!doc.is_object()) throw ValidationError({"ontology document must be an object"});

    auto section = [&](const char* name) -> json {
        if (!doc.contains(name)) return json::array();
        const auto& s = doc.at(name);
        if (!s.is_array()) {
            errs.push_back(std::string("section '") + name + "' must be an array");
            return json::array();
        }
        return s;
    };
    if (doc.contains("format") && doc.at("format") != kFormatTag) {
        errs.push_back("unexpected format tag " + doc.at("format").dump());
    }
    if (doc.contains("version") && doc.at("version") != kFormatVersion) {
        errs.push_back("unsupported version " + doc.at("version").dump());
    }

    auto valid_state = [](const json& v) { return v.is_number_integer() && v.get<int>() >= 1 && v.get<int>() <= 21; };

    // states
    std::size_t idx = 0;
    for (const auto& s : section("states")) {
        const auto where = "states[" + std::to_string(idx++) + "]";
        if (!s.is_object() || !s.contains("index") || !valid_state(s.at("index"))) {
            errs.push_back(where + ": needs integer 'index' in [1,21]");
            continue;
        }
        const int i = s.at("index").get<int>();
        if (o.state_descriptions_.count(i)) errs.push_back(where + ": duplicate state " + std::to_string(i));
        o.state_descriptions_[i] = s.value("description", "");
    }

    // entities
    idx = 0;
    for (const auto& e : section("entities")) {
        const auto where = "entities[" + std::to_string(idx++) + "]";
        if (!e.is_object() || !e.contains("id") || !e.at("id").is_string() || e.at("id").get<std::string>().empty()) {
            errs.push_back(where + ": needs non-empty string 'id'");
            continue;
        }
        OntologyEntity ent;
        ent.id = e.at("id").get<std::string>();
        auto kind = parse_kind(e.value("kind", ""));
        if (!kind) {
            errs.push_back(where + " '" + ent.id + "': kind must be sensor|robot|equipment");
            continue;
        }
        ent.kind = *kind;
        ent.units = e.value("units", "");
        ent.description = e.value("description", "");
        for (const char* key : {"global_min", "global_max"}) {
            if (!e.contains(key)) continue;
            if (!e.at(key).is_number()) {
                errs.push_back(where + " '" + ent.id + "': " + key + " must be a number");
                continue;
            }
            (std::string(key) == "global_min" ? ent.global_min : ent.global_max) = e.at(key).get<double>();
        }
        if (ent.global_min && ent.global_max && *ent.global_min > *ent.global_max) {
            errs.push_back(where + " '" + ent.id + "': global_min > global_max");
        }
        if (e.contains("properties")) {
            if (!e.at("properties").is_object()) {
                errs.push_back(where + " '" + ent.id + "': properties must be an object");
            } else {
                for (const auto& [k, v] : e.at("properties").items()) {
                    ent.properties[k] = v.is_string() ? v.get<std::string>() : v.dump();
                }
            }
        }
        if (o.entities_.count(ent.id)) {
            errs.push_back("duplicate entity id '" + ent.id + "'");
            continue;
        }
        o.entities_.emplace(ent.id, std::move(ent));
    }

    // bindings
    idx = 0;
    std::set<std::pair<std::string, int>> ranged;
    for (const auto& b : section("bindings")) {
        const auto where = "bindings[" + std::to_string(idx++) + "]";
        if (!b.is_object() || !b.contains("entity") || !b.at("entity").is_string()) {
            errs.push_back(where + ": needs string 'entity'");
            continue;
        }
        const auto ent_id = b.at("entity").get<std::string>();
        if (!b.contains("state") || !valid_state(b.at("state"))) {
            errs.push_back(where + " '" + ent_id + "': needs integer 'state' in [1,21]");
            continue;
        }
        auto it = o.entities_.find(ent_id);
        if (it == o.entities_.end()) {
            errs.push_back(where + ": binding references unknown entity '" + ent_id + "'");
            continue;
        }
        StateBinding sb;
        sb.entity_id = ent_id;
        sb.state = CycleState(b.at("state").get<int>());
        sb.function = b.value("function", "");
        sb.synthetic = b.value("synthetic", false);
        if (b.contains("range")) {
            const auto& r = b.at("range");
            if (!r.is_object() || !r.contains("min") || !r.contains("max") || !r.at("min").is_number() ||
                !r.at("max").is_number()) {
                errs.push_back(where + " '" + ent_id + "': range needs numeric min and max");
                continue;
            }
            const double lo = r.at("min").get<double>(), hi = r.at("max").get<double>();
            const auto& ent = it->second;
            if (ent.kind != EntityKind::Sensor) {
                errs.push_back(where + " '" + ent_id + "': ranges only apply to sensors");
                continue;
            }
            if (lo > hi) {
                errs.push_back(where + " '" + ent_id + "': range min > max");
                continue;
            }
            if ((ent.global_min && lo < *ent.global_min) || (ent.global_max && hi > *ent.global_max)) {
                errs.push_back(where + " '" + ent_id + "': range [" + fmt_num(lo) + ", " + fmt_num(hi) +
                               "] outside global bounds");
                continue;
            }
            if (!ranged.emplace(ent_id, sb.state.index()).second) {
                errs.push_back(where + " '" + ent_id + "': second range for state " +
                               std::to_string(sb.state.index()));
                continue;
            }
            sb.expected_range = SensorRange(ent_id, lo, hi);
        }
        o.bindings_.push_back(std::move(sb));
    }
    std::sort(o.bindings_.begin(), o.bindings_.end(), binding_less);

    // validities
    idx = 0;
    for (const auto& v : section("validities")) {
        const auto where = "validities[" + std::to_string(idx++) + "]";
        if (!v.is_object() || !v.contains("anomaly") || !v.at("anomaly").is_string()) {
            errs.push_back(where + ": needs string 'anomaly'");
            continue;
        }
        auto cls = parse_anomaly_class(v.at("anomaly").get<std::string>());
        if (!cls) {
            errs.push_back(where + ": unknown anomaly class '" + v.at("anomaly").get<std::string>() + "'");
            continue;
        }
        AnomalyValidity av;
        av.anomaly = *cls;
        av.synthetic = v.value("synthetic", false);
        bool ok = true;
        if (v.contains("valid_from_state")) {
            if (!valid_state(v.at("valid_from_state"))) {
                errs.push_back(where + ": valid_from_state must be in [1,21]");
                ok = false;
            } else {
                av.valid_from_state = v.at("valid_from_state").get<int>();
            }
        }
        if (v.contains("valid_states")) {
            if (!v.at("valid_states").is_array()) {
                errs.push_back(where + ": valid_states must be an array");
                ok = false;
            } else {
                for (const auto& s : v.at("valid_states")) {
                    if (!valid_state(s)) {
                        errs.push_back(where + ": valid state " + s.dump() + " outside [1,21]");
                        ok = false;
                    } else {
                        av.valid_states.insert(s.get<int>());
                    }
                }
                if (!v.contains("valid_from_state") && !av.valid_states.empty()) {
                    av.valid_from_state = *av.valid_states.begin();
                }
            }
        } else if (v.contains("valid_from_state") && ok) {
            for (int s = av.valid_from_state; s <= kNumCycleStates; ++s) av.valid_states.insert(s);
        }
        if (!ok) continue;
        if (av.anomaly != AnomalyClass::NoAnomaly && av.valid_states.empty()) {
            errs.push_back(where + " '" + std::string(to_string(av.anomaly)) + "': valid_states is empty");
            continue;
        }
        if (o.validities_.count(av.anomaly)) {
            errs.push_back(where + ": duplicate validity for " + std::string(to_string(av.anomaly)));
            continue;
        }
        o.validities_.emplace(av.anomaly, std::move(av));
    }

    // relations
    idx = 0;
    for (const auto& r : section("relations")) {
        const auto where = "relations[" + std::to_string(idx++) + "]";
        if (!r.is_object() || !r.contains("from") || !r.contains("to") || !r.contains("type") ||
            !r.at("from").is_string() || !r.at("to").is_string() || !r.at("type").is_string()) {
            errs.push_back(where + ": needs string from/type/to");
            continue;
        }
        Relation rel{r.at("from").get<std::string>(), r.at("type").get<std::string>(), r.at("to").get<std::string>()};
        bool ok = true;
        for (const auto& end : {rel.from, rel.to}) {
            if (auto st = parse_state_ref(end)) {
                if (*st < 1 || *st > kNumCycleStates) {
                    errs.push_back(where + ": state reference '" + end + "' outside [1,21]");
                    ok = false;
                }
            } else if (!o.entities_.count(end)) {
                errs.push_back(where + ": relation references unknown entity '" + end + "'");
                ok = false;
            }
        }
        if (ok) o.relations_.insert(std::move(rel));
    }

    if (!errs.empty()) throw ValidationError(std::move(errs));
    return o;
}

json serialize(const ProcessOntology& onto) {
    json doc;
    doc["format"] = kFormatTag;
    doc["version"] = kFormatVersion;
    doc["states"] = json::array();
    for (const auto& [i, d] : onto.state_descriptions()) doc["states"].push_back({{"index", i}, {"description", d}});
    doc["entities"] = json::array();
    for (const auto& [id, e] : onto.entities()) {
        json j{{"id", e.id}, {"kind", to_string(e.kind)}};
        if (!e.units.empty()) j["units"] = e.units;
        if (!e.description.empty()) j["description"] = e.description;
        if (e.global_min) j["global_min"] = *e.global_min;
        if (e.global_max) j["global_max"] = *e.global_max;
        if (!e.properties.empty()) j["properties"] = e.properties;
        doc["entities"].push_back(std::move(j));
    }
    doc["bindings"] = json::array();
    for (const auto& b : onto.bindings()) {
        json j{{"entity", b.entity_id}, {"state", b.state.index()}};
        if (!b.function.empty()) j["function"] = b.function;
        if (b.expected_range) j["range"] = {{"min", b.expected_range->min}, {"max", b.expected_range->max}};
        if (b.synthetic) j["synthetic"] = true;
        doc["bindings"].push_back(std::move(j));
    }
    doc["validities"] = json::array();
    for (const auto& [cls, v] : onto.validities()) {
        json j{{"anomaly", to_string(cls)}, {"valid_from_state", v.valid_from_state}, {"valid_states", v.valid_states}};
        if (v.synthetic) j["synthetic"] = true;
        doc["validities"].push_back(std::move(j));
    }
    doc["relations"] = json::array();
    for (const auto& r : onto.relations()) doc["relations"].push_back({{"from", r.from}, {"type", r.type}, {"to", r.to}});
    return doc;
}

ProcessOntology deserialize(const json& doc) { return build_ontology(doc); }

ProcessOntology parse_ontology(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError({std::string("malformed ontology document: ") + e.what()});
    }
    return build_ontology(doc);
}

ProcessOntology load_ontology(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open ontology document: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_ontology(ss.str());
}

void save_ontology(const ProcessOntology& onto, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write ontology document: " + path);
    out << serialize(onto).dump(2) << '\n';
}

const ProcessOntology& default_ff_ontology() {
    static const ProcessOntology onto = parse_ontology(default_ff_ontology_text());
    return onto;
}

}  // namespace nsfmap
