#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nsfmap/core.hpp"

namespace nsfmap {

enum class EntityKind { Sensor, Robot, Equipment };
std::string_view to_string(EntityKind k);

struct OntologyEntity {
    std::string id;
    EntityKind kind = EntityKind::Sensor;
    std::string units;
    std::string description;
    std::optional<double> global_min;
    std::optional<double> global_max;
    std::map<std::string, std::string> properties;

    bool operator==(const OntologyEntity&) const = default;
};

struct StateBinding {
    std::string entity_id;
    CycleState state{1};
    std::string function;
    std::optional<SensorRange> expected_range;
    bool synthetic = false;  // fixture default rather than measured knowledge

    bool operator==(const StateBinding&) const = default;
};

struct AnomalyValidity {
    AnomalyClass anomaly = AnomalyClass::NoAnomaly;
    int valid_from_state = 1;
    std::set<int> valid_states;
    bool synthetic = false;

    bool operator==(const AnomalyValidity&) const = default;
};

/// Typed edge. Endpoints are entity ids or "state:<n>".
struct Relation {
    std::string from;
    std::string type;
    std::string to;

    auto operator<=>(const Relation&) const = default;
};

enum class Scenario { Consistent, AnomalyDespiteInRange, NormalDespiteOutOfRange, InvalidAnomalyForState };
std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view s);

struct SensorFlag {
    std::string sensor_id;
    bool evaluable = false;  // false when no range resolves for the sensor
    bool in_range = true;
    double observed = 0.0;
    std::optional<SensorRange> expected;

    bool operator==(const SensorFlag&) const = default;
};

struct ConsistencyReport {
    std::vector<SensorFlag> per_sensor_flags;
    bool label_consistent = true;
    Scenario scenario = Scenario::Consistent;
    // Every condition that held; scenario picks the highest-precedence one.
    bool anomaly_despite_in_range = false;
    bool normal_despite_out_of_range = false;
    bool invalid_anomaly_for_state = false;
};

/// Pure precedence rule: invalid-for-state > anomaly-despite-in-range >
/// normal-despite-out-of-range > consistent.
Scenario decide_scenario(bool any_evaluable, bool all_in_range, bool any_out_of_range, AnomalyClass label,
                         bool label_valid_for_state);

/// In-memory process knowledge graph. Immutable value: update operations
/// return a modified copy.
class ProcessOntology {
public:
    ProcessOntology() = default;

    const std::map<std::string, OntologyEntity>& entities() const { return entities_; }
    const std::vector<StateBinding>& bindings() const { return bindings_; }
    const std::map<AnomalyClass, AnomalyValidity>& validities() const { return validities_; }
    const std::set<Relation>& relations() const { return relations_; }
    const std::map<int, std::string>& state_descriptions() const { return state_descriptions_; }

    bool has_entity(const std::string& id) const { return entities_.count(id) > 0; }
    const OntologyEntity& entity(const std::string& id) const;
    /// Sensor ids in natural order ("variable-2" before "variable-10").
    std::vector<std::string> sensor_ids() const;

    /// Per-state range, else the sensor's global range, else nothing.
    /// Throws for an unknown sensor.
    std::optional<SensorRange> expected_range(const std::string& sensor_id, CycleState state) const;
    std::set<AnomalyClass> valid_anomaly_types(CycleState state) const;
    std::optional<AnomalyValidity> validity(AnomalyClass c) const;
    /// Bindings of robots at a state, in id order.
    std::vector<StateBinding> robot_functions(CycleState state) const;
    std::string state_description(CycleState state) const;

    ProcessOntology update_range(const std::string& sensor_id, CycleState state, double min, double max) const;

    ConsistencyReport check_consistency(const std::vector<double>& predicted_sensors, AnomalyClass predicted_label,
                                        CycleState state, const std::vector<std::string>& sensor_ids) const;

    bool operator==(const ProcessOntology&) const = default;

private:
    friend ProcessOntology build_ontology(const nlohmann::json& doc);

    std::map<std::string, OntologyEntity> entities_;
    std::vector<StateBinding> bindings_;  // sorted by (entity, state, function)
    std::map<AnomalyClass, AnomalyValidity> validities_;
    std::set<Relation> relations_;
    std::map<int, std::string> state_descriptions_;
};

/// Validates and builds; throws ValidationError listing every violation.
ProcessOntology build_ontology(const nlohmann::json& doc);
nlohmann::json serialize(const ProcessOntology& onto);
ProcessOntology deserialize(const nlohmann::json& doc);
ProcessOntology parse_ontology(const std::string& text);
ProcessOntology load_ontology(const std::string& path);
void save_ontology(const ProcessOntology& onto, const std::string& path);

/// The shipped FF ontology fixture (embedded at build time).
const std::string& default_ff_ontology_text();
const ProcessOntology& default_ff_ontology();

}  // namespace nsfmap
