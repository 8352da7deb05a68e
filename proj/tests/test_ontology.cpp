#include <gtest/gtest.h>

#include "nsfmap/ontology.hpp"
#include "support.hpp"

using namespace nsfmap;
using nlohmann::json;

TEST(BuildOntology, MinimalDocument) {
    const auto o = build_ontology(support::minimal_doc());
    EXPECT_EQ(o.entities().size(), 1u);
    EXPECT_EQ(o.bindings().size(), 1u);
    const auto r = o.expected_range("variable-1", CycleState(4));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->min, 6000);
    EXPECT_EQ(r->max, 8000);
}

TEST(BuildOntology, DanglingReferenceNamed) {
    auto doc = support::minimal_doc();
    doc["bindings"].push_back({{"entity", "variable-9"}, {"state", 4}});
    try {
        build_ontology(doc);
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("variable-9"), std::string::npos);
    }
}

TEST(BuildOntology, ListsEveryViolation) {
    auto doc = support::minimal_doc();
    doc["entities"].push_back({{"id", "variable-1"}, {"kind", "sensor"}});
    doc["bindings"].push_back({{"entity", "ghost"}, {"state", 4}});
    doc["bindings"].push_back({{"entity", "variable-1"}, {"state", 4}, {"range", {{"min", 7000}, {"max", 6000}}}});
    try {
        build_ontology(doc);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_GE(e.violations().size(), 3u);
    }
}

TEST(BuildOntology, RangeOutsideGlobalBoundsRejected) {
    auto doc = support::minimal_doc();
    doc["bindings"][0]["range"] = {{"min", 6000}, {"max", 9000}};
    EXPECT_THROW(build_ontology(doc), ValidationError);
}

TEST(ExpectedRange, FfFixtureExampleAndFallbacks) {
    const auto& o = default_ff_ontology();
    const auto r = o.expected_range("variable-1", CycleState(4));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->min, 6000);
    EXPECT_EQ(r->max, 8000);
    EXPECT_THROW(o.expected_range("unknown-sensor", CycleState(4)), Error);

    const auto m = build_ontology(support::minimal_doc());
    const auto g = m.expected_range("variable-1", CycleState(5));
    ASSERT_TRUE(g);
    EXPECT_EQ(g->min, 0);
    EXPECT_EQ(g->max, 8500);

    auto doc = support::minimal_doc();
    doc["entities"].push_back({{"id", "variable-2"}, {"kind", "sensor"}});
    EXPECT_FALSE(build_ontology(doc).expected_range("variable-2", CycleState(5)));
}

TEST(ValidAnomalyTypes, NoNoseOnlyFromStateEight) {
    const auto& o = default_ff_ontology();
    EXPECT_FALSE(o.valid_anomaly_types(CycleState(4)).count(AnomalyClass::NoNose));
    EXPECT_TRUE(o.valid_anomaly_types(CycleState(8)).count(AnomalyClass::NoNose));
    for (int s = 1; s <= 21; ++s) EXPECT_TRUE(o.valid_anomaly_types(CycleState(s)).count(AnomalyClass::NoAnomaly));
    const auto empty = build_ontology(support::minimal_doc());
    EXPECT_EQ(empty.valid_anomaly_types(CycleState(4)), std::set<AnomalyClass>{AnomalyClass::NoAnomaly});
}

TEST(UpdateRange, RoundTripIsolationAndBounds) {
    const auto& o = default_ff_ontology();
    const auto before9 = o.expected_range("variable-1", CycleState(9));
    const auto before2 = o.expected_range("variable-2", CycleState(4));
    const auto u = o.update_range("variable-1", CycleState(4), 6500, 7500);
    EXPECT_EQ(u.expected_range("variable-1", CycleState(4))->min, 6500);
    EXPECT_EQ(u.expected_range("variable-1", CycleState(4))->max, 7500);
    EXPECT_EQ(o.expected_range("variable-1", CycleState(4))->min, 6000);  // caller's value untouched
    EXPECT_EQ(u.expected_range("variable-1", CycleState(9)), before9);
    EXPECT_EQ(u.expected_range("variable-2", CycleState(4)), before2);
    for (const auto& id : o.sensor_ids()) {
        for (int s = 1; s <= 21; ++s) {
            if (id == "variable-1" && s == 4) continue;
            EXPECT_EQ(u.expected_range(id, CycleState(s)), o.expected_range(id, CycleState(s)));
        }
    }

    const auto m = build_ontology(support::minimal_doc());
    EXPECT_THROW(m.update_range("variable-1", CycleState(4), 9000, 10000), Error);
    EXPECT_THROW(m.update_range("nope", CycleState(4), 1, 2), Error);
}

TEST(CheckConsistency, PaperAndPrecedenceExamples) {
    const auto& o = default_ff_ontology();
    const std::vector<std::string> ids = {"variable-1"};
    EXPECT_EQ(o.check_consistency({7000}, AnomalyClass::NoAnomaly, CycleState(4), ids).scenario,
              Scenario::Consistent);
    const auto r = o.check_consistency({3000}, AnomalyClass::NoAnomaly, CycleState(4), ids);
    EXPECT_EQ(r.scenario, Scenario::NormalDespiteOutOfRange);
    ASSERT_EQ(r.per_sensor_flags.size(), 1u);
    EXPECT_FALSE(r.per_sensor_flags[0].in_range);
    EXPECT_EQ(r.per_sensor_flags[0].expected->min, 6000);

    const auto p = o.check_consistency({7000}, AnomalyClass::NoNose, CycleState(4), ids);
    EXPECT_TRUE(p.anomaly_despite_in_range);
    EXPECT_TRUE(p.invalid_anomaly_for_state);
    EXPECT_EQ(p.scenario, Scenario::InvalidAnomalyForState);
}

TEST(CheckConsistency, UnevaluableSensorsExcluded) {
    auto doc = support::minimal_doc();
    doc["entities"].push_back({{"id", "variable-2"}, {"kind", "sensor"}});
    const auto o = build_ontology(doc);
    const auto r = o.check_consistency({7000, -5}, AnomalyClass::NoAnomaly, CycleState(4), {"variable-1", "variable-2"});
    EXPECT_EQ(r.scenario, Scenario::Consistent);
    EXPECT_FALSE(r.per_sensor_flags[1].evaluable);
}

namespace {

// Rule table read straight off the scenario definitions.
Scenario oracle(const std::vector<int>& status, AnomalyClass label, bool valid_for_state) {
    // status: 0 in range, 1 out of range, 2 unevaluable
    bool any_eval = false, all_in = true, any_out = false;
    for (int s : status) {
        if (s == 2) continue;
        any_eval = true;
        if (s == 1) {
            all_in = false;
            any_out = true;
        }
    }
    const bool anomaly = label != AnomalyClass::NoAnomaly;
    if (!valid_for_state) return Scenario::InvalidAnomalyForState;
    if (any_eval && all_in && anomaly) return Scenario::AnomalyDespiteInRange;
    if (any_out && !anomaly) return Scenario::NormalDespiteOutOfRange;
    return Scenario::Consistent;
}

}  // namespace

TEST(CheckConsistency, ExhaustiveAgainstRuleTable) {
    // sensor-a ranged everywhere, sensor-b ranged only in odd states, sensor-c never ranged
    json doc{{"entities", json::array()}, {"bindings", json::array()}, {"validities", json::array()}};
    doc["entities"].push_back({{"id", "a"}, {"kind", "sensor"}});
    doc["entities"].push_back({{"id", "b"}, {"kind", "sensor"}});
    doc["entities"].push_back({{"id", "c"}, {"kind", "sensor"}});
    for (int s = 1; s <= 21; ++s) {
        doc["bindings"].push_back({{"entity", "a"}, {"state", s}, {"range", {{"min", 10}, {"max", 20}}}});
        if (s % 2) doc["bindings"].push_back({{"entity", "b"}, {"state", s}, {"range", {{"min", 0}, {"max", 1}}}});
    }
    for (auto c : all_classes()) {
        if (c == AnomalyClass::NoAnomaly) continue;
        json states = json::array();
        const int from = 1 + ordinal(c) * 3;
        for (int s = from; s <= 21; ++s) states.push_back(s);
        doc["validities"].push_back({{"anomaly", to_string(c)}, {"valid_from_state", from}, {"valid_states", states}});
    }
    const auto o = build_ontology(doc);
    const std::vector<std::string> ids = {"a", "b", "c"};
    int cases = 0;
    for (int st = 1; st <= 21; ++st) {
        for (auto label : all_classes()) {
            const bool valid = o.valid_anomaly_types(CycleState(st)).count(label) > 0;
            for (int m = 1; m <= 3; ++m) {
                for (int mask = 0; mask < (1 << m); ++mask) {
                    std::vector<double> vals;
                    std::vector<int> status;
                    for (int l = 0; l < m; ++l) {
                        const bool out = mask >> l & 1;
                        if (l == 0) vals.push_back(out ? 25.0 : 15.0);
                        if (l == 1) vals.push_back(out ? 2.0 : 0.5);
                        if (l == 2) vals.push_back(out ? 1e9 : 0.0);
                        const bool ranged = l == 0 || (l == 1 && st % 2);
                        status.push_back(ranged ? (out ? 1 : 0) : 2);
                    }
                    const std::vector<std::string> sub(ids.begin(), ids.begin() + m);
                    const auto rep = o.check_consistency(vals, label, CycleState(st), sub);
                    ASSERT_EQ(rep.scenario, oracle(status, label, valid))
                        << "state " << st << " label " << to_string(label) << " mask " << mask << " m " << m;
                    EXPECT_EQ(rep.label_consistent, rep.scenario == Scenario::Consistent);
                    ++cases;
                }
            }
        }
    }
    EXPECT_EQ(cases, 21 * 7 * (2 + 4 + 8));
}

TEST(Serialization, RoundTrips) {
    const auto& ff = default_ff_ontology();
    EXPECT_EQ(deserialize(serialize(ff)), ff);
    const ProcessOntology empty;
    EXPECT_EQ(deserialize(serialize(empty)), empty);
    const auto text = serialize(ff).dump();
    EXPECT_EQ(parse_ontology(text), ff);
    EXPECT_THROW(parse_ontology(text.substr(0, text.size() / 2)), Error);
}

TEST(Serialization, SaveAndLoad) {
    support::TempDir d;
    const auto p = (d.path / "o.json").string();
    save_ontology(default_ff_ontology(), p);
    EXPECT_EQ(load_ontology(p), default_ff_ontology());
}

TEST(FfFixture, StatesRobotsAndMarkedDefaults) {
    const auto& o = default_ff_ontology();
    EXPECT_EQ(o.state_descriptions().size(), 21u);
    for (const char* r : {"R01", "R02", "R03", "R04"}) {
        ASSERT_TRUE(o.has_entity(r));
        EXPECT_EQ(o.entity(r).kind, EntityKind::Robot);
    }
    const auto v = o.validity(AnomalyClass::NoNose);
    ASSERT_TRUE(v);
    EXPECT_EQ(v->valid_from_state, 8);
    EXPECT_FALSE(o.robot_functions(CycleState(4)).empty());
}
