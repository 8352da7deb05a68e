#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "nsfmap/image.hpp"
#include "nsfmap/ingest.hpp"
#include "support.hpp"

using namespace nsfmap;
using nlohmann::json;

namespace {

json record(int i, int cycle, int state, int code, bool image = false) {
    json r{{"timestamp", "t" + std::to_string(i)},
           {"cycle_count", cycle},
           {"cycle_state", state},
           {"anomaly_code", code},
           {"sensors", {{"p1", 10.0 * i}, {"p2", -1.0 * i}}}};
    if (image) r["images"] = {{"camera1", "c1_" + std::to_string(i) + ".ppm"}, {"camera2", "c2_" + std::to_string(i) + ".ppm"}};
    return r;
}

StateMapping shipped_mapping() {
    return load_state_mapping(std::filesystem::path(NSFMAP_FIXTURES) / "ff_state_mapping.json");
}

}  // namespace

TEST(ParseBatches, WellFormedRecordsInOrder) {
    json batch = json::array({record(0, 1, 1, 0), record(1, 1, 1, 0), record(2, 1, 2, 0)});
    const auto t = parse_batch_documents({{"b0.json", batch}});
    ASSERT_EQ(t.records.size(), 3u);
    EXPECT_EQ(t.skipped, 0u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(t.records[i].timestamp, "t" + std::to_string(i));
    EXPECT_EQ(t.records[2].values.at("p1"), 20.0);
}

TEST(ParseBatches, OneCorruptOfTenIsSkippedAndCounted) {
    json batch = json::array();
    for (int i = 0; i < 10; ++i) batch.push_back(record(i, 1, 1, 0));
    batch[4] = json{{"timestamp", "bad"}, {"sensors", {{"p1", "NaN?"}}}};
    const auto t = parse_batch_documents({{"b.json", {{"records", batch}}}});
    EXPECT_EQ(t.records.size(), 9u);
    EXPECT_EQ(t.skipped, 1u);
    EXPECT_EQ(t.total, 10u);
}

TEST(ParseBatches, TooManyMalformedIsAnError) {
    json batch = json::array();
    for (int i = 0; i < 20; ++i) batch.push_back(record(i, 1, 1, 0));
    batch[1] = 5;
    batch[2] = json::object();
    batch[3] = json{{"timestamp", nullptr}};
    EXPECT_THROW(parse_batch_documents({{"b.json", batch}}), Error);
}

TEST(ParseBatches, DirectoryReadInNameOrder) {
    support::TempDir d;
    std::ofstream(d.path / "b.json") << json::array({record(1, 1, 1, 0)}).dump();
    std::ofstream(d.path / "a.json") << json::array({record(0, 1, 1, 0)}).dump();
    std::ofstream(d.path / "notes.txt") << "ignored";
    const auto t = parse_batches(d.path);
    ASSERT_EQ(t.records.size(), 2u);
    EXPECT_EQ(t.records[0].timestamp, "t0");
    EXPECT_THROW(parse_batches(d.path / "missing"), Error);
}

TEST(StateMappingTest, ShippedRuleTableAssignsStateLabelAndSteps) {
    json batch = json::array({record(0, 1, 4, 0, true), record(1, 1, 4, 0, true), record(2, 1, 5, 2, true),
                              record(3, 2, 1, 6)});
    const auto ds = apply_state_mapping(parse_batch_documents({{"b", batch}}), shipped_mapping());
    ASSERT_EQ(ds.samples.size(), 4u);
    EXPECT_EQ(ds.sensor_names, (std::vector<std::string>{"p1", "p2"}));
    EXPECT_EQ(ds.samples[0].state.index(), 4);
    EXPECT_EQ(ds.samples[1].step, 1);
    EXPECT_EQ(ds.samples[2].label, AnomalyClass::NoNose);
    EXPECT_EQ(ds.samples[3].label, AnomalyClass::NoBody2NoBody1);
    EXPECT_EQ(ds.samples[0].image_ref, "c1_0.ppm");
    EXPECT_EQ(ds.samples[2].image_ref, "c1_2.ppm");
    const auto filtered = filter_fusion_images(ds);
    EXPECT_FALSE(filtered.samples[2].image_ref.has_value());
    EXPECT_EQ(filtered.samples[0].image_ref, "c1_0.ppm");
    EXPECT_TRUE(filtered.check().empty());
}

TEST(StateMappingTest, SingleRecordMatchingFirstRule) {
    json doc{{"state_rules", json::array({{{"state", 7}, {"when", json::array({{{"field", "x"}, {"op", "<"}, {"value", 5}}})}},
                                          {{"state", 8}, {"when", json::array()}}})},
             {"anomaly_rules", json::array({{{"label", "NoAnomaly"}}})}};
    json r{{"timestamp", 0}, {"cycle_count", 3}, {"x", 1.0}, {"y", 2.0}};
    const auto ds = apply_state_mapping(parse_batch_documents({{"b", json::array({r})}}), parse_state_mapping(doc));
    ASSERT_EQ(ds.samples.size(), 1u);
    EXPECT_EQ(ds.samples[0].state.index(), 7);
    EXPECT_EQ(ds.samples[0].cycle_id, 3);
}

TEST(StateMappingTest, UnmappedRecordNamesItsKey) {
    json batch = json::array({record(0, 1, 1, 0), record(1, 1, 30, 0)});
    try {
        apply_state_mapping(parse_batch_documents({{"batch7.json", batch}}), shipped_mapping());
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("batch7.json#1"), std::string::npos) << e.what();
    }
}

TEST(StateMappingTest, CameraOverrideAndBetween) {
    auto m = shipped_mapping();
    m.camera = "camera2";
    json batch = json::array({record(0, 1, 4, 0, true)});
    EXPECT_EQ(apply_state_mapping(parse_batch_documents({{"b", batch}}), m).samples[0].image_ref, "c2_0.ppm");
    Predicate p{"v", "between", 1.0, 2.0};
    RawRecord r;
    r.values["v"] = 2.0;
    EXPECT_TRUE(p.holds(r));
    r.values["v"] = 2.5;
    EXPECT_FALSE(p.holds(r));
}

TEST(FilterFusionImages, KeepsImagesOnlyAtFourAndNine) {
    Dataset ds;
    ds.sensor_names = {"a"};
    for (int s = 1; s <= 21; ++s) {
        MultimodalSample x;
        x.state = CycleState(s);
        x.sensors = {1.0};
        x.image_ref = "img" + std::to_string(s);
        ds.samples.push_back(x);
    }
    const auto out = filter_fusion_images(ds);
    for (const auto& s : out.samples) EXPECT_EQ(s.image_ref.has_value(), s.state.fusion_eligible());
    Dataset none = ds;
    std::erase_if(none.samples, [](const MultimodalSample& s) { return s.state.fusion_eligible(); });
    for (const auto& s : filter_fusion_images(none).samples) EXPECT_FALSE(s.image_ref);
}

TEST(Crop, ExamplesAndSidecar) {
    Image img(224, 224);
    EXPECT_EQ(apply_crop(img, {0, 0, 224, 224}), img);
    const auto c = apply_crop(img, {10, 10, 20, 20});
    EXPECT_EQ(c.width, 10);
    EXPECT_EQ(c.height, 10);
    EXPECT_THROW(apply_crop(img, {300, 0, 400, 50}), Error);
    EXPECT_THROW(apply_crop(img, {20, 0, 10, 50}), Error);

    support::TempDir d;
    std::ofstream(d.path / "crops.csv") << "path,x_min,y_min,x_max,y_max\na.ppm,1,2,3,4\n\"b,c.ppm\",0,0,5,5\n";
    const auto m = read_crop_sidecar(d.path / "crops.csv");
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m.at("a.ppm"), (CropBox{1, 2, 3, 4}));
    EXPECT_EQ(m.at("b,c.ppm").x_max, 5);
}

TEST(DatasetIo, RoundTripIsIdempotent) {
    const auto ds = support::small_dataset(7, 2);
    support::TempDir a, b;
    write_dataset(ds, a.path);
    const auto back = read_dataset(a.path);
    ASSERT_EQ(back.samples.size(), ds.samples.size());
    EXPECT_EQ(back.sensor_names, ds.sensor_names);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        EXPECT_EQ(back.samples[i].sensors, ds.samples[i].sensors);
        EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
        EXPECT_EQ(back.samples[i].image_ref.has_value(), ds.samples[i].image_ref.has_value());
    }
    write_dataset(back, b.path);
    EXPECT_EQ(read_dataset(b.path), back);
    // materialized frames decode to the procedural render
    const ImageSource disk(a.path), synth;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (!ds.samples[i].image_ref) continue;
        EXPECT_EQ(disk.load(*back.samples[i].image_ref), synth.load(*ds.samples[i].image_ref));
        break;
    }
}

TEST(CycleSplit, SingleClassArithmetic) {
    GenConfig g;
    g.n_cycles = 10;
    g.anomaly_mix = {{AnomalyClass::NoAnomaly, 1.0}};
    const auto ds = generate_dataset(g);
    const auto sp = cycle_split(ds, 0.8, 1);
    EXPECT_EQ(cycle_classes(sp.train).size(), 8u);
    EXPECT_EQ(cycle_classes(sp.test).size(), 2u);
}

TEST(CycleSplit, DisjointCoveringDeterministic) {
    const auto ds = support::small_dataset(30, 4);
    const auto a = cycle_split(ds, 0.7, 9);
    const auto b = cycle_split(ds, 0.7, 9);
    EXPECT_EQ(a.train, b.train);
    std::set<SampleKey> tr, te;
    for (const auto& s : a.train.samples) tr.insert(key_of(s));
    for (const auto& s : a.test.samples) te.insert(key_of(s));
    for (const auto& k : tr) EXPECT_FALSE(te.count(k));
    EXPECT_EQ(tr.size() + te.size(), ds.samples.size());
    for (const auto& [c, _] : cycle_classes(a.train)) EXPECT_FALSE(cycle_classes(a.test).count(c));
    EXPECT_TRUE(a.train.check().empty());
    EXPECT_TRUE(a.test.check().empty());
}

TEST(CycleSplit, ErrorsOnTooFewCycles) {
    GenConfig g;
    g.n_cycles = 3;
    g.anomaly_mix = {{AnomalyClass::NoAnomaly, 2.0 / 3.0}, {AnomalyClass::NoBody1, 1.0 / 3.0}};
    const auto ds = generate_dataset(g);
    EXPECT_THROW(cycle_split(ds, 0.8, 1), Error);
    EXPECT_THROW(cycle_split(support::small_dataset(), 1.0, 1), Error);
    EXPECT_THROW(cycle_split(support::small_dataset(), 0.0, 1), Error);
}

TEST(CarveValidation, LastCyclesById) {
    const auto ds = support::small_dataset(20, 1);
    const auto tv = carve_validation(ds, 0.1);
    const auto val = cycle_classes(tv.test);
    ASSERT_EQ(val.size(), 2u);
    EXPECT_EQ(val.begin()->first, 19);
    EXPECT_EQ(val.rbegin()->first, 20);
}

TEST(Counts, LabelAndImageCounts) {
    const auto ds = support::small_dataset();
    std::size_t total = 0, imaged = 0;
    for (const auto& [_, n] : label_counts(ds)) total += n;
    for (const auto& [_, n] : image_label_counts(ds)) imaged += n;
    EXPECT_EQ(total, ds.samples.size());
    std::size_t expect = 0;
    for (const auto& s : ds.samples) expect += s.image_ref.has_value();
    EXPECT_EQ(imaged, expect);
}
