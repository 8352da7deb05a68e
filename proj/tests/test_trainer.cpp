#include <gtest/gtest.h>

#include <cmath>

#include "nsfmap/ingest.hpp"
#include "nsfmap/trainer.hpp"
#include "support.hpp"

using namespace nsfmap;

namespace {

MultimodalSample sample(int cycle, int state, int step, std::vector<double> sensors,
                        AnomalyClass label = AnomalyClass::NoAnomaly) {
    MultimodalSample s;
    s.cycle_id = cycle;
    s.state = CycleState(state);
    s.step = step;
    s.sensors = std::move(sensors);
    s.label = label;
    return s;
}

TrainConfig quick(int epochs = 2) {
    TrainConfig c;
    c.epochs = epochs;
    c.plateau_patience = 1;
    c.batch_size = 16;
    c.image_resize = 8;
    c.pretrain_epochs = 1;
    c.seed = 5;
    return c;
}

struct Splits {
    Dataset train, val, test;
};

const Splits& splits() {
    static const Splits s = [] {
        const auto ds = support::small_dataset(20, 3);
        auto tt = cycle_split(ds, 0.8, 1);
        auto tv = carve_validation(tt.train, 0.2);
        return Splits{tv.train, tv.test, tt.test};
    }();
    return s;
}

std::shared_ptr<const ImageSource> synth() { return std::make_shared<const ImageSource>(); }

}  // namespace

TEST(PlateauTest, ReducesAfterPatienceBadEpochs) {
    PlateauState s{0.1, INFINITY, 0, 2, 0.5, 1e-8};
    std::vector<double> lrs;
    for (double v : {1.0, 0.9, 0.9, 0.9, 0.8, 0.8, 0.8}) lrs.push_back(plateau_step(s, v));
    const std::vector<double> expect = {0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.025};
    ASSERT_EQ(lrs.size(), expect.size());
    for (std::size_t i = 0; i < lrs.size(); ++i) EXPECT_DOUBLE_EQ(lrs[i], expect[i]) << "epoch " << i + 1;
    EXPECT_THROW(plateau_step(s, NAN), Error);
}

TEST(PlateauTest, ImprovementBelowThresholdCountsAsBad) {
    PlateauState s{1.0, INFINITY, 0, 1, 0.1, 0.01};
    plateau_step(s, 1.0);
    EXPECT_DOUBLE_EQ(plateau_step(s, 0.995), 0.1);
    EXPECT_DOUBLE_EQ(s.best, 1.0);
    EXPECT_DOUBLE_EQ(plateau_step(s, 0.5), 0.1);
    EXPECT_DOUBLE_EQ(s.best, 0.5);
}

TEST(NextStepPairs, StayInsideCycleStateRuns) {
    Dataset ds;
    ds.sensor_names = {"a"};
    ds.samples = {sample(1, 1, 0, {0}), sample(1, 1, 1, {0}), sample(1, 2, 0, {0}),
                  sample(2, 2, 0, {0}), sample(2, 2, 1, {0}), sample(2, 2, 2, {0})};
    using P = std::pair<std::size_t, std::size_t>;
    EXPECT_EQ(next_step_pairs(ds), (std::vector<P>{{0, 1}, {3, 4}, {4, 5}}));
    EXPECT_TRUE(next_step_pairs(Dataset{}).empty());
}

TEST(SelectSensors, TopTwoByAbsoluteCorrelation) {
    Dataset ds;
    ds.sensor_names = {"flat", "weak", "anti", "strong"};
    const double noise[] = {0.3, -0.2, 0.1, 0.4, -0.3, 0.2, -0.1, 0.0};
    for (int i = 0; i < 8; ++i) {
        const auto label = i % 2 ? AnomalyClass::NoNose : AnomalyClass::NoAnomaly;
        const double y = encode_anomaly_label(label);
        ds.samples.push_back(sample(1, 1, i, {5.0, noise[i] + 0.1 * y, -2.0 * y + 0.01 * noise[i], y}, label));
    }
    EXPECT_EQ(select_sensors(ds), (std::vector<std::string>{"anti", "strong"}));
    EXPECT_THROW(select_sensors(ds, 5), Error);
}

TEST(FitNormalizer, ZScoresAndConstantChannel) {
    Dataset ds;
    ds.sensor_names = {"a", "b"};
    ds.samples = {sample(1, 1, 0, {1.0, 7.0}), sample(1, 1, 1, {3.0, 7.0})};
    const auto n = fit_normalizer(ds, {0, 1});
    EXPECT_DOUBLE_EQ(n.mean[0], 2.0);
    EXPECT_DOUBLE_EQ(n.stdev[0], 1.0);
    EXPECT_DOUBLE_EQ(n.stdev[1], 1.0);
    EXPECT_DOUBLE_EQ(n.to_norm(0, 3.0), 1.0);
    EXPECT_DOUBLE_EQ(n.to_raw(0, n.to_norm(0, 11.5)), 11.5);
    EXPECT_THROW(fit_normalizer(ds, {0}), Error);
}

TEST(TrainConfigTest, ValidationListsViolations) {
    TrainConfig c;
    c.epochs = 3;
    c.plateau_patience = 5;
    c.sensors = {"only-one"};
    c.dropout = 1.0;
    try {
        c.validate();
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.violations().size(), 3u);
    }
    EXPECT_NO_THROW(quick().validate());
    EXPECT_EQ(label_input_from_string(to_string(LabelInput::Observed)), LabelInput::Observed);
    EXPECT_THROW(label_input_from_string("peek"), Error);
}

TEST(TrainTest, BaselineSmoke) {
    const auto& s = splits();
    const auto r = train(Variant::B1, s.train, s.val, quick(), nullptr, nullptr);
    ASSERT_EQ(r.history.epochs.size(), 2u);
    for (const auto& e : r.history.epochs) {
        EXPECT_TRUE(std::isfinite(e.train_loss));
        EXPECT_TRUE(std::isfinite(e.val_loss));
    }
    EXPECT_GE(r.history.best_epoch, 1);
    EXPECT_LE(r.history.best_epoch, 2);
    EXPECT_EQ(r.checkpoint.sensors.size(), 2u);
    EXPECT_EQ(r.checkpoint.model.ae.dims.hidden, 10);
    EXPECT_TRUE(r.history.pretrain.empty());
}

TEST(TrainTest, DeterministicForFixedSeed) {
    const auto& s = splits();
    const auto a = train(Variant::P1, s.train, s.val, quick(), nullptr, synth());
    const auto b = train(Variant::P1, s.train, s.val, quick(), nullptr, synth());
    EXPECT_EQ(a.checkpoint.model.tensors_to_json(), b.checkpoint.model.tensors_to_json());
    ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
    for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
        EXPECT_EQ(a.history.epochs[i].val_loss, b.history.epochs[i].val_loss);
    }
}

TEST(TrainTest, EarlyStoppingBoundsEpochCount) {
    const auto& s = splits();
    auto cfg = quick(25);
    cfg.early_stopping_patience = 2;
    cfg.learning_rate = 0.05;
    const auto r = train(Variant::B1, s.train, s.val, cfg, nullptr, nullptr);
    const int ran = static_cast<int>(r.history.epochs.size());
    EXPECT_LE(ran, r.history.best_epoch + cfg.early_stopping_patience);
    if (r.history.stopped_early) EXPECT_LT(ran, cfg.epochs);
    double best = INFINITY;
    for (const auto& e : r.history.epochs) best = std::min(best, e.val_loss);
    EXPECT_EQ(r.history.epochs[static_cast<std::size_t>(r.history.best_epoch - 1)].val_loss, best);
}

TEST(TrainTest, PenaltyVariantsNeedOntology) {
    const auto& s = splits();
    EXPECT_THROW(train(Variant::P3, s.train, s.val, quick(), nullptr, synth()), Error);
    auto bad = quick();
    bad.epochs = 0;
    EXPECT_THROW(train(Variant::B1, s.train, s.val, bad, nullptr, nullptr), ValidationError);
}

TEST(TrainTest, TransferFreezesEncoderAndLambdaZeroMatchesP2) {
    const auto& s = splits();
    auto cfg = quick(3);
    cfg.penalty.lambda = 0.0;
    const auto& onto = default_ff_ontology();
    const auto p2 = train(Variant::P2, s.train, s.val, cfg, &onto, synth());
    const auto p3 = train(Variant::P3, s.train, s.val, cfg, &onto, synth());
    EXPECT_EQ(p2.history.pretrain.size(), 1u);
    EXPECT_EQ(p2.checkpoint.model.encoder_snapshot(), p2.encoder_at_freeze);
    EXPECT_NE(p2.checkpoint.model.decoder_snapshot(), p2.decoder_at_freeze);
    EXPECT_TRUE(p2.checkpoint.model.ae.frozen_encoder);
    ASSERT_EQ(p2.history.epochs.size(), p3.history.epochs.size());
    for (std::size_t i = 0; i < p2.history.epochs.size(); ++i) {
        EXPECT_EQ(p2.history.epochs[i].train_loss, p3.history.epochs[i].train_loss);
        EXPECT_EQ(p2.history.epochs[i].val_loss, p3.history.epochs[i].val_loss);
    }
    EXPECT_EQ(p2.checkpoint.model.tensors_to_json(), p3.checkpoint.model.tensors_to_json());
}

TEST(CheckpointTest, RoundTripPreservesPredictions) {
    const auto& s = splits();
    const auto r = train(Variant::P1, s.train, s.val, quick(), nullptr, synth());
    support::TempDir d;
    save_checkpoint(r.checkpoint, d.path / "ck.json");
    const auto back = load_checkpoint(d.path / "ck.json");
    EXPECT_EQ(back.variant(), Variant::P1);
    EXPECT_EQ(back.sensors, r.checkpoint.sensors);
    EXPECT_EQ(back.best_epoch, r.checkpoint.best_epoch);
    const Predictor a(r.checkpoint, synth()), b(back, synth());
    const auto pa = a.predict_dataset(s.test), pb = b.predict_dataset(s.test);
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].predicted_sensors, pb[i].predicted_sensors);
        EXPECT_EQ(pa[i].anomaly_value, pb[i].anomaly_value);
    }
    EXPECT_THROW(load_checkpoint(d.path / "missing.json"), Error);
}

TEST(PredictorTest, OneRecordPerPairWithTargetStepAndRouting) {
    const auto& s = splits();
    const auto r = train(Variant::P1, s.train, s.val, quick(), nullptr, synth());
    const Predictor p(r.checkpoint, synth());
    const auto recs = p.predict_dataset(s.test);
    const auto pairs = next_step_pairs(s.test);
    ASSERT_EQ(recs.size(), pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto& cur = s.test.samples[pairs[k].first];
        const auto& nxt = s.test.samples[pairs[k].second];
        EXPECT_EQ(recs[k].step, nxt.step);
        EXPECT_EQ(recs[k].true_label, nxt.label);
        EXPECT_EQ(recs[k].routing, cur.state.fusion_eligible() && cur.image_ref ? Routing::Fused
                                                                               : Routing::TimeSeriesOnly);
        EXPECT_EQ(recs[k].predicted_label, decode_anomaly_value(recs[k].anomaly_value));
    }
    EXPECT_THROW(p.classify_image(s.test.samples.front()), Error);
}

TEST(PredictorTest, ImageBaselineClassifiesImagedSamples) {
    const auto& s = splits();
    const auto r = train(Variant::B2, s.train, s.val, quick(), nullptr, synth());
    const Predictor p(r.checkpoint, synth());
    std::size_t imaged = 0;
    for (const auto& x : s.test.samples) imaged += x.image_ref.has_value();
    const auto recs = p.predict_dataset(s.test);
    EXPECT_EQ(recs.size(), imaged);
    for (const auto& rec : recs) EXPECT_EQ(rec.routing, Routing::ImageOnly);
    EXPECT_THROW(p.predict_next(s.test.samples.front(), s.test.sensor_names), Error);
}
