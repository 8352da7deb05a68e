#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "nsfmap/datagen.hpp"
#include "nsfmap/image.hpp"
#include "nsfmap/nn.hpp"

using namespace nsfmap;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace

TEST(VariantNames, RoundTripAndAliases) {
    for (auto v : all_variants()) EXPECT_EQ(variant_from_string(to_string(v)), v);
    EXPECT_EQ(all_variants().size(), 7u);
    EXPECT_EQ(variant_from_string("DLF"), Variant::P1);
    EXPECT_EQ(variant_from_string("DLF+TL+KIL"), Variant::P3);
    EXPECT_THROW(variant_from_string("P4"), Error);
    EXPECT_TRUE(freezes_encoder(Variant::P2));
    EXPECT_FALSE(freezes_encoder(Variant::DlfKil));
    EXPECT_TRUE(uses_penalty(Variant::DlfKil));
    EXPECT_FALSE(uses_penalty(Variant::P2));
}

TEST(AutoencoderTest, ParameterCountsFollowDims) {
    Autoencoder p(AutoencoderDims::fusion());
    EXPECT_EQ(p.enc1.w.size(), 3u * 64);
    EXPECT_EQ(p.enc2.w.size(), 64u * 128);
    EXPECT_EQ(p.dec.w.size(), 128u * 3);
    Autoencoder b(AutoencoderDims::baseline());
    EXPECT_EQ(b.enc1.w.size(), 3u * 10);
    EXPECT_EQ(b.dec.w.size(), 10u * 3);
    EXPECT_EQ(b.enc2.w.size(), 0u);
}

TEST(AutoencoderTest, ZeroWeightsGiveZeroCode) {
    Autoencoder ae(AutoencoderDims::fusion());
    const auto code = ae.encode({0, 0, 0});
    EXPECT_EQ(code.size(), 128u);
    for (double v : code) EXPECT_EQ(v, 0.0);
    const auto out = ae.decode(std::vector<double>(128, 0.0));
    EXPECT_EQ(out, std::vector<double>(3, 0.0));
}

TEST(AutoencoderTest, DeterministicInitAndShapeErrors) {
    Autoencoder a(AutoencoderDims::fusion()), b(AutoencoderDims::fusion());
    Rng r1(5), r2(5);
    a.init(r1);
    b.init(r2);
    EXPECT_EQ(a.encode({0.1, 0.2, 0.3}), b.encode({0.1, 0.2, 0.3}));
    EXPECT_EQ(a.decode(a.encode({1, 2, 3})).size(), 3u);
    EXPECT_THROW(a.encode({1, 2, 3, 4}), Error);
    EXPECT_THROW(a.decode({1, 2}), Error);
}

TEST(AutoencoderTest, ShapeLawsOverRandomDims) {
    Rng rng(17);
    for (int t = 0; t < 25; ++t) {
        AutoencoderDims d{1 + static_cast<int>(rng.below(6)), 1 + static_cast<int>(rng.below(9)),
                          static_cast<int>(rng.below(7)), 1 + static_cast<int>(rng.below(5)), rng.below(2) == 1};
        Autoencoder ae(d);
        ae.init(rng);
        const auto code = ae.encode(random_vec(rng, static_cast<std::size_t>(d.input)));
        EXPECT_EQ(static_cast<int>(code.size()), d.code_dim());
        EXPECT_EQ(static_cast<int>(ae.decode(code).size()), d.output);
    }
}

TEST(AutoencoderTest, LearnsConstantSignal) {
    Autoencoder ae(AutoencoderDims::fusion());
    Rng rng(3);
    ae.init(rng);
    const std::vector<double> c = {0.6, 1.1, 0.3};
    Adam opt(1e-3);
    for (int it = 0; it < 1500; ++it) {
        for (auto& p : ae.params()) p.tensor->zero_grad();
        Autoencoder::Cache cache;
        ae.forward(c, cache);
        std::vector<double> g(3);
        for (int j = 0; j < 3; ++j) g[j] = 2.0 * (cache.out[j] - c[j]);
        ae.backward(cache, g, {});
        opt.step(ae.params());
    }
    const auto out = ae.decode(ae.encode(c));
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(out[j], c[j], 1e-2);
}

TEST(AutoencoderTest, GradientsMatchFiniteDifferences) {
    Rng rng(23);
    for (int t = 0; t < 10; ++t) {
        AutoencoderDims d{3, 2 + static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5)), 3, rng.below(2) == 1};
        Autoencoder ae(d);
        ae.init(rng);
        support::randomize_biases(ae.params(), rng);
        const auto x = random_vec(rng, 3);
        const auto w = random_vec(rng, 3);
        auto loss = [&] {
            const auto o = ae.decode(ae.encode(x));
            return w[0] * o[0] + w[1] * o[1] + w[2] * o[2] + 0.5 * o[0] * o[0];
        };
        auto fill = [&] {
            for (auto& p : ae.params()) p.tensor->zero_grad();
            Autoencoder::Cache c;
            ae.forward(x, c);
            ae.backward(c, {w[0] + c.out[0], w[1], w[2]}, {});
        };
        const auto rep = support::gradcheck(ae.params(), loss, fill);
        EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
    }
}

TEST(FreezeEncoder, EncoderExcludedFromUpdatesDecoderNot) {
    Autoencoder ae(AutoencoderDims::fusion());
    Rng rng(8);
    ae.init(rng);
    auto frozen = freeze_encoder(ae);
    EXPECT_TRUE(frozen.frozen_encoder);
    auto snap = [](const Autoencoder& a) {
        std::vector<double> v = a.enc1.w.value;
        v.insert(v.end(), a.enc1.b.value.begin(), a.enc1.b.value.end());
        v.insert(v.end(), a.enc2.w.value.begin(), a.enc2.w.value.end());
        v.insert(v.end(), a.enc2.b.value.begin(), a.enc2.b.value.end());
        return v;
    };
    for (Autoencoder* m : {&frozen, &ae}) {
        const auto enc0 = snap(*m);
        const auto dec0 = m->dec.w.value;
        Adam opt(1e-2);
        for (int it = 0; it < 10; ++it) {
            for (auto& p : m->params()) p.tensor->zero_grad();
            Autoencoder::Cache c;
            m->forward({0.3 + 0.1 * it, 0.5, 0.9}, c);
            m->backward(c, {c.out[0] - 1.0, c.out[1] + 1.0, c.out[2] - 2.0}, {});
            opt.step(m->params());
        }
        if (m == &frozen) {
            EXPECT_EQ(snap(*m), enc0);
        } else {
            EXPECT_NE(snap(*m), enc0);
        }
        EXPECT_NE(m->dec.w.value, dec0);
    }
}

TEST(ConvBackboneTest, ShapeDeterminismAndErrors) {
    ConvBackbone cnn;
    Rng rng(2);
    cnn.init(rng);
    const auto img = normalize_to_chw(render_synthetic_image(CycleState(4), AnomalyClass::NoAnomaly, 1.0, 1, 16).pixels,
                                      {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225});
    const auto f = cnn.extract(img, 16, 16);
    EXPECT_EQ(f.size(), 64u);
    EXPECT_EQ(f, cnn.extract(img, 16, 16));
    for (double v : f) EXPECT_TRUE(std::isfinite(v));
    EXPECT_THROW(cnn.extract(img, 16, 15), Error);
    EXPECT_THROW(cnn.extract(std::vector<double>(3 * 2 * 2, 0.0), 2, 2), Error);
}

TEST(ConvBackboneTest, MarkerChangesFeatures) {
    ConvBackbone cnn;
    Rng rng(4);
    cnn.init(rng);
    auto feat = [&](AnomalyClass c) {
        return cnn.extract(normalize_to_chw(render_synthetic_image(CycleState(4), c, 1.0, 9, 16).pixels,
                                            {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}),
                           16, 16);
    };
    const auto a = feat(AnomalyClass::NoAnomaly), b = feat(AnomalyClass::NoBody1);
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_GT(d2, 0.0);
}

TEST(ConvBackboneTest, GradientsMatchFiniteDifferences) {
    Rng rng(31);
    ConvBackbone cnn;
    cnn.init(rng);
    support::randomize_biases(cnn.params(), rng, 0.05);
    const int side = 8;
    const auto x = random_vec(rng, 3 * side * side);
    const auto w = random_vec(rng, 64);
    auto loss = [&] {
        const auto f = cnn.extract(x, side, side);
        double s = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) s += w[i] * f[i];
        return s;
    };
    auto fill = [&] {
        for (auto& p : cnn.params()) p.tensor->zero_grad();
        ConvBackbone::Cache c;
        cnn.forward(x, side, side, c);
        cnn.backward(c, w);
    };
    const auto rep = support::gradcheck(cnn.params(), loss, fill);
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
    EXPECT_GT(rep.checked, 10000u);
}

TEST(FusionHeadTest, ShapesConcatenationOrderAndDeterminism) {
    FusionHead h(64, 3);
    Rng rng(1);
    h.init(rng);
    EXPECT_EQ(h.fc.in, 67);
    EXPECT_EQ(h.fc.out, 3);
    const std::vector<double> ts = {0.1, -0.2, 0.3};
    std::vector<double> img(64, 0.0);
    const auto y0 = h.fuse_predict(ts, img);
    EXPECT_EQ(y0, h.fuse_predict(ts, img));
    // zero image: only the ts columns (the last three) and the bias matter
    for (int o = 0; o < 3; ++o) {
        double expect = h.fc.b.value[o];
        for (int j = 0; j < 3; ++j) expect += h.fc.w.value[o * 67 + 64 + j] * ts[j];
        EXPECT_NEAR(y0[o], expect, 1e-12);
    }
    img[0] = 1.0;
    const auto y1 = h.fuse_predict(ts, img);
    for (int o = 0; o < 3; ++o) EXPECT_NEAR(y1[o] - y0[o], h.fc.w.value[o * 67], 1e-12);
    EXPECT_THROW(h.fuse_predict({1, 2}, img), Error);
    EXPECT_THROW(h.fuse_predict(ts, std::vector<double>(10, 0.0)), Error);
}

TEST(FusionHeadTest, DropoutOnlyTouchesImageSlot) {
    FusionHead h(4, 3, 0.5);
    Rng init(2), drop(3);
    h.init(init);
    FusionHead::Cache c;
    h.forward({1, 2, 3}, {1, 1, 1, 1}, &drop, c);
    for (int j = 4; j < 7; ++j) EXPECT_EQ(c.mask[j], 1.0);
    for (int j = 0; j < 4; ++j) EXPECT_TRUE(c.mask[j] == 0.0 || c.mask[j] == 2.0);
}

TEST(ModelTest, RoutingTable) {
    ModelSpec spec;
    spec.variant = Variant::P1;
    spec.image_size = 8;
    Model m(spec);
    m.init(1);
    const std::vector<double> img(3 * 8 * 8, 0.1);
    StepInput in{{0.1, 0.2, 0.0}, CycleState(5), &img};
    auto out = m.predict_step(in);
    EXPECT_EQ(out.routing, Routing::TimeSeriesOnly);
    EXPECT_FALSE(out.image_fallback);
    Model::Trace t;
    m.forward(in, nullptr, t);
    EXPECT_FALSE(t.image_used);

    in.state = CycleState(4);
    out = m.predict_step(in);
    EXPECT_EQ(out.routing, Routing::Fused);
    EXPECT_FALSE(out.image_fallback);

    in.image = nullptr;
    out = m.predict_step(in);
    EXPECT_EQ(out.routing, Routing::TimeSeriesOnly);
    EXPECT_TRUE(out.image_fallback);

    spec.variant = Variant::DlfZeroImage;
    Model z(spec);
    z.init(1);
    in.image = &img;
    EXPECT_EQ(z.predict_step(in).routing, Routing::TimeSeriesOnly);
    Model::Trace tz;
    z.forward(in, nullptr, tz);
    EXPECT_FALSE(tz.image_used);
}

TEST(ModelTest, TensorsRoundTripThroughJson) {
    ModelSpec spec;
    spec.variant = Variant::P3;
    spec.image_size = 8;
    Model a(spec), b(spec);
    a.init(7);
    b.init(8);
    b.tensors_from_json(a.tensors_to_json());
    const std::vector<double> img(3 * 8 * 8, 0.3);
    StepInput in{{0.5, -0.1, 0.0}, CycleState(9), &img};
    EXPECT_EQ(a.predict_step(in).y, b.predict_step(in).y);
    EXPECT_EQ(a.encoder_snapshot(), b.encoder_snapshot());
}

TEST(ModelTest, FullModelGradientsMatchFiniteDifferences) {
    ModelSpec spec;
    spec.variant = Variant::P1;
    spec.image_size = 8;
    spec.ae = {3, 5, 4, 3, true};
    Model m(spec);
    m.init(3);
    Rng rng(5);
    support::randomize_biases(m.params(), rng);
    const auto img = random_vec(rng, 3 * 8 * 8);
    const auto w = random_vec(rng, 3);
    StepInput in{{0.4, -0.3, 0.2}, CycleState(4), &img};
    auto loss = [&] {
        const auto y = m.predict_step(in).y;
        return w[0] * y[0] + w[1] * y[1] + w[2] * y[2];
    };
    auto fill = [&] {
        m.zero_grad();
        Model::Trace t;
        m.forward(in, nullptr, t);
        m.backward(t, {w[0], w[1], w[2]});
    };
    const auto rep = support::gradcheck(m.params(), loss, fill);
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
}

TEST(ImageClasses, FiveClassesOfTheImageTable) {
    EXPECT_EQ(image_classes().size(), 5u);
    EXPECT_EQ(image_class_index(AnomalyClass::NoAnomaly), 0);
    EXPECT_EQ(image_class_index(AnomalyClass::NoBody2), -1);
}
