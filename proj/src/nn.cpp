#include "nsfmap/nn.hpp"

#include <algorithm>
#include <cmath>

namespace nsfmap {

using nlohmann::json;

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::B1: return "B1";
        case Variant::B2: return "B2";
        case Variant::P1: return "P1";
        case Variant::P2: return "P2";
        case Variant::P3: return "P3";
        case Variant::DlfKil: return "DLF+KIL";
        case Variant::DlfZeroImage: return "DLF-zero-image";
    }
    return "?";
}

Variant variant_from_string(std::string_view s) {
    for (Variant v : all_variants()) {
        if (to_string(v) == s) return v;
    }
    if (s == "DLF") return Variant::P1;
    if (s == "DLF+TL") return Variant::P2;
    if (s == "DLF+TL+KIL") return Variant::P3;
    throw Error("unknown variant '" + std::string(s) + "'");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::B1, Variant::B2, Variant::P1, Variant::DlfZeroImage,
                                           Variant::P2, Variant::DlfKil, Variant::P3};
    return v;
}

bool uses_images(Variant v) { return v != Variant::B1 && v != Variant::DlfZeroImage; }
bool freezes_encoder(Variant v) { return v == Variant::P2 || v == Variant::P3; }
bool uses_penalty(Variant v) { return v == Variant::P3 || v == Variant::DlfKil; }

const std::vector<AnomalyClass>& image_classes() {
    static const std::vector<AnomalyClass> c = {AnomalyClass::NoAnomaly, AnomalyClass::NoBody1, AnomalyClass::NoNose,
                                                AnomalyClass::NoNoseNoBody2, AnomalyClass::NoNoseNoBody2NoBody1};
    return c;
}

int image_class_index(AnomalyClass c) {
    const auto& all = image_classes();
    auto it = std::find(all.begin(), all.end(), c);
    return it == all.end() ? -1 : static_cast<int>(it - all.begin());
}

namespace {

void he_uniform(Tensor& w, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : w.value) v = rng.uniform(-bound, bound);
}

void relu_inplace(std::vector<double>& v) {
    for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

void relu_mask(const std::vector<double>& act, std::vector<double>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (act[i] <= 0.0) g[i] = 0.0;
    }
}

void maxpool2(const std::vector<double>& x, int c, int h, int w, std::vector<double>& y, std::vector<int>& arg) {
    const int oh = h / 2, ow = w / 2;
    y.assign(static_cast<std::size_t>(c) * oh * ow, 0.0);
    arg.assign(y.size(), 0);
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                int best = (ch * h + 2 * i) * w + 2 * j;
                for (int di = 0; di < 2; ++di) {
                    for (int dj = 0; dj < 2; ++dj) {
                        const int idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
                        if (x[static_cast<std::size_t>(idx)] > x[static_cast<std::size_t>(best)]) best = idx;
                    }
                }
                const std::size_t o = (static_cast<std::size_t>(ch) * oh + i) * ow + j;
                y[o] = x[static_cast<std::size_t>(best)];
                arg[o] = best;
            }
        }
    }
}

void append(std::vector<double>& out, const Tensor& t) { out.insert(out.end(), t.value.begin(), t.value.end()); }

}  // namespace

// ---------------------------------------------------------------------------

Linear::Linear(int in_dim, int out_dim)
    : in(in_dim), out(out_dim), w(static_cast<std::size_t>(in_dim) * out_dim), b(static_cast<std::size_t>(out_dim)) {
    if (in_dim <= 0 || out_dim <= 0) throw Error("Linear: dimensions must be positive");
}

void Linear::init(Rng& rng) {
    he_uniform(w, in, rng);
    std::fill(b.value.begin(), b.value.end(), 0.0);
}

void Linear::forward(const double* x, double* y) const {
    for (int o = 0; o < out; ++o) {
        const double* row = &w.value[static_cast<std::size_t>(o) * in];
        double acc = b.value[static_cast<std::size_t>(o)];
        for (int i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

void Linear::backward(const double* x, const double* gy, double* gx, bool params) {
    if (gx) std::fill(gx, gx + in, 0.0);
    for (int o = 0; o < out; ++o) {
        const double g = gy[o];
        if (g == 0.0) continue;
        const std::size_t base = static_cast<std::size_t>(o) * in;
        if (params) {
            b.grad[static_cast<std::size_t>(o)] += g;
            for (int i = 0; i < in; ++i) w.grad[base + i] += g * x[i];
        }
        if (gx) {
            for (int i = 0; i < in; ++i) gx[i] += g * w.value[base + i];
        }
    }
}

Conv3x3::Conv3x3(int in_ch, int out_ch)
    : cin(in_ch), cout(out_ch), w(static_cast<std::size_t>(in_ch) * out_ch * 9), b(static_cast<std::size_t>(out_ch)) {}

void Conv3x3::init(Rng& rng) {
    he_uniform(w, cin * 9, rng);
    std::fill(b.value.begin(), b.value.end(), 0.0);
}

void Conv3x3::forward(const std::vector<double>& x, int h, int w_, std::vector<double>& y) const {
    const std::size_t plane = static_cast<std::size_t>(h) * w_;
    y.assign(static_cast<std::size_t>(cout) * plane, 0.0);
    for (int o = 0; o < cout; ++o) {
        double* yo = &y[o * plane];
        std::fill(yo, yo + plane, b.value[static_cast<std::size_t>(o)]);
        for (int c = 0; c < cin; ++c) {
            const double* xc = &x[c * plane];
            const double* k = &w.value[(static_cast<std::size_t>(o) * cin + c) * 9];
            for (int i = 0; i < h; ++i) {
                for (int di = -1; di <= 1; ++di) {
                    const int ii = i + di;
                    if (ii < 0 || ii >= h) continue;
                    for (int dj = -1; dj <= 1; ++dj) {
                        const double kv = k[(di + 1) * 3 + (dj + 1)];
                        const int j0 = std::max(0, -dj), j1 = std::min(w_, w_ - dj);
                        const double* xr = xc + static_cast<std::size_t>(ii) * w_ + dj;
                        double* yr = yo + static_cast<std::size_t>(i) * w_;
                        for (int j = j0; j < j1; ++j) yr[j] += kv * xr[j];
                    }
                }
            }
        }
    }
}

void Conv3x3::backward(const std::vector<double>& x, int h, int w_, const std::vector<double>& gy,
                       std::vector<double>* gx, bool params) {
    const std::size_t plane = static_cast<std::size_t>(h) * w_;
    if (gx) gx->assign(static_cast<std::size_t>(cin) * plane, 0.0);
    for (int o = 0; o < cout; ++o) {
        const double* go = &gy[o * plane];
        if (params) {
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) s += go[p];
            b.grad[static_cast<std::size_t>(o)] += s;
        }
        for (int c = 0; c < cin; ++c) {
            const double* xc = &x[c * plane];
            const std::size_t kbase = (static_cast<std::size_t>(o) * cin + c) * 9;
            double* gxc = gx ? &(*gx)[c * plane] : nullptr;
            for (int di = -1; di <= 1; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    const std::size_t kidx = kbase + static_cast<std::size_t>((di + 1) * 3 + (dj + 1));
                    const double kv = w.value[kidx];
                    double gk = 0.0;
                    const int i0 = std::max(0, -di), i1 = std::min(h, h - di);
                    const int j0 = std::max(0, -dj), j1 = std::min(w_, w_ - dj);
                    for (int i = i0; i < i1; ++i) {
                        const double* gr = go + static_cast<std::size_t>(i) * w_;
                        const std::size_t xoff = static_cast<std::size_t>(i + di) * w_ + dj;
                        for (int j = j0; j < j1; ++j) {
                            gk += gr[j] * xc[xoff + j];
                            if (gxc) gxc[xoff + j] += gr[j] * kv;
                        }
                    }
                    if (params) w.grad[kidx] += gk;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

Autoencoder::Autoencoder(const AutoencoderDims& d) : dims(d) {
    if (d.input <= 0 || d.hidden <= 0 || d.output <= 0 || d.latent < 0) throw Error("Autoencoder: bad dimensions");
    enc1 = Linear(d.input, d.hidden);
    if (d.latent > 0) enc2 = Linear(d.hidden, d.latent);
    dec = Linear(d.code_dim(), d.output);
}

void Autoencoder::init(Rng& rng) {
    enc1.init(rng);
    if (dims.latent > 0) enc2.init(rng);
    dec.init(rng);
    // code is non-negative, so this keeps every rectified output alive at the start
    if (dims.output_relu) {
        for (auto& v : dec.w.value) v = std::abs(v);
    }
}

std::vector<double> Autoencoder::encode(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != dims.input) {
        throw Error("encode: input has length " + std::to_string(x.size()) + ", expected " + std::to_string(dims.input));
    }
    std::vector<double> h1(static_cast<std::size_t>(dims.hidden));
    enc1.forward(x.data(), h1.data());
    relu_inplace(h1);
    if (dims.latent == 0) return h1;
    std::vector<double> code(static_cast<std::size_t>(dims.latent));
    enc2.forward(h1.data(), code.data());
    relu_inplace(code);
    return code;
}

std::vector<double> Autoencoder::decode(const std::vector<double>& code) const {
    if (static_cast<int>(code.size()) != dims.code_dim()) {
        throw Error("decode: code has length " + std::to_string(code.size()) + ", expected " +
                    std::to_string(dims.code_dim()));
    }
    std::vector<double> out(static_cast<std::size_t>(dims.output));
    dec.forward(code.data(), out.data());
    if (dims.output_relu) relu_inplace(out);
    return out;
}

void Autoencoder::forward(const std::vector<double>& x, Cache& c) const {
    if (static_cast<int>(x.size()) != dims.input) throw Error("autoencoder: input dimension mismatch");
    c.x = x;
    c.h1.assign(static_cast<std::size_t>(dims.hidden), 0.0);
    enc1.forward(x.data(), c.h1.data());
    relu_inplace(c.h1);
    if (dims.latent > 0) {
        c.code.assign(static_cast<std::size_t>(dims.latent), 0.0);
        enc2.forward(c.h1.data(), c.code.data());
        relu_inplace(c.code);
    } else {
        c.code = c.h1;
    }
    c.out.assign(static_cast<std::size_t>(dims.output), 0.0);
    dec.forward(c.code.data(), c.out.data());
    if (dims.output_relu) relu_inplace(c.out);
}

void Autoencoder::backward(const Cache& c, const std::vector<double>& g_out, const std::vector<double>& g_code) {
    std::vector<double> g = g_out;
    if (dims.output_relu) relu_mask(c.out, g);
    std::vector<double> gc(c.code.size(), 0.0);
    dec.backward(c.code.data(), g.data(), frozen_encoder ? nullptr : gc.data(), true);
    if (frozen_encoder) return;
    for (std::size_t i = 0; i < g_code.size(); ++i) gc[i] += g_code[i];
    relu_mask(c.code, gc);
    if (dims.latent > 0) {
        std::vector<double> gh(c.h1.size(), 0.0);
        enc2.backward(c.h1.data(), gc.data(), gh.data(), true);
        relu_mask(c.h1, gh);
        enc1.backward(c.x.data(), gh.data(), nullptr, true);
    } else {
        enc1.backward(c.x.data(), gc.data(), nullptr, true);
    }
}

std::vector<ParamRef> Autoencoder::params() {
    const bool enc = !frozen_encoder;
    std::vector<ParamRef> p = {{"ae.enc1.w", &enc1.w, enc}, {"ae.enc1.b", &enc1.b, enc}};
    if (dims.latent > 0) {
        p.push_back({"ae.enc2.w", &enc2.w, enc});
        p.push_back({"ae.enc2.b", &enc2.b, enc});
    }
    p.push_back({"ae.dec.w", &dec.w, true});
    p.push_back({"ae.dec.b", &dec.b, true});
    return p;
}

Autoencoder freeze_encoder(Autoencoder ae) {
    ae.frozen_encoder = true;
    return ae;
}

// ---------------------------------------------------------------------------

void ConvBackbone::init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    conv3.init(rng);
}

std::vector<double> ConvBackbone::extract(const std::vector<double>& chw, int h, int w) const {
    Cache c;
    return forward(chw, h, w, c);
}

std::vector<double> ConvBackbone::forward(const std::vector<double>& chw, int h, int w, Cache& c) const {
    if (h < 4 || w < 4) throw Error("image backbone: image must be at least 4x4");
    if (chw.size() != static_cast<std::size_t>(3) * h * w) {
        throw Error("image backbone: expected 3x" + std::to_string(h) + "x" + std::to_string(w) + " input, got " +
                    std::to_string(chw.size()) + " values");
    }
    c.h = h;
    c.w = w;
    c.x = chw;
    conv1.forward(c.x, h, w, c.c1);
    relu_inplace(c.c1);
    maxpool2(c.c1, conv1.cout, h, w, c.p1, c.arg1);
    const int h2 = h / 2, w2 = w / 2;
    conv2.forward(c.p1, h2, w2, c.c2);
    relu_inplace(c.c2);
    maxpool2(c.c2, conv2.cout, h2, w2, c.p2, c.arg2);
    const int h3 = h2 / 2, w3 = w2 / 2;
    conv3.forward(c.p2, h3, w3, c.c3);
    relu_inplace(c.c3);
    const std::size_t plane = static_cast<std::size_t>(h3) * w3;
    std::vector<double> feat(kFeatureDim, 0.0);
    for (int k = 0; k < kFeatureDim; ++k) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += c.c3[k * plane + p];
        feat[static_cast<std::size_t>(k)] = s / static_cast<double>(plane);
    }
    return feat;
}

void ConvBackbone::backward(const Cache& c, const std::vector<double>& g_feat) {
    const int h2 = c.h / 2, w2 = c.w / 2, h3 = h2 / 2, w3 = w2 / 2;
    const std::size_t plane3 = static_cast<std::size_t>(h3) * w3;
    std::vector<double> g3(c.c3.size());
    for (int k = 0; k < kFeatureDim; ++k) {
        for (std::size_t p = 0; p < plane3; ++p) g3[k * plane3 + p] = g_feat[static_cast<std::size_t>(k)] / plane3;
    }
    relu_mask(c.c3, g3);
    std::vector<double> gp2;
    conv3.backward(c.p2, h3, w3, g3, &gp2, true);
    std::vector<double> g2(c.c2.size(), 0.0);
    for (std::size_t i = 0; i < gp2.size(); ++i) g2[static_cast<std::size_t>(c.arg2[i])] += gp2[i];
    relu_mask(c.c2, g2);
    std::vector<double> gp1;
    conv2.backward(c.p1, h2, w2, g2, &gp1, true);
    std::vector<double> g1(c.c1.size(), 0.0);
    for (std::size_t i = 0; i < gp1.size(); ++i) g1[static_cast<std::size_t>(c.arg1[i])] += gp1[i];
    relu_mask(c.c1, g1);
    conv1.backward(c.x, c.h, c.w, g1, nullptr, true);
}

std::vector<ParamRef> ConvBackbone::params() {
    return {{"cnn.conv1.w", &conv1.w, true}, {"cnn.conv1.b", &conv1.b, true}, {"cnn.conv2.w", &conv2.w, true},
            {"cnn.conv2.b", &conv2.b, true}, {"cnn.conv3.w", &conv3.w, true}, {"cnn.conv3.b", &conv3.b, true}};
}

// ---------------------------------------------------------------------------

FusionHead::FusionHead(int img_dim, int ts_dim, double dropout_rate)
    : fc(img_dim + ts_dim, 3), dropout(dropout_rate), img_dim_(img_dim) {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("fusion head: dropout must be in [0,1)");
}

std::array<double, 3> FusionHead::fuse_predict(const std::vector<double>& ts, const std::vector<double>& img) const {
    Cache c;
    return forward(ts, img, nullptr, c);
}

std::array<double, 3> FusionHead::forward(const std::vector<double>& ts, const std::vector<double>& img, Rng* rng,
                                          Cache& c) const {
    if (static_cast<int>(img.size()) != img_dim_ || static_cast<int>(ts.size()) != ts_dim()) {
        throw Error("fusion head: expected " + std::to_string(img_dim_) + "+" + std::to_string(ts_dim()) +
                    " inputs, got " + std::to_string(img.size()) + "+" + std::to_string(ts.size()));
    }
    c.z.assign(img.begin(), img.end());
    c.z.insert(c.z.end(), ts.begin(), ts.end());
    c.mask.assign(c.z.size(), 1.0);
    if (rng && dropout > 0.0) {
        const double keep = 1.0 - dropout;
        for (int i = 0; i < img_dim_; ++i) c.mask[static_cast<std::size_t>(i)] = rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
    c.zin.resize(c.z.size());
    for (std::size_t i = 0; i < c.z.size(); ++i) c.zin[i] = c.z[i] * c.mask[i];
    std::array<double, 3> y{};
    fc.forward(c.zin.data(), y.data());
    return y;
}

std::pair<std::vector<double>, std::vector<double>> FusionHead::backward(const Cache& c,
                                                                         const std::array<double, 3>& g_out) {
    std::vector<double> gz(c.z.size(), 0.0);
    fc.backward(c.zin.data(), g_out.data(), gz.data(), true);
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] *= c.mask[i];
    const auto split = gz.begin() + img_dim_;
    return {std::vector<double>(gz.begin(), split), std::vector<double>(split, gz.end())};
}

// ---------------------------------------------------------------------------

Model::Model(const ModelSpec& s) : spec(s) {
    if (s.variant == Variant::B1) {
        ae = Autoencoder(s.ae);
    } else if (s.variant == Variant::B2) {
        classifier = Linear(ConvBackbone::kFeatureDim, s.image_classes);
    } else {
        ae = Autoencoder(s.ae);
        const int ts_dim = s.fuse_latent ? s.ae.code_dim() : s.ae.output;
        head = FusionHead(ConvBackbone::kFeatureDim, ts_dim, s.dropout);
    }
}

void Model::init(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 77));
    if (spec.variant != Variant::B2) ae.init(rng);
    if (spec.variant != Variant::B1) backbone.init(rng);
    if (spec.variant == Variant::B2) classifier.init(rng);
    else if (spec.variant != Variant::B1) head.init(rng);
}

Routing Model::route(CycleState state, bool has_image) const {
    switch (spec.variant) {
        case Variant::B1:
        case Variant::DlfZeroImage: return Routing::TimeSeriesOnly;
        case Variant::B2: return Routing::ImageOnly;
        default: return state.fusion_eligible() && has_image ? Routing::Fused : Routing::TimeSeriesOnly;
    }
}

StepOutput Model::predict_step(const StepInput& in) const {
    Trace t;
    return forward(in, nullptr, t);
}

StepOutput Model::forward(const StepInput& in, Rng* dropout_rng, Trace& t) const {
    if (spec.variant == Variant::B2) throw Error("B2 is an image classifier; use image_logits");
    StepOutput out;
    out.routing = route(in.state, in.image != nullptr);
    ae.forward(in.x, t.ae);
    if (spec.variant == Variant::B1) {
        std::copy(t.ae.out.begin(), t.ae.out.end(), out.y.begin());
        return out;
    }
    out.image_fallback = spec.variant != Variant::DlfZeroImage && in.state.fusion_eligible() && in.image == nullptr;
    std::vector<double> img(ConvBackbone::kFeatureDim, 0.0);
    t.image_used = out.routing == Routing::Fused;
    if (t.image_used) {
        const int side = spec.image_size;
        img = backbone.forward(*in.image, side, side, t.cnn);
    }
    const auto& ts = spec.fuse_latent ? t.ae.code : t.ae.out;
    out.y = head.forward(ts, img, dropout_rng, t.head);
    return out;
}

void Model::backward(const Trace& t, const std::array<double, 3>& g_out) {
    if (spec.variant == Variant::B1) {
        ae.backward(t.ae, std::vector<double>(g_out.begin(), g_out.end()), {});
        return;
    }
    auto [g_img, g_ts] = head.backward(t.head, g_out);
    if (t.image_used) backbone.backward(t.cnn, g_img);
    if (spec.fuse_latent) ae.backward(t.ae, std::vector<double>(t.ae.out.size(), 0.0), g_ts);
    else ae.backward(t.ae, g_ts, {});
}

std::vector<double> Model::image_logits(const std::vector<double>& chw, Trace* t) const {
    Trace local;
    Trace& tr = t ? *t : local;
    const auto feat = backbone.forward(chw, spec.image_size, spec.image_size, tr.cnn);
    tr.logits.assign(static_cast<std::size_t>(classifier.out), 0.0);
    classifier.forward(feat.data(), tr.logits.data());
    tr.head.z = feat;
    return tr.logits;
}

void Model::backward_logits(const Trace& t, const std::vector<double>& g_logits) {
    std::vector<double> g_feat(t.head.z.size(), 0.0);
    classifier.backward(t.head.z.data(), g_logits.data(), g_feat.data(), true);
    backbone.backward(t.cnn, g_feat);
}

std::vector<ParamRef> Model::params() {
    std::vector<ParamRef> p;
    if (spec.variant != Variant::B2) p = ae.params();
    if (spec.variant != Variant::B1) {
        for (auto& r : backbone.params()) p.push_back(r);
    }
    if (spec.variant == Variant::B2) {
        p.push_back({"cls.w", &classifier.w, true});
        p.push_back({"cls.b", &classifier.b, true});
    } else if (spec.variant != Variant::B1) {
        p.push_back({"head.w", &head.fc.w, true});
        p.push_back({"head.b", &head.fc.b, true});
    }
    return p;
}

std::vector<double> Model::encoder_snapshot() const {
    std::vector<double> out;
    append(out, ae.enc1.w);
    append(out, ae.enc1.b);
    append(out, ae.enc2.w);
    append(out, ae.enc2.b);
    return out;
}

std::vector<double> Model::decoder_snapshot() const {
    std::vector<double> out;
    append(out, ae.dec.w);
    append(out, ae.dec.b);
    return out;
}

void Model::zero_grad() {
    for (auto& p : params()) p.tensor->zero_grad();
}

json Model::tensors_to_json() const {
    json j = json::object();
    for (auto& p : const_cast<Model*>(this)->params()) j[p.name] = p.tensor->value;
    return j;
}

void Model::tensors_from_json(const json& j) {
    for (auto& p : params()) {
        if (!j.contains(p.name)) throw Error("checkpoint lacks tensor " + p.name);
        auto v = j.at(p.name).get<std::vector<double>>();
        if (v.size() != p.tensor->size()) {
            throw Error("checkpoint tensor " + p.name + " has " + std::to_string(v.size()) + " values, expected " +
                        std::to_string(p.tensor->size()));
        }
        p.tensor->value = std::move(v);
    }
}

// ---------------------------------------------------------------------------

void Adam::step(const std::vector<ParamRef>& params) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.tensor->size(), 0.0);
            v_.emplace_back(p.tensor->size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].trainable) continue;
        auto& val = params[k].tensor->value;
        const auto& g = params[k].tensor->grad;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < val.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            val[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

}  // namespace nsfmap
