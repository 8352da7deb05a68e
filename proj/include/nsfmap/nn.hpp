#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nsfmap/core.hpp"
#include "nsfmap/rng.hpp"

namespace nsfmap {

enum class Variant { B1, B2, P1, P2, P3, DlfKil, DlfZeroImage };
std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);
const std::vector<Variant>& all_variants();

bool uses_images(Variant v);
bool freezes_encoder(Variant v);
bool uses_penalty(Variant v);

/// Trainable tensor plus its gradient accumulator.
struct Tensor {
    std::vector<double> value;
    std::vector<double> grad;

    explicit Tensor(std::size_t n = 0) : value(n, 0.0), grad(n, 0.0) {}
    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

struct ParamRef {
    std::string name;
    Tensor* tensor;
    bool trainable;
};

/// Fully connected layer y = W x + b, W stored row-major (out x in).
struct Linear {
    int in = 0;
    int out = 0;
    Tensor w;
    Tensor b;

    Linear() = default;
    Linear(int in_dim, int out_dim);
    void init(Rng& rng);
    void forward(const double* x, double* y) const;
    /// Accumulates parameter gradients when params is true; writes dL/dx into gx when non-null.
    void backward(const double* x, const double* gy, double* gx, bool params);
};

/// 3x3 convolution, stride 1, zero padding 1, CHW layout.
struct Conv3x3 {
    int cin = 0;
    int cout = 0;
    Tensor w;  // cout x cin x 3 x 3
    Tensor b;

    Conv3x3() = default;
    Conv3x3(int in_ch, int out_ch);
    void init(Rng& rng);
    void forward(const std::vector<double>& x, int h, int w_, std::vector<double>& y) const;
    void backward(const std::vector<double>& x, int h, int w_, const std::vector<double>& gy, std::vector<double>* gx,
                  bool params);
};

struct AutoencoderDims {
    int input = 3;
    int hidden = 64;
    int latent = 128;  // 0: single hidden layer, as in the B1 baseline
    int output = 3;
    bool output_relu = true;

    static AutoencoderDims fusion() { return {}; }
    static AutoencoderDims baseline() { return {3, 10, 0, 3, false}; }
    int code_dim() const { return latent > 0 ? latent : hidden; }
};

class Autoencoder {
public:
    struct Cache {
        std::vector<double> x, h1, code, out;
    };

    AutoencoderDims dims;
    Linear enc1;
    Linear enc2;  // unused when dims.latent == 0
    Linear dec;
    bool frozen_encoder = false;

    Autoencoder() = default;
    explicit Autoencoder(const AutoencoderDims& d);
    void init(Rng& rng);

    std::vector<double> encode(const std::vector<double>& x) const;
    std::vector<double> decode(const std::vector<double>& code) const;
    void forward(const std::vector<double>& x, Cache& c) const;
    /// g_out: dL/d(decoder output); g_code: extra dL/d(code) (may be empty).
    void backward(const Cache& c, const std::vector<double>& g_out, const std::vector<double>& g_code);
    std::vector<ParamRef> params();
};

Autoencoder freeze_encoder(Autoencoder ae);

/// Desk-scale image feature extractor: three conv blocks and global average pooling.
class ConvBackbone {
public:
    struct Cache {
        int h = 0, w = 0;
        std::vector<double> x, c1, p1, c2, p2, c3;
        std::vector<int> arg1, arg2;
    };

    static constexpr int kFeatureDim = 64;
    Conv3x3 conv1{3, 8};
    Conv3x3 conv2{8, 16};
    Conv3x3 conv3{16, kFeatureDim};

    void init(Rng& rng);
    int feature_dim() const { return kFeatureDim; }
    /// chw: 3 x h x w normalized image; h and w must be >= 4.
    std::vector<double> extract(const std::vector<double>& chw, int h, int w) const;
    std::vector<double> forward(const std::vector<double>& chw, int h, int w, Cache& c) const;
    void backward(const Cache& c, const std::vector<double>& g_feat);
    std::vector<ParamRef> params();
};

/// Maps z = [image features; time-series features] to (sensor_a, sensor_b, anomaly_value).
class FusionHead {
public:
    struct Cache {
        std::vector<double> z, mask, zin;
    };

    Linear fc;
    double dropout = 0.5;

    FusionHead() = default;
    FusionHead(int img_dim, int ts_dim, double dropout_rate = 0.5);
    void init(Rng& rng) { fc.init(rng); }
    int image_dim() const { return img_dim_; }
    int ts_dim() const { return fc.in - img_dim_; }

    std::array<double, 3> fuse_predict(const std::vector<double>& ts, const std::vector<double>& img) const;
    /// rng non-null enables inverted dropout on the image slot of z.
    std::array<double, 3> forward(const std::vector<double>& ts, const std::vector<double>& img, Rng* rng,
                                  Cache& c) const;
    /// Returns (dL/d img, dL/d ts).
    std::pair<std::vector<double>, std::vector<double>> backward(const Cache& c, const std::array<double, 3>& g_out);

private:
    int img_dim_ = 0;
};

struct ModelSpec {
    Variant variant = Variant::P1;
    AutoencoderDims ae = AutoencoderDims::fusion();
    bool fuse_latent = false;
    double dropout = 0.5;
    int image_size = 224;
    int image_classes = 5;
};

/// Input for one prediction: normalized 3-vector and, for fusion states,
/// an optional normalized CHW image.
struct StepInput {
    std::vector<double> x;
    CycleState state{1};
    const std::vector<double>* image = nullptr;
};

struct StepOutput {
    std::array<double, 3> y{};
    Routing routing = Routing::TimeSeriesOnly;
    bool image_fallback = false;
};

/// Complete network for one variant. Inference is const and thread-safe.
class Model {
public:
    struct Trace {
        Autoencoder::Cache ae;
        ConvBackbone::Cache cnn;
        FusionHead::Cache head;
        bool image_used = false;
        std::vector<double> logits;
    };

    ModelSpec spec;
    Autoencoder ae;
    ConvBackbone backbone;
    FusionHead head;
    Linear classifier;  // B2 only

    Model() = default;
    explicit Model(const ModelSpec& s);
    void init(std::uint64_t seed);

    Routing route(CycleState state, bool has_image) const;
    StepOutput predict_step(const StepInput& in) const;
    StepOutput forward(const StepInput& in, Rng* dropout_rng, Trace& t) const;
    void backward(const Trace& t, const std::array<double, 3>& g_out);

    /// B2: class logits over the image classes.
    std::vector<double> image_logits(const std::vector<double>& chw, Trace* t) const;
    void backward_logits(const Trace& t, const std::vector<double>& g_logits);

    std::vector<ParamRef> params();
    std::vector<double> encoder_snapshot() const;
    std::vector<double> decoder_snapshot() const;
    void zero_grad();

    nlohmann::json tensors_to_json() const;
    void tensors_from_json(const nlohmann::json& j);
};

/// Adaptive-moment optimizer over a parameter list; skips non-trainable refs.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
    void step(const std::vector<ParamRef>& params);
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// The image classes of the FF image table, in classifier output order.
const std::vector<AnomalyClass>& image_classes();
int image_class_index(AnomalyClass c);  // -1 when not an image class

}  // namespace nsfmap
