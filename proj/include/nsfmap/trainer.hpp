#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nsfmap/core.hpp"
#include "nsfmap/image.hpp"
#include "nsfmap/loss.hpp"
#include "nsfmap/nn.hpp"
#include "nsfmap/ontology.hpp"

namespace nsfmap {

enum class LabelInput { Masked, Observed };
std::string_view to_string(LabelInput l);
LabelInput label_input_from_string(std::string_view s);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 0.001;
    int plateau_patience = 5;
    double plateau_factor = 0.1;
    double improvement_threshold = 1e-8;
    bool early_stopping = true;
    int early_stopping_patience = 10;
    std::array<double, 3> image_mean{0.485, 0.456, 0.406};
    std::array<double, 3> image_std{0.229, 0.224, 0.225};
    int image_resize = 224;
    std::uint64_t seed = 42;
    PenaltyConfig penalty;
    bool fuse_latent = false;
    LabelInput label_input = LabelInput::Masked;
    /// Joint warm-up epochs before the encoder is frozen (P2, P3).
    int pretrain_epochs = 5;
    double dropout = 0.5;
    /// Input sensors; empty selects the top two by |correlation| with the label.
    std::vector<std::string> sensors;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::vector<EpochRecord> pretrain;
    int best_epoch = 0;  // 1-based; 0 when no epoch ran
    bool stopped_early = false;
};

void write_history(const TrainHistory& h, const std::filesystem::path& path);  // one JSON object per line

struct PlateauState {
    double lr = 0.001;
    double best = INFINITY;
    int bad_epochs = 0;
    int patience = 5;
    double factor = 0.1;
    double threshold = 1e-8;
};

/// Updates the schedule with one validation loss and returns the new learning rate.
double plateau_step(PlateauState& state, double val_loss);

/// Index pairs (k, k+1) inside each (cycle, state) run.
std::vector<std::pair<std::size_t, std::size_t>> next_step_pairs(const Dataset& ds);

/// Top-n sensors by absolute Pearson correlation with the encoded label (ties: dataset order).
std::vector<std::string> select_sensors(const Dataset& ds, std::size_t n = 2);

/// Per-channel z-score over (sensor_a, sensor_b, encoded label).
struct Normalizer {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stdev{1.0, 1.0, 1.0};

    double to_norm(int ch, double v) const { return (v - mean[ch]) / stdev[ch]; }
    double to_raw(int ch, double v) const { return v * stdev[ch] + mean[ch]; }
};
Normalizer fit_normalizer(const Dataset& ds, const std::vector<std::size_t>& sensor_idx);

/// Trained model plus everything needed to reproduce its inputs.
struct Checkpoint {
    static constexpr int kFormatVersion = 1;
    Model model;
    Normalizer norm;
    std::vector<std::string> sensors;
    LabelInput label_input = LabelInput::Masked;
    std::array<double, 3> image_mean{0.485, 0.456, 0.406};
    std::array<double, 3> image_std{0.229, 0.224, 0.225};
    std::uint64_t seed = 0;
    int best_epoch = 0;
    PenaltyConfig penalty;

    Variant variant() const { return model.spec.variant; }
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
    Checkpoint checkpoint;
    TrainHistory history;
    /// Encoder parameters at the moment of freezing (frozen variants only).
    std::vector<double> encoder_at_freeze;
    std::vector<double> decoder_at_freeze;
};

/// Resolves image refs to normalized CHW tensors at a fixed size. Thread-safe.
class ImageTensorCache {
public:
    ImageTensorCache(std::shared_ptr<const ImageSource> source, int size, std::array<double, 3> mean,
                     std::array<double, 3> stdev);
    const std::vector<double>& get(const std::string& ref) const;
    int size() const { return size_; }

private:
    std::shared_ptr<const ImageSource> source_;
    int size_;
    std::array<double, 3> mean_, std_;
    mutable std::mutex mu_;
    mutable std::map<std::string, std::unique_ptr<std::vector<double>>> cache_;
};

/// Trains one variant. images resolves image refs; it may be null for
/// variants that never look at images.
TrainResult train(Variant variant, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg,
                  const ProcessOntology* onto, std::shared_ptr<const ImageSource> images);

/// Inference over datasets or single samples with a trained checkpoint.
class Predictor {
public:
    Predictor(Checkpoint ck, std::shared_ptr<const ImageSource> images);

    const Checkpoint& checkpoint() const { return ck_; }
    /// Predicts the step after `current`. target supplies the true label when known.
    PredictionRecord predict_next(const MultimodalSample& current, const std::vector<std::string>& sensor_names,
                                  const MultimodalSample* target = nullptr) const;
    /// B2: classifies the sample's own image.
    PredictionRecord classify_image(const MultimodalSample& s) const;
    /// Next-step predictions over every pair (B2: every imaged sample).
    std::vector<PredictionRecord> predict_dataset(const Dataset& ds) const;

private:
    Checkpoint ck_;
    std::shared_ptr<const ImageSource> images_;
    std::unique_ptr<ImageTensorCache> tensors_;
};

}  // namespace nsfmap
