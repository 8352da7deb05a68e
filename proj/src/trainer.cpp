#include "nsfmap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "nsfmap/rng.hpp"

namespace nsfmap {

using nlohmann::json;

std::string_view to_string(LabelInput l) { return l == LabelInput::Observed ? "observed" : "masked"; }

LabelInput label_input_from_string(std::string_view s) {
    if (s == "masked") return LabelInput::Masked;
    if (s == "observed") return LabelInput::Observed;
    throw Error("unknown label_input '" + std::string(s) + "' (masked|observed)");
}

void TrainConfig::validate() const {
    std::vector<std::string> errs;
    if (epochs < 1) errs.push_back("epochs must be >= 1");
    if (batch_size < 1) errs.push_back("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) errs.push_back("learning_rate must be > 0");
    if (plateau_patience < 1) errs.push_back("plateau_patience must be >= 1");
    if (plateau_patience >= epochs && epochs > 1) errs.push_back("plateau_patience must be < epochs");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) errs.push_back("plateau_factor must be in (0,1)");
    if (!(improvement_threshold >= 0.0)) errs.push_back("improvement_threshold must be >= 0");
    if (early_stopping_patience < 1) errs.push_back("early_stopping_patience must be >= 1");
    for (double s : image_std) {
        if (!(s > 0.0)) errs.push_back("image_std entries must be > 0");
    }
    if (image_resize < 4) errs.push_back("image_resize must be >= 4");
    if (pretrain_epochs < 0) errs.push_back("pretrain_epochs must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) errs.push_back("dropout must be in [0,1)");
    if (!sensors.empty() && sensors.size() != 2) errs.push_back("exactly two input sensors are required");
    try {
        penalty.validate();
    } catch (const ValidationError& e) {
        errs.insert(errs.end(), e.violations().begin(), e.violations().end());
    }
    if (!errs.empty()) throw ValidationError(std::move(errs));
}

void write_history(const TrainHistory& h, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    auto line = [&](const EpochRecord& e, const char* phase) {
        json j{{"phase", phase},          {"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
               {"lr", e.learning_rate}, {"wall_seconds", e.wall_seconds}};
        out << j.dump() << '\n';
    };
    for (const auto& e : h.pretrain) line(e, "pretrain");
    for (const auto& e : h.epochs) line(e, "train");
    out << json{{"phase", "summary"}, {"best_epoch", h.best_epoch}, {"stopped_early", h.stopped_early}}.dump() << '\n';
}

double plateau_step(PlateauState& s, double val_loss) {
    if (!std::isfinite(val_loss)) throw Error("plateau_step: validation loss is not finite");
    if (val_loss < s.best - s.threshold) {
        s.best = val_loss;
        s.bad_epochs = 0;
    } else if (++s.bad_epochs >= s.patience) {
        s.lr *= s.factor;
        s.bad_epochs = 0;
    }
    return s.lr;
}

std::vector<std::pair<std::size_t, std::size_t>> next_step_pairs(const Dataset& ds) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i + 1 < ds.samples.size(); ++i) {
        const auto& a = ds.samples[i];
        const auto& b = ds.samples[i + 1];
        if (a.cycle_id == b.cycle_id && a.state == b.state) out.emplace_back(i, i + 1);
    }
    return out;
}

std::vector<std::string> select_sensors(const Dataset& ds, std::size_t n) {
    const std::size_t m = ds.sensor_names.size();
    if (m < n) throw Error("select_sensors: dataset has " + std::to_string(m) + " sensors, need " + std::to_string(n));
    if (ds.samples.empty()) throw Error("select_sensors: empty dataset");
    const double cnt = static_cast<double>(ds.samples.size());
    double ly = 0.0;
    for (const auto& s : ds.samples) ly += encode_anomaly_label(s.label);
    ly /= cnt;
    std::vector<std::pair<double, std::size_t>> score;
    for (std::size_t l = 0; l < m; ++l) {
        double mx = 0.0;
        for (const auto& s : ds.samples) mx += s.sensors[l];
        mx /= cnt;
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (const auto& s : ds.samples) {
            const double dx = s.sensors[l] - mx, dy = encode_anomaly_label(s.label) - ly;
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        const double r = sxx > 0.0 && syy > 0.0 ? std::abs(sxy) / std::sqrt(sxx * syy) : 0.0;
        score.emplace_back(r, l);
    }
    std::stable_sort(score.begin(), score.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::size_t> pick;
    for (std::size_t i = 0; i < n; ++i) pick.push_back(score[i].second);
    std::sort(pick.begin(), pick.end());
    std::vector<std::string> out;
    for (auto l : pick) out.push_back(ds.sensor_names[l]);
    return out;
}

Normalizer fit_normalizer(const Dataset& ds, const std::vector<std::size_t>& sensor_idx) {
    if (sensor_idx.size() != 2) throw Error("fit_normalizer: need two sensor indices");
    if (ds.samples.empty()) throw Error("fit_normalizer: empty dataset");
    Normalizer n;
    const double cnt = static_cast<double>(ds.samples.size());
    auto channel = [&](const MultimodalSample& s, int ch) {
        return ch < 2 ? s.sensors[sensor_idx[static_cast<std::size_t>(ch)]] : encode_anomaly_label(s.label);
    };
    for (int ch = 0; ch < 3; ++ch) {
        double mean = 0.0;
        for (const auto& s : ds.samples) mean += channel(s, ch);
        mean /= cnt;
        double var = 0.0;
        for (const auto& s : ds.samples) var += (channel(s, ch) - mean) * (channel(s, ch) - mean);
        const double sd = std::sqrt(var / cnt);
        n.mean[static_cast<std::size_t>(ch)] = mean;
        n.stdev[static_cast<std::size_t>(ch)] = sd > 1e-12 ? sd : 1.0;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const auto& sp = ck.model.spec;
    json manifest{
        {"variant", to_string(sp.variant)},
        {"dims",
         {{"input", sp.ae.input},
          {"hidden", sp.ae.hidden},
          {"latent", sp.ae.latent},
          {"output", sp.ae.output},
          {"output_relu", sp.ae.output_relu}}},
        {"fuse_latent", sp.fuse_latent},
        {"dropout", sp.dropout},
        {"image_size", sp.image_size},
        {"image_classes", sp.image_classes},
        {"frozen_encoder", ck.model.ae.frozen_encoder},
        {"sensors", ck.sensors},
        {"label_input", to_string(ck.label_input)},
        {"seed", ck.seed},
        {"best_epoch", ck.best_epoch},
        {"normalizer", {{"mean", ck.norm.mean}, {"std", ck.norm.stdev}}},
        {"image_mean", ck.image_mean},
        {"image_std", ck.image_std},
        {"penalty",
         {{"lambda", ck.penalty.lambda},
          {"mode", to_string(ck.penalty.mode)},
          {"hinge_margin_scale", ck.penalty.hinge_margin_scale}}},
    };
    json doc{{"format", "nsfmap-checkpoint"},
             {"version", Checkpoint::kFormatVersion},
             {"manifest", manifest},
             {"tensors", ck.model.tensors_to_json()}};
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << doc.dump() << '\n';
    if (!out) throw Error("short write: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error("malformed checkpoint " + path.string() + ": " + e.what());
    }
    if (doc.value("format", "") != "nsfmap-checkpoint") throw Error("not a checkpoint: " + path.string());
    if (doc.value("version", 0) != Checkpoint::kFormatVersion) {
        throw Error("unsupported checkpoint version in " + path.string());
    }
    try {
        const auto& m = doc.at("manifest");
        ModelSpec sp;
        sp.variant = variant_from_string(m.at("variant").get<std::string>());
        const auto& d = m.at("dims");
        sp.ae = {d.at("input").get<int>(), d.at("hidden").get<int>(), d.at("latent").get<int>(),
                 d.at("output").get<int>(), d.at("output_relu").get<bool>()};
        sp.fuse_latent = m.at("fuse_latent").get<bool>();
        sp.dropout = m.at("dropout").get<double>();
        sp.image_size = m.at("image_size").get<int>();
        sp.image_classes = m.at("image_classes").get<int>();
        Checkpoint ck;
        ck.model = Model(sp);
        ck.model.ae.frozen_encoder = m.at("frozen_encoder").get<bool>();
        ck.model.tensors_from_json(doc.at("tensors"));
        ck.sensors = m.at("sensors").get<std::vector<std::string>>();
        ck.label_input = label_input_from_string(m.at("label_input").get<std::string>());
        ck.seed = m.at("seed").get<std::uint64_t>();
        ck.best_epoch = m.at("best_epoch").get<int>();
        ck.norm.mean = m.at("normalizer").at("mean").get<std::array<double, 3>>();
        ck.norm.stdev = m.at("normalizer").at("std").get<std::array<double, 3>>();
        ck.image_mean = m.at("image_mean").get<std::array<double, 3>>();
        ck.image_std = m.at("image_std").get<std::array<double, 3>>();
        ck.penalty.lambda = m.at("penalty").at("lambda").get<double>();
        ck.penalty.mode = penalty_mode_from_string(m.at("penalty").at("mode").get<std::string>());
        ck.penalty.hinge_margin_scale = m.at("penalty").at("hinge_margin_scale").get<double>();
        return ck;
    } catch (const json::exception& e) {
        throw Error("malformed checkpoint manifest in " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

ImageTensorCache::ImageTensorCache(std::shared_ptr<const ImageSource> source, int size, std::array<double, 3> mean,
                                   std::array<double, 3> stdev)
    : source_(source ? std::move(source) : std::make_shared<const ImageSource>()),
      size_(size),
      mean_(mean),
      std_(stdev) {}

const std::vector<double>& ImageTensorCache::get(const std::string& ref) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(ref);
    if (it != cache_.end()) return *it->second;
    const Image& img = source_->load(ref);
    const Image sized = img.width == size_ && img.height == size_ ? img : resize_bilinear(img, size_, size_);
    auto t = std::make_unique<std::vector<double>>(normalize_to_chw(sized, mean_, std_));
    const auto& ref_out = *t;
    cache_.emplace(ref, std::move(t));
    return ref_out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::size_t> resolve_sensors(const Dataset& ds, const std::vector<std::string>& names) {
    std::vector<std::size_t> idx;
    for (const auto& n : names) idx.push_back(ds.sensor_index(n));
    return idx;
}

struct PairItem {
    std::vector<double> x;
    std::array<double, 3> y{};
    SampleKey key{1, 1, 0};
    CycleState state{1};
    double weight = 1.0;
    std::array<std::optional<std::pair<double, double>>, 2> ranges;
    const std::vector<double>* image = nullptr;
};

std::vector<double> model_input(const MultimodalSample& s, const std::vector<std::size_t>& idx, const Normalizer& n,
                                LabelInput li) {
    return {n.to_norm(0, s.sensors[idx[0]]), n.to_norm(1, s.sensors[idx[1]]),
            li == LabelInput::Observed ? n.to_norm(2, encode_anomaly_label(s.label)) : 0.0};
}

std::vector<PairItem> build_items(const Dataset& ds, const std::vector<std::size_t>& idx,
                                  const std::vector<std::string>& names, const Normalizer& norm, LabelInput li,
                                  const ClassWeights& w, const ProcessOntology* onto, const ImageTensorCache* images,
                                  bool use_images) {
    std::vector<PairItem> items;
    for (const auto& [i, j] : next_step_pairs(ds)) {
        const auto& a = ds.samples[i];
        const auto& b = ds.samples[j];
        PairItem it;
        it.x = model_input(a, idx, norm, li);
        it.y = {norm.to_norm(0, b.sensors[idx[0]]), norm.to_norm(1, b.sensors[idx[1]]),
                norm.to_norm(2, encode_anomaly_label(b.label))};
        it.key = key_of(b);
        it.state = b.state;
        it.weight = w.of(b.label);
        if (onto) {
            for (std::size_t l = 0; l < 2; ++l) {
                if (!onto->has_entity(names[l])) continue;
                if (auto r = onto->expected_range(names[l], b.state)) {
                    it.ranges[l] = std::make_pair(norm.to_norm(static_cast<int>(l), r->min),
                                                  norm.to_norm(static_cast<int>(l), r->max));
                }
            }
        }
        if (use_images && images && a.state.fusion_eligible() && a.image_ref) it.image = &images->get(*a.image_ref);
        items.push_back(std::move(it));
    }
    return items;
}

bool predicts_anomaly(const Normalizer& norm, double y2) {
    const double raw = norm.to_raw(2, y2);
    if (!std::isfinite(raw)) throw Error("non-finite anomaly output");
    return decode_anomaly_value(raw) != AnomalyClass::NoAnomaly;
}

double run_batch(Model& model, const std::vector<PairItem>& items, const std::size_t* idx, std::size_t n,
                 const PenaltyConfig& pc, const Normalizer& norm, Rng* drop, Adam* adam,
                 const std::vector<ParamRef>* params) {
    std::vector<Model::Trace> traces(n);
    std::vector<ObjectiveItem> obj(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& it = items[idx[k]];
        const auto out = model.forward({it.x, it.state, it.image}, drop, traces[k]);
        auto& o = obj[k];
        o.key = it.key;
        o.weight = it.weight;
        o.truth = it.y;
        o.pred = out.y;
        o.ranges = it.ranges;
        for (double v : out.y) {
            if (!std::isfinite(v)) throw Error("non-finite model output");
        }
        o.predicted_anomaly = predicts_anomaly(norm, out.y[2]);
    }
    const auto val = full_objective(obj, pc, adam != nullptr);
    if (!std::isfinite(val.total)) throw Error("non-finite loss");
    if (adam) {
        for (const auto& p : *params) p.tensor->zero_grad();
        for (std::size_t k = 0; k < n; ++k) model.backward(traces[k], val.grad[k]);
        adam->step(*params);
    }
    return val.total;
}

double run_epoch(Model& model, const std::vector<PairItem>& items, std::vector<std::size_t>& order, int batch,
                 const PenaltyConfig& pc, const Normalizer& norm, Rng* shuffle, Rng* drop, Adam* adam,
                 const std::vector<ParamRef>* params) {
    if (shuffle) shuffle->shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch)) {
        const std::size_t n = std::min(static_cast<std::size_t>(batch), order.size() - s);
        total += run_batch(model, items, order.data() + s, n, pc, norm, drop, adam, params);
        ++batches;
    }
    return batches ? total / static_cast<double>(batches) : 0.0;
}

std::vector<std::vector<double>> snapshot(Model& m) {
    std::vector<std::vector<double>> out;
    for (auto& p : m.params()) out.push_back(p.tensor->value);
    return out;
}

void restore(Model& m, const std::vector<std::vector<double>>& snap) {
    auto ps = m.params();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i].tensor->value = snap[i];
}

// Generic epoch loop with plateau schedule, early stopping and best-model restore.
template <typename EpochFn, typename ValFn>
void fit(const TrainConfig& cfg, Model& model, TrainHistory& history, EpochFn train_epoch, ValFn val_loss) {
    auto params = model.params();
    Adam adam(cfg.learning_rate);
    PlateauState plateau{cfg.learning_rate, INFINITY, 0, cfg.plateau_patience, cfg.plateau_factor,
                         cfg.improvement_threshold};
    double best = INFINITY;
    std::vector<std::vector<double>> best_params = snapshot(model);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double tl = train_epoch(adam, params, epoch);
        const double vl = val_loss();
        if (!std::isfinite(tl) || !std::isfinite(vl)) {
            throw Error("non-finite loss at epoch " + std::to_string(epoch) + " (train " + std::to_string(tl) +
                        ", val " + std::to_string(vl) + ")");
        }
        EpochRecord rec{epoch, tl, vl, adam.lr(), std::chrono::duration<double>(Clock::now() - t0).count()};
        history.epochs.push_back(rec);
        if (vl < best) {
            best = vl;
            history.best_epoch = epoch;
            best_params = snapshot(model);
        }
        adam.set_lr(plateau_step(plateau, vl));
        if (cfg.early_stopping && epoch - history.best_epoch >= cfg.early_stopping_patience && epoch < cfg.epochs) {
            history.stopped_early = true;
            break;
        }
    }
    restore(model, best_params);
}

TrainResult train_sequence(Variant variant, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg,
                           const ProcessOntology* onto, std::shared_ptr<const ImageSource> images) {
    const auto names = cfg.sensors.empty() ? select_sensors(train_ds) : cfg.sensors;
    const auto idx = resolve_sensors(train_ds, names);
    resolve_sensors(val_ds, names);
    const Normalizer norm = fit_normalizer(train_ds, idx);

    std::map<AnomalyClass, std::size_t> counts;
    for (const auto& [i, j] : next_step_pairs(train_ds)) ++counts[train_ds.samples[j].label];
    if (counts.empty()) throw Error("training split has no next-step pairs");
    const ClassWeights w = class_weights(counts);

    ModelSpec spec;
    spec.variant = variant;
    spec.ae = variant == Variant::B1 ? AutoencoderDims::baseline() : AutoencoderDims::fusion();
    spec.fuse_latent = cfg.fuse_latent && variant != Variant::B1;
    spec.dropout = cfg.dropout;
    spec.image_size = cfg.image_resize;

    TrainResult res;
    Checkpoint& ck = res.checkpoint;
    ck.model = Model(spec);
    ck.model.init(cfg.seed);
    ck.norm = norm;
    ck.sensors = names;
    ck.label_input = cfg.label_input;
    ck.image_mean = cfg.image_mean;
    ck.image_std = cfg.image_std;
    ck.seed = cfg.seed;

    const bool imgs = uses_images(variant);
    std::unique_ptr<ImageTensorCache> cache;
    if (imgs) cache = std::make_unique<ImageTensorCache>(images, cfg.image_resize, cfg.image_mean, cfg.image_std);
    const auto train_items = build_items(train_ds, idx, names, norm, cfg.label_input, w, onto, cache.get(), imgs);
    const auto val_items = build_items(val_ds, idx, names, norm, cfg.label_input, w, onto, cache.get(), imgs);
    if (val_items.empty()) throw Error("validation split has no next-step pairs");

    PenaltyConfig pc = cfg.penalty;
    if (!uses_penalty(variant)) pc.lambda = 0.0;
    ck.penalty = pc;
    PenaltyConfig warm = pc;
    warm.lambda = 0.0;

    Model& model = ck.model;
    Rng shuffle_rng(mix_seed(cfg.seed, 11));
    Rng drop_rng(mix_seed(cfg.seed, 12));
    std::vector<std::size_t> order(train_items.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> val_order(val_items.size());
    std::iota(val_order.begin(), val_order.end(), 0);

    if (freezes_encoder(variant)) {
        if (cfg.pretrain_epochs > 0) {
            auto params = model.params();
            Adam adam(cfg.learning_rate);
            for (int e = 1; e <= cfg.pretrain_epochs; ++e) {
                const auto t0 = Clock::now();
                const double tl = run_epoch(model, train_items, order, cfg.batch_size, warm, norm, &shuffle_rng,
                                            &drop_rng, &adam, &params);
                const double vl = run_epoch(model, val_items, val_order, cfg.batch_size, warm, norm, nullptr, nullptr,
                                            nullptr, nullptr);
                res.history.pretrain.push_back(
                    {e, tl, vl, adam.lr(), std::chrono::duration<double>(Clock::now() - t0).count()});
            }
        }
        model.ae = freeze_encoder(std::move(model.ae));
        res.encoder_at_freeze = model.encoder_snapshot();
        res.decoder_at_freeze = model.decoder_snapshot();
    }

    fit(
        cfg, model, res.history,
        [&](Adam& adam, const std::vector<ParamRef>& params, int) {
            return run_epoch(model, train_items, order, cfg.batch_size, pc, norm, &shuffle_rng, &drop_rng, &adam,
                             &params);
        },
        [&] {
            return run_epoch(model, val_items, val_order, cfg.batch_size, pc, norm, nullptr, nullptr, nullptr,
                             nullptr);
        });
    ck.best_epoch = res.history.best_epoch;
    return res;
}

struct ImageItem {
    const std::vector<double>* image;
    int cls;
    double weight;
};

std::vector<ImageItem> build_image_items(const Dataset& ds, const ImageTensorCache& cache,
                                         const std::map<int, double>& w) {
    std::vector<ImageItem> out;
    for (const auto& s : ds.samples) {
        if (!s.image_ref || !s.state.fusion_eligible()) continue;
        const int c = image_class_index(s.label);
        if (c < 0) continue;
        auto it = w.find(c);
        out.push_back({&cache.get(*s.image_ref), c, it == w.end() ? 1.0 : it->second});
    }
    return out;
}

double image_batch(Model& model, const std::vector<ImageItem>& items, const std::size_t* idx, std::size_t n,
                   Adam* adam, const std::vector<ParamRef>* params) {
    std::vector<Model::Trace> traces(n);
    std::vector<std::vector<double>> grads(n);
    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& it = items[idx[k]];
        auto logits = model.image_logits(*it.image, &traces[k]);
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double l : logits) z += std::exp(l - mx);
        const double logz = mx + std::log(z);
        loss += it.weight * (logz - logits[static_cast<std::size_t>(it.cls)]);
        auto& g = grads[k];
        g.resize(logits.size());
        for (std::size_t c = 0; c < logits.size(); ++c) {
            const double p = std::exp(logits[c] - logz);
            g[c] = it.weight * (p - (static_cast<int>(c) == it.cls ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw Error("non-finite loss");
    if (adam) {
        for (const auto& p : *params) p.tensor->zero_grad();
        for (std::size_t k = 0; k < n; ++k) model.backward_logits(traces[k], grads[k]);
        adam->step(*params);
    }
    return loss;
}

double image_epoch(Model& model, const std::vector<ImageItem>& items, std::vector<std::size_t>& order, int batch,
                   Rng* shuffle, Adam* adam, const std::vector<ParamRef>* params) {
    if (shuffle) shuffle->shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch)) {
        const std::size_t n = std::min(static_cast<std::size_t>(batch), order.size() - s);
        total += image_batch(model, items, order.data() + s, n, adam, params);
        ++batches;
    }
    return batches ? total / static_cast<double>(batches) : 0.0;
}

TrainResult train_image_classifier(const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg,
                                   std::shared_ptr<const ImageSource> images) {
    ModelSpec spec;
    spec.variant = Variant::B2;
    spec.image_size = cfg.image_resize;
    spec.image_classes = static_cast<int>(image_classes().size());
    TrainResult res;
    Checkpoint& ck = res.checkpoint;
    ck.model = Model(spec);
    ck.model.init(cfg.seed);
    ck.image_mean = cfg.image_mean;
    ck.image_std = cfg.image_std;
    ck.seed = cfg.seed;
    ck.penalty.lambda = 0.0;
    ck.sensors = cfg.sensors.empty() && train_ds.sensor_names.size() >= 2 ? select_sensors(train_ds) : cfg.sensors;

    ImageTensorCache cache(images, cfg.image_resize, cfg.image_mean, cfg.image_std);
    std::map<AnomalyClass, std::size_t> counts;
    for (const auto& s : train_ds.samples) {
        if (s.image_ref && s.state.fusion_eligible() && image_class_index(s.label) >= 0) ++counts[s.label];
    }
    if (counts.empty()) throw Error("B2: training split has no labelled images");
    const auto cw = class_weights(counts);
    std::map<int, double> w;
    for (const auto& [c, n] : counts) w[image_class_index(c)] = cw.of(c);
    const auto train_items = build_image_items(train_ds, cache, w);
    const auto val_items = build_image_items(val_ds, cache, w);
    if (val_items.empty()) throw Error("B2: validation split has no labelled images");

    Model& model = ck.model;
    Rng shuffle_rng(mix_seed(cfg.seed, 11));
    std::vector<std::size_t> order(train_items.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> val_order(val_items.size());
    std::iota(val_order.begin(), val_order.end(), 0);
    fit(
        cfg, model, res.history,
        [&](Adam& adam, const std::vector<ParamRef>& params, int) {
            return image_epoch(model, train_items, order, cfg.batch_size, &shuffle_rng, &adam, &params);
        },
        [&] { return image_epoch(model, val_items, val_order, cfg.batch_size, nullptr, nullptr, nullptr); });
    ck.best_epoch = res.history.best_epoch;
    return res;
}

}  // namespace

TrainResult train(Variant variant, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg,
                  const ProcessOntology* onto, std::shared_ptr<const ImageSource> images) {
    cfg.validate();
    if (uses_penalty(variant) && !onto) {
        throw Error("variant " + std::string(to_string(variant)) + " needs an ontology for its penalty term");
    }
    if (train_ds.sensor_names != val_ds.sensor_names) throw Error("train and validation sensor schemas differ");
    if (variant == Variant::B2) return train_image_classifier(train_ds, val_ds, cfg, std::move(images));
    return train_sequence(variant, train_ds, val_ds, cfg, onto, std::move(images));
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

Predictor::Predictor(Checkpoint ck, std::shared_ptr<const ImageSource> images)
    : ck_(std::move(ck)), images_(std::move(images)) {
    if (uses_images(ck_.variant())) {
        tensors_ = std::make_unique<ImageTensorCache>(images_, ck_.model.spec.image_size, ck_.image_mean,
                                                      ck_.image_std);
    }
}

PredictionRecord Predictor::predict_next(const MultimodalSample& current, const std::vector<std::string>& sensor_names,
                                         const MultimodalSample* target) const {
    if (ck_.variant() == Variant::B2) throw Error("B2 checkpoints classify images; they do not forecast");
    std::vector<std::size_t> idx;
    for (const auto& n : ck_.sensors) {
        auto it = std::find(sensor_names.begin(), sensor_names.end(), n);
        if (it == sensor_names.end()) throw Error("input lacks sensor '" + n + "' required by the checkpoint");
        idx.push_back(static_cast<std::size_t>(it - sensor_names.begin()));
    }
    if (current.sensors.size() != sensor_names.size()) throw Error("sample sensor count does not match schema");
    StepInput in{model_input(current, idx, ck_.norm, ck_.label_input), current.state, nullptr};
    if (tensors_ && current.state.fusion_eligible() && current.image_ref) in.image = &tensors_->get(*current.image_ref);
    const auto out = ck_.model.predict_step(in);

    PredictionRecord r;
    r.cycle_id = current.cycle_id;
    r.state = current.state;
    r.step = target ? target->step : current.step + 1;
    r.sensor_ids = ck_.sensors;
    r.predicted_sensors = {ck_.norm.to_raw(0, out.y[0]), ck_.norm.to_raw(1, out.y[1])};
    r.anomaly_value = ck_.norm.to_raw(2, out.y[2]);
    if (!std::isfinite(r.anomaly_value)) throw Error("model produced a non-finite anomaly value");
    r.predicted_label = decode_anomaly_value(r.anomaly_value);
    if (target) r.true_label = target->label;
    r.routing = out.routing;
    r.image_fallback = out.image_fallback;
    return r;
}

PredictionRecord Predictor::classify_image(const MultimodalSample& s) const {
    if (ck_.variant() != Variant::B2) throw Error("classify_image needs a B2 checkpoint");
    if (!s.image_ref) throw Error("sample has no image");
    const auto logits = ck_.model.image_logits(tensors_->get(*s.image_ref), nullptr);
    const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    PredictionRecord r;
    r.cycle_id = s.cycle_id;
    r.state = s.state;
    r.step = s.step;
    r.predicted_label = image_classes()[best];
    r.anomaly_value = encode_anomaly_label(r.predicted_label);
    r.true_label = s.label;
    r.routing = Routing::ImageOnly;
    return r;
}

std::vector<PredictionRecord> Predictor::predict_dataset(const Dataset& ds) const {
    std::vector<PredictionRecord> out;
    if (ck_.variant() == Variant::B2) {
        for (const auto& s : ds.samples) {
            if (s.image_ref && s.state.fusion_eligible()) out.push_back(classify_image(s));
        }
        return out;
    }
    for (const auto& [i, j] : next_step_pairs(ds)) {
        out.push_back(predict_next(ds.samples[i], ds.sensor_names, &ds.samples[j]));
    }
    return out;
}

}  // namespace nsfmap
