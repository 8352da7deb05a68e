#include "nsfmap/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nsfmap/rng.hpp"

namespace nsfmap {

namespace {

constexpr double kArCoeff = 0.8;
constexpr double kNoiseScale = 0.25;
constexpr double kZClip = 0.8;

struct Rgb {
    float r, g, b;
};

void fill_rect(Image& img, int cx, int cy, int side, Rgb color, double alpha) {
    const int x0 = std::max(0, cx - side / 2), y0 = std::max(0, cy - side / 2);
    const int x1 = std::min(img.width, x0 + side), y1 = std::min(img.height, y0 + side);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const float c[3] = {color.r, color.g, color.b};
            for (int k = 0; k < 3; ++k) {
                img.at(y, x, k) = static_cast<float>(img.at(y, x, k) + alpha * (c[k] - img.at(y, x, k)));
            }
        }
    }
}

}  // namespace

void GenConfig::validate() const {
    std::vector<std::string> errs;
    if (n_cycles < 2) errs.push_back("n_cycles must be >= 2");
    if (m_sensors < 2) errs.push_back("m_sensors must be >= 2");
    if (steps_per_state < 1) errs.push_back("steps_per_state must be >= 1");
    if (fusion_steps_per_state < 0) errs.push_back("fusion_steps_per_state must be >= 0");
    if (image_size < 8) errs.push_back("image_size must be >= 8");
    if (!(image_signal_strength >= 0.0 && image_signal_strength <= 1.0)) {
        errs.push_back("image_signal_strength must be in [0,1]");
    }
    if (!(sampling_rate_hz > 0.0)) errs.push_back("sampling_rate_hz must be > 0");
    if (!anomaly_mix.empty()) {
        double total = 0.0;
        for (const auto& [cls, p] : anomaly_mix) {
            if (!(p >= 0.0 && p <= 1.0)) errs.push_back("mix probability for " + std::string(to_string(cls)) + " outside [0,1]");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) errs.push_back("anomaly_mix sums to " + std::to_string(total) + ", not 1");
    }
    if (!errs.empty()) throw ValidationError(std::move(errs));
}

std::map<AnomalyClass, double> ff_table_mix() {
    const std::map<AnomalyClass, double> counts = {
        {AnomalyClass::NoAnomaly, 90844},  {AnomalyClass::NoBody1, 1849},
        {AnomalyClass::NoNose, 19307},     {AnomalyClass::NoNoseNoBody2, 25206},
        {AnomalyClass::NoNoseNoBody2NoBody1, 26628}, {AnomalyClass::NoBody2, 1078},
        {AnomalyClass::NoBody2NoBody1, 1089},
    };
    double total = 0.0;
    for (const auto& [c, n] : counts) total += n;
    std::map<AnomalyClass, double> mix;
    for (const auto& [c, n] : counts) mix[c] = n / total;
    return mix;
}

std::vector<SensorSignature> anomaly_signature(AnomalyClass c) {
    switch (c) {
        case AnomalyClass::NoAnomaly: return {};
        case AnomalyClass::NoBody1:
        case AnomalyClass::NoBody2:
        case AnomalyClass::NoBody2NoBody1: return {{0, -1}};
        case AnomalyClass::NoNose:
        case AnomalyClass::NoNoseNoBody2:
        case AnomalyClass::NoNoseNoBody2NoBody1: return {{1, +1}};
    }
    return {};
}

MissingParts missing_parts(AnomalyClass c) {
    switch (c) {
        case AnomalyClass::NoAnomaly: return {};
        case AnomalyClass::NoBody1: return {false, true, false};
        case AnomalyClass::NoNose: return {true, false, false};
        case AnomalyClass::NoNoseNoBody2: return {true, false, true};
        case AnomalyClass::NoNoseNoBody2NoBody1: return {true, true, true};
        case AnomalyClass::NoBody2: return {false, false, true};
        case AnomalyClass::NoBody2NoBody1: return {false, true, true};
    }
    return {};
}

std::vector<AnomalyClass> assign_cycle_classes(int n_cycles, const std::map<AnomalyClass, double>& mix,
                                               std::uint64_t seed) {
    struct Quota {
        AnomalyClass cls;
        int whole;
        double frac;
    };
    std::vector<Quota> q;
    int assigned = 0;
    for (const auto& [cls, p] : mix) {
        const double exact = p * n_cycles;
        const int whole = static_cast<int>(std::floor(exact));
        q.push_back({cls, whole, exact - whole});
        assigned += whole;
    }
    std::vector<std::size_t> order(q.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return q[a].frac > q[b].frac; });
    for (std::size_t i = 0; assigned < n_cycles && !order.empty(); i = (i + 1) % order.size()) {
        ++q[order[i]].whole;
        ++assigned;
    }
    std::vector<AnomalyClass> out;
    out.reserve(static_cast<std::size_t>(n_cycles));
    for (const auto& e : q) out.insert(out.end(), static_cast<std::size_t>(e.whole), e.cls);
    Rng rng(seed);
    rng.shuffle(out);
    return out;
}

std::vector<MultimodalSample> inject_anomaly(std::span<const MultimodalSample> cycle_samples, AnomalyClass cls,
                                             const ProcessOntology& onto,
                                             std::span<const std::string> sensor_names, std::uint64_t seed) {
    if (cls == AnomalyClass::NoAnomaly) throw Error("inject_anomaly: NoAnomaly is not an anomaly");
    const auto validity = onto.validity(cls);
    if (!validity || validity->valid_states.empty()) {
        throw Error("inject_anomaly: ontology has no valid states for " + std::string(to_string(cls)));
    }
    const auto signature = anomaly_signature(cls);
    for (const auto& sig : signature) {
        if (sig.sensor_index >= sensor_names.size()) throw Error("inject_anomaly: too few sensors for signature");
    }
    // Out-of-range band shared by all states: between the global bound and the
    // most extreme per-state bound, so the violation is visible without the state.
    struct Band {
        double lo, hi;
    };
    std::vector<Band> bands;
    for (const auto& sig : signature) {
        const auto& name = sensor_names[sig.sensor_index];
        const auto& ent = onto.entity(name);
        double edge = sig.direction < 0 ? INFINITY : -INFINITY;
        for (int st = 1; st <= kNumCycleStates; ++st) {
            const auto r = onto.expected_range(name, CycleState(st));
            if (!r) throw Error("inject_anomaly: no range for " + name + " in state " + std::to_string(st));
            edge = sig.direction < 0 ? std::min(edge, r->min) : std::max(edge, r->max);
        }
        const auto bound = sig.direction < 0 ? ent.global_min : ent.global_max;
        if (!bound) throw Error("inject_anomaly: " + name + " has no global bound to place anomalies against");
        const double gap = sig.direction < 0 ? edge - *bound : *bound - edge;
        if (!(gap > 0.0)) throw Error("inject_anomaly: no room outside the ranges of " + name);
        if (sig.direction < 0) bands.push_back({*bound + 0.2 * gap, *bound + 0.8 * gap});
        else bands.push_back({edge + 0.2 * gap, edge + 0.8 * gap});
    }
    Rng rng(seed);
    std::vector<MultimodalSample> out(cycle_samples.begin(), cycle_samples.end());
    for (auto& s : out) {
        if (!validity->valid_states.count(s.state.index())) continue;
        s.label = cls;
        for (std::size_t k = 0; k < signature.size(); ++k) {
            const auto l = signature[k].sensor_index;
            const auto range = onto.expected_range(sensor_names[l], s.state);
            const double half = 0.5 * (range->max - range->min);
            const double center = 0.5 * (range->max + range->min);
            const double z = half > 0 ? std::clamp((s.sensors[l] - center) / half, -kZClip, kZClip) : 0.0;
            const double u = std::clamp((z + kZClip) / (2 * kZClip) + 0.05 * rng.uniform(-1.0, 1.0), 0.0, 1.0);
            s.sensors[l] = bands[k].lo + u * (bands[k].hi - bands[k].lo);
        }
    }
    return out;
}

SyntheticImage render_synthetic_image(CycleState state, AnomalyClass cls, double strength, std::uint64_t seed,
                                      int size) {
    if (!state.fusion_eligible()) {
        throw Error("render_synthetic_image: state " + std::to_string(state.index()) + " has no camera view");
    }
    if (!(strength >= 0.0 && strength <= 1.0)) throw Error("render_synthetic_image: strength outside [0,1]");
    if (size < 8) throw Error("render_synthetic_image: size must be >= 8");

    Image img(size, size);
    for (int y = 0; y < size; ++y) {
        const float g = 0.25f + 0.2f * static_cast<float>(y) / static_cast<float>(size - 1);
        for (int x = 0; x < size; ++x) {
            img.at(y, x, 0) = g;
            img.at(y, x, 1) = g + 0.02f;
            img.at(y, x, 2) = g + 0.04f;
        }
    }
    // Pose differs between the two camera states.
    const int dx = state.index() == 9 ? size / 8 : 0;
    const int dy = state.index() == 9 ? -size / 16 : 0;
    const int side = std::max(3, size / 5);
    const int cx = size / 2 + dx;
    auto row = [&](double f) { return static_cast<int>(f * size) + dy; };

    const MissingParts miss = missing_parts(cls);
    const double absent = 1.0 - strength;  // marker contrast left for a missing part
    fill_rect(img, cx, row(0.85), side, {0.95f, 0.9f, 0.1f}, 1.0);  // fins, always present
    fill_rect(img, cx, row(0.65), side, {0.15f, 0.85f, 0.2f}, miss.body1 ? absent : 1.0);
    fill_rect(img, cx, row(0.45), side, {0.2f, 0.3f, 0.95f}, miss.body2 ? absent : 1.0);
    fill_rect(img, cx, row(0.25), side, {0.9f, 0.15f, 0.15f}, miss.nose ? absent : 1.0);

    Rng rng(seed);
    for (auto& v : img.data) {
        const double noisy = std::clamp(v + 0.03 * rng.normal(), 0.0, 1.0);
        v = static_cast<float>(std::round(noisy * 255.0) / 255.0);
    }
    return {std::move(img), state, cls};
}

Dataset generate_dataset(const GenConfig& cfg, const ProcessOntology& onto) {
    cfg.validate();
    const auto mix = cfg.anomaly_mix.empty() ? ff_table_mix() : cfg.anomaly_mix;
    const auto all_sensors = onto.sensor_ids();
    if (static_cast<int>(all_sensors.size()) < cfg.m_sensors) {
        throw Error("ontology defines " + std::to_string(all_sensors.size()) + " sensors, generator needs " +
                    std::to_string(cfg.m_sensors));
    }
    Dataset ds;
    ds.sensor_names.assign(all_sensors.begin(), all_sensors.begin() + cfg.m_sensors);
    ds.sampling_rate_hz = cfg.sampling_rate_hz;

    const auto classes = assign_cycle_classes(cfg.n_cycles, mix, mix_seed(cfg.seed, 1));
    const std::size_t m = ds.sensor_names.size();

    for (int c = 1; c <= cfg.n_cycles; ++c) {
        Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(c)));
        std::vector<MultimodalSample> cycle;
        for (int st = 1; st <= kNumCycleStates; ++st) {
            const CycleState state(st);
            std::vector<SensorRange> ranges;
            for (const auto& name : ds.sensor_names) {
                auto r = onto.expected_range(name, state);
                if (!r) throw Error("generator needs a range for " + name + " in state " + std::to_string(st));
                ranges.push_back(*r);
            }
            std::vector<double> z(m);
            for (auto& zi : z) zi = std::clamp(kNoiseScale * rng.normal(), -kZClip, kZClip);
            const int steps = state.fusion_eligible() ? cfg.fusion_steps() : cfg.steps_per_state;
            for (int k = 0; k < steps; ++k) {
                MultimodalSample s;
                s.cycle_id = c;
                s.state = state;
                s.step = k;
                s.sensors.resize(m);
                for (std::size_t l = 0; l < m; ++l) {
                    if (k > 0) {
                        z[l] = std::clamp(kArCoeff * z[l] + std::sqrt(1 - kArCoeff * kArCoeff) * kNoiseScale * rng.normal(),
                                          -kZClip, kZClip);
                    }
                    const double half = 0.5 * (ranges[l].max - ranges[l].min);
                    s.sensors[l] = 0.5 * (ranges[l].max + ranges[l].min) + half * z[l];
                }
                cycle.push_back(std::move(s));
            }
        }
        const AnomalyClass cls = classes[static_cast<std::size_t>(c - 1)];
        if (cls != AnomalyClass::NoAnomaly) {
            cycle = inject_anomaly(cycle, cls, onto, ds.sensor_names, mix_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(c)));
        }
        for (auto& s : cycle) {
            if (!s.state.fusion_eligible()) continue;
            const auto img_seed = mix_seed(cfg.seed, (static_cast<std::uint64_t>(c) << 24) ^
                                                         (static_cast<std::uint64_t>(s.state.index()) << 16) ^
                                                         static_cast<std::uint64_t>(s.step));
            s.image_ref = format_synth_ref({s.state.index(), s.label, cfg.image_signal_strength, img_seed, cfg.image_size});
        }
        ds.samples.insert(ds.samples.end(), std::make_move_iterator(cycle.begin()), std::make_move_iterator(cycle.end()));
    }
    ds.validate();
    return ds;
}

Dataset generate_dataset(const GenConfig& cfg) { return generate_dataset(cfg, default_ff_ontology()); }

}  // namespace nsfmap
