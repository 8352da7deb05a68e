#include "nsfmap/loss.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace nsfmap {

double ClassWeights::of(AnomalyClass c) const {
    auto it = w.find(c);
    return it == w.end() ? 1.0 : it->second;
}

ClassWeights class_weights(const std::map<AnomalyClass, std::size_t>& counts) {
    std::size_t total = 0, present = 0;
    for (const auto& [c, n] : counts) {
        total += n;
        if (n > 0) ++present;
    }
    if (total == 0) throw Error("class_weights: all counts are zero");
    ClassWeights out;
    for (AnomalyClass c : all_classes()) {
        auto it = counts.find(c);
        const std::size_t n = it == counts.end() ? 0 : it->second;
        out.w[c] = n > 0 ? static_cast<double>(total) / (static_cast<double>(present) * static_cast<double>(n)) : 1.0;
    }
    return out;
}

double wmse(const std::vector<double>& w, const std::vector<double>& truth, const std::vector<double>& pred) {
    if (w.size() != truth.size() || truth.size() != pred.size()) {
        throw Error("wmse: length mismatch (" + std::to_string(w.size()) + ", " + std::to_string(truth.size()) + ", " +
                    std::to_string(pred.size()) + ")");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = truth[i] - pred[i];
        s += w[i] * d * d;
    }
    return s;
}

double wmse(const ClassWeights& w, const std::vector<AnomalyClass>& labels,
            const std::vector<std::vector<double>>& truth, const std::vector<std::vector<double>>& pred) {
    if (labels.size() != truth.size() || truth.size() != pred.size()) throw Error("wmse: length mismatch");
    std::vector<double> ww, yy, pp;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (truth[i].size() != pred[i].size()) throw Error("wmse: row length mismatch at " + std::to_string(i));
        for (std::size_t j = 0; j < truth[i].size(); ++j) {
            ww.push_back(w.of(labels[i]));
            yy.push_back(truth[i][j]);
            pp.push_back(pred[i][j]);
        }
    }
    return wmse(ww, yy, pp);
}

std::string_view to_string(PenaltyMode m) { return m == PenaltyMode::Hinge ? "hinge" : "indicator"; }

PenaltyMode penalty_mode_from_string(std::string_view s) {
    if (s == "indicator") return PenaltyMode::Indicator;
    if (s == "hinge") return PenaltyMode::Hinge;
    throw Error("unknown penalty mode '" + std::string(s) + "' (indicator|hinge)");
}

void PenaltyConfig::validate() const {
    std::vector<std::string> errs;
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) errs.push_back("penalty lambda must be >= 0");
    if (!(hinge_margin_scale > 0.0)) errs.push_back("hinge_margin_scale must be > 0");
    if (!errs.empty()) throw ValidationError(std::move(errs));
}

int indicator_term(double value, double lo, double hi, bool predicted_anomaly) {
    const bool in_range = value >= lo && value <= hi;
    return (in_range && predicted_anomaly) || (!in_range && !predicted_anomaly) ? 1 : 0;
}

double hinge_term(double value, double lo, double hi, bool predicted_anomaly, double scale, double* d_value) {
    if (d_value) *d_value = 0.0;
    if (predicted_anomaly) {
        const double a = value - lo, b = hi - value;
        if (a <= 0.0 || b <= 0.0) return 0.0;
        if (d_value) *d_value = (a <= b ? 1.0 : -1.0) / scale;
        return std::min(a, b) / scale;
    }
    if (value < lo) {
        if (d_value) *d_value = -1.0 / scale;
        return (lo - value) / scale;
    }
    if (value > hi) {
        if (d_value) *d_value = 1.0 / scale;
        return (value - hi) / scale;
    }
    return 0.0;
}

long penalty_count(const std::vector<PredictionRecord>& preds, const ProcessOntology& onto) {
    long total = 0;
    for (const auto& r : preds) {
        if (r.sensor_ids.size() != r.predicted_sensors.size()) throw Error("penalty_count: sensor arity mismatch");
        const bool anomaly = r.predicted_label != AnomalyClass::NoAnomaly;
        for (std::size_t l = 0; l < r.sensor_ids.size(); ++l) {
            const auto range = onto.expected_range(r.sensor_ids[l], r.state);
            if (!range) continue;
            total += indicator_term(r.predicted_sensors[l], range->min, range->max, anomaly);
        }
    }
    return total;
}

double penalty_hinge(const std::vector<PredictionRecord>& preds, const ProcessOntology& onto,
                     const PenaltyConfig& cfg) {
    cfg.validate();
    double total = 0.0;
    for (const auto& r : preds) {
        if (r.sensor_ids.size() != r.predicted_sensors.size()) throw Error("penalty_hinge: sensor arity mismatch");
        const bool anomaly = r.predicted_label != AnomalyClass::NoAnomaly;
        for (std::size_t l = 0; l < r.sensor_ids.size(); ++l) {
            const auto range = onto.expected_range(r.sensor_ids[l], r.state);
            if (!range) continue;
            total += hinge_term(r.predicted_sensors[l], range->min, range->max, anomaly, cfg.hinge_margin_scale);
        }
    }
    return total;
}

std::vector<double> triple_mean_coefficients(const std::vector<SampleKey>& keys) {
    std::map<int, std::map<int, std::size_t>> groups;
    for (const auto& k : keys) ++groups[k.cycle_id][k.state];
    const double n_cycles = static_cast<double>(groups.size());
    std::vector<double> out;
    out.reserve(keys.size());
    for (const auto& k : keys) {
        const auto& states = groups.at(k.cycle_id);
        out.push_back(1.0 / (n_cycles * static_cast<double>(states.size()) * static_cast<double>(states.at(k.state))));
    }
    return out;
}

ObjectiveValue full_objective(const std::vector<ObjectiveItem>& items, const PenaltyConfig& cfg, bool want_grad) {
    cfg.validate();
    ObjectiveValue v;
    if (items.empty()) return v;
    std::vector<SampleKey> keys;
    keys.reserve(items.size());
    for (const auto& it : items) keys.push_back(it.key);
    const auto coef = triple_mean_coefficients(keys);
    if (want_grad) v.grad.assign(items.size(), {0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& it = items[i];
        const double c = coef[i] * it.weight;
        for (int j = 0; j < 3; ++j) {
            const double d = it.pred[static_cast<std::size_t>(j)] - it.truth[static_cast<std::size_t>(j)];
            v.wmse_term += c * d * d;
            if (want_grad) v.grad[i][static_cast<std::size_t>(j)] += 2.0 * c * d;
        }
        for (std::size_t l = 0; l < 2; ++l) {
            if (!it.ranges[l]) continue;
            const auto [lo, hi] = *it.ranges[l];
            if (cfg.mode == PenaltyMode::Indicator) {
                v.penalty += indicator_term(it.pred[l], lo, hi, it.predicted_anomaly);
            } else {
                double d = 0.0;
                v.penalty += hinge_term(it.pred[l], lo, hi, it.predicted_anomaly, cfg.hinge_margin_scale, &d);
                if (want_grad) v.grad[i][l] += cfg.lambda * d;
            }
        }
    }
    v.total = v.wmse_term + cfg.lambda * v.penalty;
    return v;
}

ObjectiveValue full_objective(const std::vector<PredictionRecord>& preds,
                              const std::vector<std::array<double, 3>>& truth, const ClassWeights& w,
                              const ProcessOntology& onto, const PenaltyConfig& cfg) {
    if (preds.size() != truth.size()) throw Error("full_objective: predictions and truth differ in length");
    std::vector<ObjectiveItem> items;
    items.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& r = preds[i];
        if (r.predicted_sensors.size() != 2 || r.sensor_ids.size() != 2) {
            throw Error("full_objective: records must carry exactly two predicted sensors");
        }
        ObjectiveItem it;
        it.key = {r.cycle_id, r.state.index(), r.step};
        it.weight = r.true_label ? w.of(*r.true_label) : 1.0;
        it.truth = truth[i];
        it.pred = {r.predicted_sensors[0], r.predicted_sensors[1], r.anomaly_value};
        for (std::size_t l = 0; l < 2; ++l) {
            if (auto range = onto.expected_range(r.sensor_ids[l], r.state)) it.ranges[l] = {range->min, range->max};
        }
        it.predicted_anomaly = r.predicted_label != AnomalyClass::NoAnomaly;
        items.push_back(it);
    }
    return full_objective(items, cfg, false);
}

}  // namespace nsfmap
