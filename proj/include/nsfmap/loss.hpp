#pragma once

#include <array>
#include <map>
#include <optional>
#include <vector>

#include "nsfmap/core.hpp"
#include "nsfmap/ontology.hpp"

namespace nsfmap {

struct ClassWeights {
    std::map<AnomalyClass, double> w;
    /// Weight of a class; absent classes weigh 1.
    double of(AnomalyClass c) const;
};

/// w_c = N / (K_present * count_c); classes with zero count get 1.
ClassWeights class_weights(const std::map<AnomalyClass, std::size_t>& counts);

/// sum_i w_i (y_i - p_i)^2
double wmse(const std::vector<double>& w, const std::vector<double>& truth, const std::vector<double>& pred);
/// Per-sample weights resolved from true labels, applied to every component of the sample.
double wmse(const ClassWeights& w, const std::vector<AnomalyClass>& labels,
            const std::vector<std::vector<double>>& truth, const std::vector<std::vector<double>>& pred);

enum class PenaltyMode { Indicator, Hinge };
std::string_view to_string(PenaltyMode m);
PenaltyMode penalty_mode_from_string(std::string_view s);

struct PenaltyConfig {
    double lambda = 1.0;
    PenaltyMode mode = PenaltyMode::Indicator;
    double hinge_margin_scale = 1.0;
    void validate() const;
};

/// One indicator term: in range with an anomaly label, or out of range with a normal label.
int indicator_term(double value, double lo, double hi, bool predicted_anomaly);
/// Rectified distance-to-violation, divided by scale. d_value receives the derivative when non-null.
double hinge_term(double value, double lo, double hi, bool predicted_anomaly, double scale, double* d_value = nullptr);

/// Double indicator sum over records and ranged sensors.
long penalty_count(const std::vector<PredictionRecord>& preds, const ProcessOntology& onto);
double penalty_hinge(const std::vector<PredictionRecord>& preds, const ProcessOntology& onto,
                     const PenaltyConfig& cfg);

/// One output row of a batch, in the units the ranges are given in.
struct ObjectiveItem {
    SampleKey key{1, 1, 0};
    double weight = 1.0;
    std::array<double, 3> truth{};
    std::array<double, 3> pred{};
    /// Ranges for the two sensor components; nullopt means unevaluable.
    std::array<std::optional<std::pair<double, double>>, 2> ranges;
    bool predicted_anomaly = false;
};

struct ObjectiveValue {
    double total = 0.0;
    double wmse_term = 0.0;
    double penalty = 0.0;  // P before scaling by lambda
    std::vector<std::array<double, 3>> grad;  // dL/dpred, filled on request
};

/// Per-item coefficients of the cycle -> state -> step triple mean.
std::vector<double> triple_mean_coefficients(const std::vector<SampleKey>& keys);

/// Triple-mean weighted squared error plus lambda * P (P summed over the items).
ObjectiveValue full_objective(const std::vector<ObjectiveItem>& items, const PenaltyConfig& cfg,
                              bool want_grad = false);

/// Convenience form over prediction records: truth rows align with preds and
/// carry (sensor_a, sensor_b, encoded label); ranges come from the ontology.
ObjectiveValue full_objective(const std::vector<PredictionRecord>& preds,
                              const std::vector<std::array<double, 3>>& truth, const ClassWeights& w,
                              const ProcessOntology& onto, const PenaltyConfig& cfg);

}  // namespace nsfmap
