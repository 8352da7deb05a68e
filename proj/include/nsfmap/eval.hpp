#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "nsfmap/core.hpp"
#include "nsfmap/ontology.hpp"
#include "nsfmap/trainer.hpp"

namespace nsfmap {

using ConfusionMatrix = std::array<std::array<long, kNumClasses>, kNumClasses>;

/// Entry (i, j) counts samples of true class i predicted as j.
ConfusionMatrix confusion_matrix(const std::vector<AnomalyClass>& truth, const std::vector<AnomalyClass>& pred);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long support = 0;
};

struct MetricsReport {
    std::map<AnomalyClass, ClassMetrics> per_class;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    long total = 0;
};

/// Support-weighted averages; zero-support classes are left out.
MetricsReport weighted_metrics(const ConfusionMatrix& cm);
/// Metrics over records that carry a true label.
MetricsReport evaluate_records(const std::vector<PredictionRecord>& preds);
nlohmann::json to_json(const MetricsReport& m);
nlohmann::json to_json(const ConfusionMatrix& cm);

ConsistencyReport check_record(const PredictionRecord& r, const ProcessOntology& onto);
/// Share of records whose scenario is consistent.
double consistency_rate(const std::vector<PredictionRecord>& preds, const ProcessOntology& onto);

struct LambdaChoice {
    double lambda = 0.0;
    double val_consistency = 0.0;
    double val_mse = 0.0;
};

/// Trains once per lambda and keeps the run with the highest validation
/// consistency rate (ties: lower validation MSE in normalized units).
TrainResult train_lambda_sweep(Variant variant, const Dataset& train_ds, const Dataset& val_ds, TrainConfig cfg,
                               const std::vector<double>& lambdas, const ProcessOntology& onto,
                               std::shared_ptr<const ImageSource> images, std::vector<LambdaChoice>* trace = nullptr);

struct AblationConfig {
    std::vector<Variant> variants = all_variants();
    std::vector<double> splits = {0.8, 0.6};  // train fractions
    std::vector<std::uint64_t> seeds = {1};
    TrainConfig train;
    /// Non-empty: penalty variants sweep these lambdas and keep the best by validation.
    std::vector<double> lambda_sweep;
    /// Also report penalty variants under the other penalty mode.
    bool both_penalty_modes = false;
};

struct AblationCell {
    std::string variant;  // display name, e.g. "P3" or "P3[hinge]"
    double split = 0.8;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricsReport metrics;
    double consistency = 0.0;
    double lambda = 0.0;
    double runtime_seconds = 0.0;
    std::size_t test_records = 0;
};

struct Stat {
    double mean = 0.0;
    double std = 0.0;
};

struct AblationRow {
    std::string variant;
    double split = 0.8;
    int runs_ok = 0;
    int runs_failed = 0;
    Stat precision, recall, f1, accuracy, consistency, runtime;
    std::map<AnomalyClass, Stat> per_class_f1;
};

struct AblationReport {
    std::vector<std::uint64_t> seeds;
    std::vector<AblationCell> cells;
    std::vector<AblationRow> rows;
};

using ProgressFn = std::function<void(const AblationCell&)>;

AblationReport run_ablation(const Dataset& ds, const AblationConfig& cfg, const ProcessOntology& onto,
                            std::shared_ptr<const ImageSource> images, const ProgressFn& progress = {});

/// Mean and sample standard deviation (0 for a single value).
Stat mean_std(const std::vector<double>& v);

nlohmann::json to_json(const AblationReport& r);
std::string render_table(const AblationReport& r);
/// report.json, summary.csv, table.md, chart_per_class.csv, chart_splits.csv
void write_ablation(const AblationReport& r, const std::filesystem::path& dir);

}  // namespace nsfmap
