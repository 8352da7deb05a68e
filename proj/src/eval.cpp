#include "nsfmap/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "nsfmap/ingest.hpp"
#include "nsfmap/rng.hpp"

namespace nsfmap {

using nlohmann::json;

ConfusionMatrix confusion_matrix(const std::vector<AnomalyClass>& truth, const std::vector<AnomalyClass>& pred) {
    if (truth.size() != pred.size()) {
        throw Error("confusion_matrix: " + std::to_string(truth.size()) + " truths vs " + std::to_string(pred.size()) +
                    " predictions");
    }
    ConfusionMatrix cm{};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++cm[static_cast<std::size_t>(ordinal(truth[i]))][static_cast<std::size_t>(ordinal(pred[i]))];
    }
    return cm;
}

MetricsReport weighted_metrics(const ConfusionMatrix& cm) {
    MetricsReport r;
    long diag = 0;
    std::array<long, kNumClasses> row{}, col{};
    for (int i = 0; i < kNumClasses; ++i) {
        for (int j = 0; j < kNumClasses; ++j) {
            const long v = cm[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (v < 0) throw Error("weighted_metrics: negative count in confusion matrix");
            row[static_cast<std::size_t>(i)] += v;
            col[static_cast<std::size_t>(j)] += v;
            r.total += v;
            if (i == j) diag += v;
        }
    }
    if (r.total == 0) throw Error("weighted_metrics: empty confusion matrix");
    for (int i = 0; i < kNumClasses; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const long tp = cm[k][k];
        ClassMetrics m;
        m.support = row[k];
        m.precision = col[k] > 0 ? static_cast<double>(tp) / static_cast<double>(col[k]) : 0.0;
        m.recall = row[k] > 0 ? static_cast<double>(tp) / static_cast<double>(row[k]) : 0.0;
        m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        if (m.support > 0) {
            const double w = static_cast<double>(m.support) / static_cast<double>(r.total);
            r.precision += w * m.precision;
            r.recall += w * m.recall;
            r.f1 += w * m.f1;
        }
        r.per_class[class_from_ordinal(i)] = m;
    }
    r.accuracy = static_cast<double>(diag) / static_cast<double>(r.total);
    return r;
}

MetricsReport evaluate_records(const std::vector<PredictionRecord>& preds) {
    std::vector<AnomalyClass> t, p;
    for (const auto& r : preds) {
        if (!r.true_label) continue;
        t.push_back(*r.true_label);
        p.push_back(r.predicted_label);
    }
    return weighted_metrics(confusion_matrix(t, p));
}

json to_json(const MetricsReport& m) {
    json per = json::object();
    for (const auto& [c, v] : m.per_class) {
        per[std::string(to_string(c))] = {
            {"precision", v.precision}, {"recall", v.recall}, {"f1", v.f1}, {"support", v.support}};
    }
    return {{"weighted", {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"accuracy", m.accuracy}}},
            {"total", m.total},
            {"per_class", per}};
}

json to_json(const ConfusionMatrix& cm) {
    json labels = json::array();
    for (AnomalyClass c : all_classes()) labels.push_back(to_string(c));
    return {{"labels", labels}, {"matrix", cm}};
}

ConsistencyReport check_record(const PredictionRecord& r, const ProcessOntology& onto) {
    return onto.check_consistency(r.predicted_sensors, r.predicted_label, r.state, r.sensor_ids);
}

double consistency_rate(const std::vector<PredictionRecord>& preds, const ProcessOntology& onto) {
    if (preds.empty()) throw Error("consistency_rate: no predictions");
    std::size_t ok = 0;
    for (const auto& r : preds) {
        if (check_record(r, onto).scenario == Scenario::Consistent) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(preds.size());
}

namespace {

double normalized_mse(const Checkpoint& ck, const std::vector<PredictionRecord>& preds, const Dataset& ds) {
    const auto pairs = next_step_pairs(ds);
    if (pairs.size() != preds.size() || preds.empty()) return 0.0;
    std::vector<std::size_t> idx;
    for (const auto& n : ck.sensors) idx.push_back(ds.sensor_index(n));
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& t = ds.samples[pairs[i].second];
        const double d0 = ck.norm.to_norm(0, preds[i].predicted_sensors[0]) - ck.norm.to_norm(0, t.sensors[idx[0]]);
        const double d1 = ck.norm.to_norm(1, preds[i].predicted_sensors[1]) - ck.norm.to_norm(1, t.sensors[idx[1]]);
        const double d2 = ck.norm.to_norm(2, preds[i].anomaly_value) - ck.norm.to_norm(2, encode_anomaly_label(t.label));
        s += d0 * d0 + d1 * d1 + d2 * d2;
    }
    return s / static_cast<double>(preds.size());
}

}  // namespace

TrainResult train_lambda_sweep(Variant variant, const Dataset& train_ds, const Dataset& val_ds, TrainConfig cfg,
                               const std::vector<double>& lambdas, const ProcessOntology& onto,
                               std::shared_ptr<const ImageSource> images, std::vector<LambdaChoice>* trace) {
    if (lambdas.empty()) throw Error("lambda sweep needs at least one lambda");
    std::optional<TrainResult> best;
    LambdaChoice best_choice;
    for (double lambda : lambdas) {
        cfg.penalty.lambda = lambda;
        auto res = train(variant, train_ds, val_ds, cfg, &onto, images);
        const Predictor pred(res.checkpoint, images);
        const auto recs = pred.predict_dataset(val_ds);
        LambdaChoice c{lambda, consistency_rate(recs, onto), normalized_mse(res.checkpoint, recs, val_ds)};
        if (trace) trace->push_back(c);
        const bool better = !best || c.val_consistency > best_choice.val_consistency ||
                            (c.val_consistency == best_choice.val_consistency && c.val_mse < best_choice.val_mse);
        if (better) {
            best = std::move(res);
            best_choice = c;
        }
    }
    return std::move(*best);
}

Stat mean_std(const std::vector<double>& v) {
    Stat s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

AblationReport run_ablation(const Dataset& ds, const AblationConfig& cfg, const ProcessOntology& onto,
                            std::shared_ptr<const ImageSource> images, const ProgressFn& progress) {
    if (cfg.seeds.empty()) throw Error("ablation needs at least one seed");
    if (cfg.variants.empty()) throw Error("ablation needs at least one variant");
    if (cfg.splits.empty()) throw Error("ablation needs at least one split");
    AblationReport rep;
    rep.seeds = cfg.seeds;

    struct Job {
        Variant variant;
        PenaltyMode mode;
        std::string name;
    };
    std::vector<Job> jobs;
    for (Variant v : cfg.variants) {
        jobs.push_back({v, cfg.train.penalty.mode, std::string(to_string(v))});
        if (cfg.both_penalty_modes && uses_penalty(v)) {
            const auto other = cfg.train.penalty.mode == PenaltyMode::Hinge ? PenaltyMode::Indicator : PenaltyMode::Hinge;
            jobs.push_back({v, other, std::string(to_string(v)) + "[" + std::string(to_string(other)) + "]"});
        }
    }

    for (double split : cfg.splits) {
        for (const auto& job : jobs) {
            for (std::uint64_t seed : cfg.seeds) {
                AblationCell cell;
                cell.variant = job.name;
                cell.split = split;
                cell.seed = seed;
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    const auto sp = cycle_split(ds, split, seed);
                    const auto tv = carve_validation(sp.train);
                    TrainConfig tc = cfg.train;
                    tc.seed = mix_seed(seed, static_cast<std::uint64_t>(split * 1000));
                    tc.penalty.mode = job.mode;
                    TrainResult res = uses_penalty(job.variant) && !cfg.lambda_sweep.empty()
                                          ? train_lambda_sweep(job.variant, tv.train, tv.test, tc, cfg.lambda_sweep,
                                                               onto, images)
                                          : train(job.variant, tv.train, tv.test, tc, &onto, images);
                    const Predictor pred(res.checkpoint, images);
                    const auto recs = pred.predict_dataset(sp.test);
                    cell.metrics = evaluate_records(recs);
                    cell.consistency = consistency_rate(recs, onto);
                    cell.lambda = res.checkpoint.penalty.lambda;
                    cell.test_records = recs.size();
                    cell.ok = true;
                } catch (const std::exception& e) {
                    cell.error = e.what();
                }
                cell.runtime_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                if (progress) progress(cell);
                rep.cells.push_back(std::move(cell));
            }
            AblationRow row;
            row.variant = job.name;
            row.split = split;
            std::vector<double> p, r, f, a, c, t;
            std::map<AnomalyClass, std::vector<double>> pc;
            for (const auto& cell : rep.cells) {
                if (cell.variant != job.name || cell.split != split) continue;
                if (!cell.ok) {
                    ++row.runs_failed;
                    continue;
                }
                ++row.runs_ok;
                p.push_back(cell.metrics.precision);
                r.push_back(cell.metrics.recall);
                f.push_back(cell.metrics.f1);
                a.push_back(cell.metrics.accuracy);
                c.push_back(cell.consistency);
                t.push_back(cell.runtime_seconds);
                for (const auto& [cls, m] : cell.metrics.per_class) pc[cls].push_back(m.f1);
            }
            row.precision = mean_std(p);
            row.recall = mean_std(r);
            row.f1 = mean_std(f);
            row.accuracy = mean_std(a);
            row.consistency = mean_std(c);
            row.runtime = mean_std(t);
            for (const auto& [cls, v] : pc) row.per_class_f1[cls] = mean_std(v);
            rep.rows.push_back(std::move(row));
        }
    }
    return rep;
}

json to_json(const AblationReport& r) {
    auto stat = [](const Stat& s) { return json{{"mean", s.mean}, {"std", s.std}}; };
    json cells = json::array();
    for (const auto& c : r.cells) {
        json j{{"variant", c.variant}, {"split", c.split},       {"seed", c.seed},
               {"ok", c.ok},           {"runtime_seconds", c.runtime_seconds}};
        if (c.ok) {
            j["metrics"] = to_json(c.metrics);
            j["consistency_rate"] = c.consistency;
            j["lambda"] = c.lambda;
            j["test_records"] = c.test_records;
        } else {
            j["error"] = c.error;
        }
        cells.push_back(std::move(j));
    }
    json rows = json::array();
    for (const auto& row : r.rows) {
        json per = json::object();
        for (const auto& [cls, s] : row.per_class_f1) per[std::string(to_string(cls))] = stat(s);
        rows.push_back({{"variant", row.variant},
                        {"split", row.split},
                        {"runs_ok", row.runs_ok},
                        {"runs_failed", row.runs_failed},
                        {"precision", stat(row.precision)},
                        {"recall", stat(row.recall)},
                        {"f1", stat(row.f1)},
                        {"accuracy", stat(row.accuracy)},
                        {"consistency_rate", stat(row.consistency)},
                        {"runtime_seconds", stat(row.runtime)},
                        {"per_class_f1", per}});
    }
    return {{"format", "nsfmap-ablation"}, {"version", 1}, {"seeds", r.seeds}, {"rows", rows}, {"cells", cells}};
}

namespace {

std::string pct(const Stat& s) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f +- %.2f", 100.0 * s.mean, 100.0 * s.std);
    return buf;
}

std::string split_name(double train) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%d/%d", static_cast<int>(std::lround(train * 100)),
                  100 - static_cast<int>(std::lround(train * 100)));
    return buf;
}

}  // namespace

std::string render_table(const AblationReport& r) {
    std::ostringstream os;
    os << "| Variant | Split | Precision (%) | Recall (%) | F1 (%) | Accuracy (%) | Consistency (%) | Runs |\n";
    os << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : r.rows) {
        os << "| " << row.variant << " | " << split_name(row.split) << " | " << pct(row.precision) << " | "
           << pct(row.recall) << " | " << pct(row.f1) << " | " << pct(row.accuracy) << " | " << pct(row.consistency)
           << " | " << row.runs_ok;
        if (row.runs_failed) os << " (" << row.runs_failed << " failed)";
        os << " |\n";
    }
    return os.str();
}

void write_ablation(const AblationReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name);
        if (!out) throw Error("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("report.json");
        out << to_json(r).dump(2) << '\n';
    }
    {
        auto out = open("summary.csv");
        out << "variant,split,runs_ok,runs_failed,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,"
               "accuracy_mean,accuracy_std,consistency_mean,consistency_std,runtime_mean,runtime_std\n";
        for (const auto& row : r.rows) {
            out << row.variant << ',' << row.split << ',' << row.runs_ok << ',' << row.runs_failed;
            for (const Stat* s : {&row.precision, &row.recall, &row.f1, &row.accuracy, &row.consistency, &row.runtime}) {
                out << ',' << s->mean << ',' << s->std;
            }
            out << '\n';
        }
    }
    {
        auto out = open("table.md");
        out << render_table(r);
    }
    {
        auto out = open("chart_per_class.csv");
        out << "variant,split,class,f1_mean,f1_std\n";
        for (const auto& row : r.rows) {
            for (const auto& [cls, s] : row.per_class_f1) {
                out << row.variant << ',' << row.split << ',' << to_string(cls) << ',' << s.mean << ',' << s.std << '\n';
            }
        }
    }
    {
        auto out = open("chart_splits.csv");
        out << "variant,split,metric,mean,std\n";
        for (const auto& row : r.rows) {
            const std::pair<const char*, const Stat*> m[] = {
                {"precision", &row.precision}, {"recall", &row.recall}, {"f1", &row.f1}, {"accuracy", &row.accuracy}};
            for (const auto& [name, s] : m) {
                out << row.variant << ',' << row.split << ',' << name << ',' << s->mean << ',' << s->std << '\n';
            }
        }
    }
}

}  // namespace nsfmap
