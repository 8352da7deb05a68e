#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nsfmap/config.hpp"
#include "nsfmap/datagen.hpp"
#include "nsfmap/eval.hpp"
#include "nsfmap/explain.hpp"
#include "nsfmap/ingest.hpp"
#include "nsfmap/stream.hpp"
#include "nsfmap/trainer.hpp"

using namespace nsfmap;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Ctx {
    std::vector<std::string> argv;
    std::string config_file;
    std::vector<std::string> sets;
    ConfigMap flags;
    std::string ontology_file;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    ResolvedConfig resolve() const {
        ConfigMap file;
        if (!config_file.empty()) file = load_config_file(config_file);
        ConfigMap cli = flags;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw Error("--set expects key=value, got '" + s + "'");
            cli[s.substr(0, eq)] = s.substr(eq + 1);
        }
        auto rc = resolve_config(file, env_config([](const char* k) { return std::getenv(k); }), cli);
        std::cerr << "resolved config (cli > env > file > default):\n" << rc.describe();
        return rc;
    }

    ProcessOntology ontology() const {
        return ontology_file.empty() ? default_ff_ontology() : load_ontology(ontology_file);
    }

    RunManifest manifest(const std::string& command, const ResolvedConfig& rc) const {
        RunManifest m;
        m.command = command;
        m.argv = argv;
        m.config = rc;
        m.version = nsfmap_version();
        if (!config_file.empty()) m.input_hashes[config_file] = sha256_path(config_file);
        if (!ontology_file.empty()) m.input_hashes[ontology_file] = sha256_path(ontology_file);
        return m;
    }

    void finish(RunManifest& m, const fs::path& dir) const {
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_manifest(m, dir / "manifest.json");
        std::cerr << "wrote " << (dir / "manifest.json").string() << "\n";
    }
};

void add_config_opts(CLI::App* sub, Ctx& ctx) {
    sub->add_option("--config", ctx.config_file, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", ctx.sets, "override a config key (key=value), repeatable");
}

void add_ontology_opt(CLI::App* sub, Ctx& ctx) {
    sub->add_option("--ontology", ctx.ontology_file, "ontology document (default: built-in FF ontology)")
        ->check(CLI::ExistingFile);
}

// flag that writes straight into a config key
void key_flag(CLI::App* sub, Ctx& ctx, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&ctx, key](const std::string& v) { ctx.flags[key] = v; }, help);
}

std::shared_ptr<const ImageSource> open_images(const fs::path& data_dir) {
    std::map<std::string, CropBox> crops;
    if (fs::exists(data_dir / "crops.csv")) crops = read_crop_sidecar(data_dir / "crops.csv");
    return std::make_shared<const ImageSource>(data_dir, std::move(crops));
}

std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

void write_json(const json& j, const fs::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("unparseable " + p.string() + ": " + e.what());
    }
}

std::vector<int> cycle_ids(const Dataset& ds) {
    std::vector<int> ids;
    for (const auto& s : ds.samples) {
        if (ids.empty() || ids.back() != s.cycle_id) ids.push_back(s.cycle_id);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

// Restricts ds to one part of a split.json written by `train`.
Dataset select_part(const Dataset& ds, const std::string& split_file, const std::string& part) {
    if (split_file.empty()) {
        if (part != "all") throw Error("--part " + part + " needs --split");
        return ds;
    }
    if (part == "all") return ds;
    const auto j = read_json(split_file);
    if (!j.contains(part)) throw Error("split file has no part '" + part + "' (train|validation|test|all)");
    return subset_cycles(ds, j.at(part).get<std::vector<int>>());
}

std::string class_table(const Dataset& ds) {
    const auto counts = label_counts(ds);
    const auto img = image_label_counts(ds);
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-26s %10s %9s %14s\n", "class", "samples", "share", "image samples");
    os << line;
    for (auto c : all_classes()) {
        const auto n = counts.count(c) ? counts.at(c) : 0;
        const auto m = img.count(c) ? img.at(c) : 0;
        const double share = ds.samples.empty() ? 0.0 : 100.0 * static_cast<double>(n) / ds.samples.size();
        std::snprintf(line, sizeof line, "%-26s %10zu %8.2f%% %14zu\n", std::string(to_string(c)).c_str(), n, share, m);
        os << line;
    }
    std::size_t img_total = 0;
    for (const auto& [_, n] : img) img_total += n;
    std::snprintf(line, sizeof line, "%-26s %10zu %9s %14zu\n", "Total", ds.samples.size(), "", img_total);
    os << line;
    return os.str();
}

// ---------------------------------------------------------------------------

int cmd_gen(Ctx& ctx, const fs::path& out) {
    const auto rc = ctx.resolve();
    const auto g = gen_config_from(rc);
    const auto ds = generate_dataset(g, ctx.ontology());
    write_dataset(ds, out);
    auto m = ctx.manifest("gen", rc);
    m.seeds["seed"] = g.seed;
    m.artifacts = {(out / "dataset.json").string(), (out / "samples.csv").string(), (out / "images").string()};
    ctx.finish(m, out);
    std::cerr << "generated " << ds.samples.size() << " samples in " << g.n_cycles << " cycles\n";
    return 0;
}

int cmd_ingest(Ctx& ctx, const fs::path& source, const fs::path& mapping, const std::string& crops_file,
               const std::string& camera, const fs::path& out) {
    const auto rc = ctx.resolve();
    auto map = load_state_mapping(mapping);
    if (!camera.empty()) map.camera = camera;
    const auto raw = parse_batches(source);
    Dataset ds = filter_fusion_images(apply_state_mapping(raw, map, rc.get_double("sampling_rate_hz")));
    auto absolute = [&](const std::string& ref) {
        fs::path p(ref);
        return (p.is_relative() ? fs::absolute(source / p) : p).lexically_normal().string();
    };
    for (auto& s : ds.samples) {
        if (s.image_ref) s.image_ref = absolute(*s.image_ref);
    }
    fs::create_directories(out);
    write_dataset(ds, out);
    std::vector<std::string> artifacts = {(out / "dataset.json").string(), (out / "samples.csv").string()};
    if (!crops_file.empty()) {
        std::ofstream c(out / "crops.csv", std::ios::trunc);
        c << "path,x_min,y_min,x_max,y_max\n";
        for (const auto& [ref, box] : read_crop_sidecar(crops_file)) {
            c << absolute(ref) << ',' << box.x_min << ',' << box.y_min << ',' << box.x_max << ',' << box.y_max << '\n';
        }
        artifacts.push_back((out / "crops.csv").string());
    }

    json summary;
    summary["total"] = ds.samples.size();
    summary["skipped_records"] = raw.skipped;
    for (const auto& [c, n] : label_counts(ds)) summary["classes"][std::string(to_string(c))] = n;
    for (const auto& [c, n] : image_label_counts(ds)) summary["image_classes"][std::string(to_string(c))] = n;
    for (double f : {0.8, 0.6}) {
        try {
            summary["split_test_samples"][num(f)] = cycle_split(ds, f, rc.get_u64("seed")).test.samples.size();
        } catch (const Error& e) {
            summary["split_test_samples"][num(f)] = nullptr;
            std::cerr << "split " << f << " not possible: " << e.what() << "\n";
        }
    }
    write_json(summary, out / "class_counts.json");
    artifacts.push_back((out / "class_counts.json").string());
    std::cout << class_table(ds);

    auto m = ctx.manifest("ingest", rc);
    m.seeds["seed"] = rc.get_u64("seed");
    m.input_hashes[source.string()] = sha256_path(source);
    m.input_hashes[mapping.string()] = sha256_path(mapping);
    if (!crops_file.empty()) m.input_hashes[crops_file] = sha256_path(crops_file);
    m.artifacts = artifacts;
    ctx.finish(m, out);
    return 0;
}

int cmd_train(Ctx& ctx, const std::string& variant_name, const fs::path& data, const fs::path& out) {
    const auto rc = ctx.resolve();
    const auto variant = variant_from_string(variant_name);
    const auto tc = train_config_from(rc);
    const auto onto = ctx.ontology();
    const Dataset ds = read_dataset(data);
    const auto split = cycle_split(ds, rc.get_double("train_fraction"), tc.seed);
    const auto tv = carve_validation(split.train, rc.get_double("validation_fraction"));
    const auto images = open_images(data);
    const auto sweep = rc.get_doubles("lambda_sweep");

    fs::create_directories(out);
    std::vector<std::string> artifacts;
    TrainResult r;
    if (!sweep.empty() && uses_penalty(variant)) {
        std::vector<LambdaChoice> trace;
        r = train_lambda_sweep(variant, tv.train, tv.test, tc, sweep, onto, images, &trace);
        json j = json::array();
        for (const auto& c : trace) {
            j.push_back({{"lambda", c.lambda}, {"val_consistency", c.val_consistency}, {"val_mse", c.val_mse}});
        }
        write_json({{"chosen", r.checkpoint.penalty.lambda}, {"candidates", j}}, out / "lambda_sweep.json");
        artifacts.push_back((out / "lambda_sweep.json").string());
    } else {
        r = train(variant, tv.train, tv.test, tc, &onto, images);
    }
    save_checkpoint(r.checkpoint, out / "checkpoint.json");
    write_history(r.history, out / "history.jsonl");
    write_json({{"train", cycle_ids(tv.train)}, {"validation", cycle_ids(tv.test)}, {"test", cycle_ids(split.test)}},
               out / "split.json");
    artifacts.insert(artifacts.begin(), {(out / "checkpoint.json").string(), (out / "history.jsonl").string(),
                                         (out / "split.json").string()});

    auto m = ctx.manifest("train", rc);
    m.seeds["seed"] = tc.seed;
    m.input_hashes[data.string()] = sha256_path(data);
    m.artifacts = artifacts;
    ctx.finish(m, out);
    std::cerr << to_string(variant) << ": best epoch " << r.history.best_epoch << " of " << r.history.epochs.size()
              << "\n";
    return 0;
}

int cmd_eval(Ctx& ctx, const fs::path& ckpt, const fs::path& data, const std::string& split_file,
             const std::string& part, const fs::path& out) {
    const auto rc = ctx.resolve();
    const auto onto = ctx.ontology();
    const Dataset ds = select_part(read_dataset(data), split_file, part);
    Predictor p(load_checkpoint(ckpt), open_images(data));
    const auto recs = p.predict_dataset(ds);
    if (recs.empty()) throw Error("no predictions for the selected data");
    std::vector<AnomalyClass> truth, pred;
    for (const auto& r : recs) {
        truth.push_back(*r.true_label);
        pred.push_back(r.predicted_label);
    }
    const auto metrics = evaluate_records(recs);
    const json doc{{"variant", to_string(p.checkpoint().variant())},
                   {"part", split_file.empty() ? std::string("all") : part},
                   {"records", recs.size()},
                   {"metrics", to_json(metrics)},
                   {"confusion", to_json(confusion_matrix(truth, pred))},
                   {"consistency_rate", consistency_rate(recs, onto)}};
    fs::create_directories(out);
    write_json(doc, out / "metrics.json");
    auto m = ctx.manifest("eval", rc);
    m.seeds["checkpoint_seed"] = p.checkpoint().seed;
    m.input_hashes[ckpt.string()] = sha256_path(ckpt);
    m.input_hashes[data.string()] = sha256_path(data);
    if (!split_file.empty()) m.input_hashes[split_file] = sha256_path(split_file);
    m.artifacts = {(out / "metrics.json").string()};
    ctx.finish(m, out);
    std::printf("weighted F1 %.4f  accuracy %.4f  consistency %.4f  (%zu records)\n", metrics.f1, metrics.accuracy,
                doc["consistency_rate"].get<double>(), recs.size());
    return 0;
}

int cmd_ablate(Ctx& ctx, const fs::path& data, const fs::path& out) {
    const auto rc = ctx.resolve();
    const auto cfg = ablation_config_from(rc);
    const auto onto = ctx.ontology();
    const Dataset ds = read_dataset(data);
    const auto report = run_ablation(ds, cfg, onto, open_images(data), [](const AblationCell& c) {
        if (c.ok) {
            std::fprintf(stderr, "%-18s split %.2f seed %llu  F1 %.4f  consistency %.4f  %.1fs\n", c.variant.c_str(),
                         c.split, static_cast<unsigned long long>(c.seed), c.metrics.f1, c.consistency,
                         c.runtime_seconds);
        } else {
            std::fprintf(stderr, "%-18s split %.2f seed %llu  FAILED: %s\n", c.variant.c_str(), c.split,
                         static_cast<unsigned long long>(c.seed), c.error.c_str());
        }
    });
    write_ablation(report, out);
    std::cout << render_table(report);
    auto m = ctx.manifest("ablate", rc);
    for (auto s : cfg.seeds) m.seeds["seed_" + std::to_string(s)] = s;
    m.input_hashes[data.string()] = sha256_path(data);
    for (const char* f : {"report.json", "summary.csv", "table.md", "chart_per_class.csv", "chart_splits.csv"}) {
        m.artifacts.push_back((out / f).string());
    }
    ctx.finish(m, out);
    return 0;
}

int cmd_explain(Ctx& ctx, const fs::path& ckpt, const fs::path& data, const std::string& split_file,
                const std::string& part, std::optional<int> cycle, std::optional<int> state, std::size_t limit,
                const std::string& format, const fs::path& out) {
    const auto rc = ctx.resolve();
    const auto fmt = render_format_from_string(format);
    const auto onto = ctx.ontology();
    Dataset ds = select_part(read_dataset(data), split_file, part);
    if (cycle) ds = subset_cycles(ds, {*cycle});
    if (state) {
        const CycleState st(*state);
        std::erase_if(ds.samples, [&](const MultimodalSample& s) { return s.state != st; });
    }
    Predictor p(load_checkpoint(ckpt), open_images(data));
    const auto recs = p.predict_dataset(ds);
    fs::create_directories(out);
    const fs::path file = out / (fmt == RenderFormat::Text ? "explanations.txt" : "explanations.jsonl");
    std::ofstream o(file, std::ios::binary | std::ios::trunc);
    if (!o) throw Error("cannot write " + file.string());
    std::size_t n = 0;
    for (const auto& r : recs) {
        if (limit && n >= limit) break;
        const auto e = explain_prediction(r, onto);
        o << render_explanation(e, fmt) << "\n";
        ++n;
    }
    auto m = ctx.manifest("explain", rc);
    m.seeds["checkpoint_seed"] = p.checkpoint().seed;
    m.input_hashes[ckpt.string()] = sha256_path(ckpt);
    m.input_hashes[data.string()] = sha256_path(data);
    m.artifacts = {file.string()};
    ctx.finish(m, out);
    std::cerr << "wrote " << n << " explanations\n";
    return 0;
}

int cmd_stream(Ctx& ctx, const fs::path& ckpt, const fs::path& data, bool test_mode, const fs::path& out) {
    const auto rc = ctx.resolve();
    auto opts = stream_options_from(rc);
    opts.test_mode = test_mode;
    const auto onto = ctx.ontology();
    const Dataset ds = read_dataset(data);
    Predictor p(load_checkpoint(ckpt), open_images(data));
    fs::create_directories(out);
    const fs::path sink = out / "stream.jsonl";
    std::ofstream o(sink, std::ios::binary | std::ios::trunc);
    if (!o) throw Error("cannot open stream sink " + sink.string());
    const auto st = replay(ds, p, onto, o, opts);
    o.close();
    write_json({{"emitted", st.emitted},
                {"errors", st.errors},
                {"dropped_deadlines", st.dropped_deadlines},
                {"max_latency_s", st.max_latency_s},
                {"mean_latency_s", st.mean_latency_s},
                {"test_mode", test_mode}},
               out / "stream_stats.json");
    auto m = ctx.manifest("stream", rc);
    m.seeds["checkpoint_seed"] = p.checkpoint().seed;
    m.input_hashes[ckpt.string()] = sha256_path(ckpt);
    m.input_hashes[data.string()] = sha256_path(data);
    m.artifacts = {sink.string(), (out / "stream_stats.json").string()};
    ctx.finish(m, out);
    std::fprintf(stderr, "emitted %zu records (%zu errors, %zu missed deadlines, max latency %.4fs)\n", st.emitted,
                 st.errors, st.dropped_deadlines, st.max_latency_s);
    return 0;
}

int cmd_validate_stream(const fs::path& file) {
    if (!fs::exists(file)) throw Error("no such file " + file.string());
    const auto rep = validate_stream_output(file);
    for (const auto& p : rep.problems) std::printf("line %zu: %s\n", p.line, p.message.c_str());
    std::printf("%zu valid, %zu invalid, %zu error records\n", rep.valid, rep.invalid, rep.error_lines);
    return rep.invalid == 0 ? 0 : 1;
}

int cmd_onto_validate(const Ctx& ctx) {
    const auto onto = ctx.ontology();
    std::printf("ok: %zu entities, %zu state bindings, %zu anomaly validity entries\n", onto.entities().size(),
                onto.bindings().size(), onto.validities().size());
    return 0;
}

int cmd_onto_query(const Ctx& ctx, const std::string& sensor, std::optional<int> state, const std::string& anomaly) {
    const auto onto = ctx.ontology();
    if (!sensor.empty()) {
        if (!state) throw Error("--sensor needs --state");
        const auto r = onto.expected_range(sensor, CycleState(*state));
        if (!r) {
            std::printf("no expected range\n");
            return 0;
        }
        std::printf("[%s, %s]\n", num(r->min).c_str(), num(r->max).c_str());
        return 0;
    }
    if (!anomaly.empty()) {
        const auto v = onto.validity(anomaly_class_from_string(anomaly));
        if (!v) {
            std::printf("%s: no validity entry\n", anomaly.c_str());
            return 0;
        }
        std::printf("%s valid in states:", std::string(to_string(v->anomaly)).c_str());
        for (int s : v->valid_states) std::printf(" %d", s);
        std::printf("\n");
        return 0;
    }
    if (!state) throw Error("query needs --sensor with --state, --state, or --anomaly");
    const CycleState st(*state);
    std::printf("state %d: %s\n", st.index(), onto.state_description(st).c_str());
    std::printf("valid anomalies:");
    for (auto c : onto.valid_anomaly_types(st)) std::printf(" %s", std::string(to_string(c)).c_str());
    std::printf("\n");
    for (const auto& b : onto.robot_functions(st)) std::printf("%s: %s\n", b.entity_id.c_str(), b.function.c_str());
    return 0;
}

int cmd_onto_update(Ctx& ctx, const std::string& sensor, int state, double lo, double hi, const fs::path& out) {
    const auto rc = ctx.resolve();
    const auto updated = ctx.ontology().update_range(sensor, CycleState(state), lo, hi);
    fs::create_directories(out);
    save_ontology(updated, (out / "ontology.json").string());
    auto m = ctx.manifest("onto update", rc);
    m.artifacts = {(out / "ontology.json").string()};
    ctx.finish(m, out);
    std::printf("%s in state %d now [%s, %s]\n", sensor.c_str(), state, num(lo).c_str(), num(hi).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    Ctx ctx;
    ctx.argv.assign(argv, argv + argc);
    CLI::App app{"nsfmap: multimodal anomaly prediction with process-ontology knowledge"};
    app.require_subcommand(1);
    std::function<int()> run;

    std::string out, data, ckpt, variant, split_file, part = "test", mapping, crops, camera, format = "text";
    std::string sensor, anomaly, file;
    std::optional<int> cycle, state;
    std::size_t limit = 0;
    bool test_mode = false;
    double lo = 0, hi = 0;

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_config_opts(gen, ctx);
    add_ontology_opt(gen, ctx);
    gen->add_option("--out", out, "output dataset directory")->required();
    key_flag(gen, ctx, "--seed", "seed", "random seed");
    key_flag(gen, ctx, "--n-cycles", "n_cycles", "number of cycles");
    key_flag(gen, ctx, "--image-strength", "image_signal_strength", "image signal strength in [0, 1]");
    gen->callback([&] { run = [&] { return cmd_gen(ctx, out); }; });

    auto* ing = app.add_subcommand("ingest", "convert FF JSON batches into the tabular dataset layout");
    add_config_opts(ing, ctx);
    ing->add_option("--source", data, "directory of JSON batch files")->required()->check(CLI::ExistingDirectory);
    ing->add_option("--mapping", mapping, "state mapping rule table")->required()->check(CLI::ExistingFile);
    ing->add_option("--crops", crops, "crop sidecar (path,x_min,y_min,x_max,y_max)")->check(CLI::ExistingFile);
    ing->add_option("--camera", camera, "camera to take frames from (default from mapping)");
    ing->add_option("--out", out, "output dataset directory")->required();
    ing->callback([&] { run = [&] { return cmd_ingest(ctx, data, mapping, crops, camera, out); }; });

    auto* tr = app.add_subcommand("train", "train one model variant");
    add_config_opts(tr, ctx);
    add_ontology_opt(tr, ctx);
    tr->add_option("--variant", variant, "B1 B2 P1 P2 P3 DLF+KIL DLF-zero-image")->required();
    tr->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--out", out, "output directory")->required();
    key_flag(tr, ctx, "--seed", "seed", "random seed");
    key_flag(tr, ctx, "--epochs", "epochs", "training epochs");
    key_flag(tr, ctx, "--lambda", "lambda", "penalty weight");
    key_flag(tr, ctx, "--lambda-sweep", "lambda_sweep", "comma list of lambdas to choose from by validation");
    tr->callback([&] { run = [&] { return cmd_train(ctx, variant, data, out); }; });

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_config_opts(ev, ctx);
    add_ontology_opt(ev, ctx);
    ev->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--split", split_file, "split.json written by train")->check(CLI::ExistingFile);
    ev->add_option("--part", part, "train, validation, test or all (with --split)");
    ev->add_option("--out", out, "output directory")->required();

    auto* ab = app.add_subcommand("ablate", "train and evaluate every variant over splits and seeds");
    add_config_opts(ab, ctx);
    add_ontology_opt(ab, ctx);
    ab->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ab->add_option("--out", out, "output directory")->required();
    key_flag(ab, ctx, "--epochs", "epochs", "training epochs per run");
    key_flag(ab, ctx, "--variants", "variants", "comma list of variants or 'all'");
    key_flag(ab, ctx, "--splits", "splits", "comma list of train fractions");
    key_flag(ab, ctx, "--seeds", "seeds", "comma list of seeds");
    key_flag(ab, ctx, "--lambda-sweep", "lambda_sweep", "comma list of lambdas for penalty variants");
    ab->callback([&] { run = [&] { return cmd_ablate(ctx, data, out); }; });

    auto* ex = app.add_subcommand("explain", "explain predictions with the ontology");
    add_config_opts(ex, ctx);
    add_ontology_opt(ex, ctx);
    ex->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    ex->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ex->add_option("--split", split_file, "split.json written by train")->check(CLI::ExistingFile);
    ex->add_option("--part", part, "train, validation, test or all (with --split)");
    ex->add_option("--cycle", cycle, "only this cycle");
    ex->add_option("--state", state, "only this cycle state");
    ex->add_option("--limit", limit, "at most this many explanations (0 = all)");
    ex->add_option("--format", format, "text or structured");
    ex->add_option("--out", out, "output directory")->required();
    ex->callback([&] {
        if (split_file.empty() && part == "test") part = "all";
        run = [&] { return cmd_explain(ctx, ckpt, data, split_file, part, cycle, state, limit, format, out); };
    });
    ev->callback([&] {
        if (split_file.empty() && part == "test") part = "all";
        run = [&] { return cmd_eval(ctx, ckpt, data, split_file, part, out); };
    });

    auto* st = app.add_subcommand("stream", "replay a dataset through model and ontology");
    add_config_opts(st, ctx);
    add_ontology_opt(st, ctx);
    st->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    st->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    st->add_option("--out", out, "output directory")->required();
    st->add_flag("--test-mode", test_mode, "no wall-clock pacing, timestamps seq / rate");
    key_flag(st, ctx, "--rate", "rate_hz", "replay rate in Hz");
    key_flag(st, ctx, "--max-samples", "max_samples", "stop after this many samples");
    st->callback([&] { run = [&] { return cmd_stream(ctx, ckpt, data, test_mode, out); }; });

    auto* vs = app.add_subcommand("validate-stream", "check a prediction stream file");
    vs->add_option("file", file, "stream.jsonl")->required();
    vs->callback([&] { run = [&] { return cmd_validate_stream(file); }; });

    auto* onto = app.add_subcommand("onto", "ontology tooling");
    onto->require_subcommand(1);
    auto* ov = onto->add_subcommand("validate", "load and validate an ontology document");
    add_ontology_opt(ov, ctx);
    ov->callback([&] { run = [&] { return cmd_onto_validate(ctx); }; });
    auto* oq = onto->add_subcommand("query", "query expected ranges, state knowledge or anomaly validity");
    add_ontology_opt(oq, ctx);
    oq->add_option("--sensor", sensor, "sensor id");
    oq->add_option("--state", state, "cycle state 1-21");
    oq->add_option("--anomaly", anomaly, "anomaly class");
    oq->callback([&] { run = [&] { return cmd_onto_query(ctx, sensor, state, anomaly); }; });
    auto* ou = onto->add_subcommand("update", "write a copy with one expected range changed");
    add_config_opts(ou, ctx);
    add_ontology_opt(ou, ctx);
    ou->add_option("--sensor", sensor, "sensor id")->required();
    int ustate = 0;
    ou->add_option("--state", ustate, "cycle state 1-21")->required();
    ou->add_option("--min", lo, "new lower bound")->required();
    ou->add_option("--max", hi, "new upper bound")->required();
    ou->add_option("--out", out, "output directory")->required();
    ou->callback([&] { run = [&] { return cmd_onto_update(ctx, sensor, ustate, lo, hi, out); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        return run();
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
