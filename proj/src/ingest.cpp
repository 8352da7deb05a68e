#include "nsfmap/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "nsfmap/rng.hpp"

namespace nsfmap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDatasetFormat = "nsfmap-dataset";
constexpr int kDatasetVersion = 1;
constexpr double kMaxMalformedFraction = 0.05;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

double parse_number(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error("not a number in " + what + ": '" + s + "'");
    }
}

int parse_int(const std::string& s, const std::string& what) {
    const double v = parse_number(s, what);
    if (v != std::floor(v)) throw Error("not an integer in " + what + ": '" + s + "'");
    return static_cast<int>(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tabular layout
// ---------------------------------------------------------------------------

void write_dataset(const Dataset& ds, const fs::path& dir, const WriteOptions& opts) {
    ds.validate();
    fs::create_directories(dir);
    const fs::path img_dir = dir / "images";
    {
        json meta{{"format", kDatasetFormat},
                  {"version", kDatasetVersion},
                  {"sampling_rate_hz", ds.sampling_rate_hz},
                  {"sensor_names", ds.sensor_names},
                  {"samples", ds.samples.size()}};
        std::ofstream out(dir / "dataset.json");
        if (!out) throw Error("cannot write " + (dir / "dataset.json").string());
        out << meta.dump(2) << '\n';
    }
    std::ofstream out(dir / "samples.csv");
    if (!out) throw Error("cannot write " + (dir / "samples.csv").string());
    out << "cycle_id,state,step";
    for (const auto& n : ds.sensor_names) out << ',' << csv_field(n);
    out << ",label,image_ref\n";
    ImageSource renderer;
    for (const auto& s : ds.samples) {
        out << s.cycle_id << ',' << s.state.index() << ',' << s.step;
        for (double v : s.sensors) out << ',' << fmt_double(v);
        out << ',' << csv_field(std::string(to_string(s.label))) << ',';
        if (s.image_ref) {
            std::string ref = *s.image_ref;
            if (opts.materialize_images && parse_synth_ref(ref)) {
                fs::create_directories(img_dir);
                const std::string rel = "images/c" + std::to_string(s.cycle_id) + "_s" +
                                        std::to_string(s.state.index()) + "_k" + std::to_string(s.step) + ".ppm";
                write_ppm(renderer.load(ref), dir / rel);
                ref = rel;
            }
            out << csv_field(ref);
        }
        out << '\n';
    }
    if (!out) throw Error("short write: " + (dir / "samples.csv").string());
}

Dataset read_dataset(const fs::path& dir) {
    std::ifstream meta_in(dir / "dataset.json");
    if (!meta_in) throw Error("not a dataset directory (no dataset.json): " + dir.string());
    json meta;
    try {
        meta = json::parse(meta_in);
    } catch (const json::parse_error& e) {
        throw Error("malformed dataset.json: " + std::string(e.what()));
    }
    if (meta.value("format", "") != kDatasetFormat) throw Error("unexpected dataset format in " + dir.string());
    Dataset ds;
    ds.sampling_rate_hz = meta.at("sampling_rate_hz").get<double>();
    ds.sensor_names = meta.at("sensor_names").get<std::vector<std::string>>();
    const std::size_t m = ds.sensor_names.size();

    std::ifstream in(dir / "samples.csv");
    if (!in) throw Error("missing samples.csv in " + dir.string());
    std::string line;
    std::getline(in, line);
    const auto header = split_csv_line(line);
    if (header.size() != m + 5) throw Error("samples.csv header does not match dataset.json sensor list");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        const std::string where = "samples.csv line " + std::to_string(lineno);
        if (f.size() != m + 5) throw Error(where + ": expected " + std::to_string(m + 5) + " columns");
        MultimodalSample s;
        s.cycle_id = parse_int(f[0], where);
        s.state = CycleState(parse_int(f[1], where));
        s.step = parse_int(f[2], where);
        s.sensors.resize(m);
        for (std::size_t l = 0; l < m; ++l) s.sensors[l] = parse_number(f[3 + l], where);
        s.label = anomaly_class_from_string(f[3 + m]);
        if (!f[4 + m].empty()) s.image_ref = f[4 + m];
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

namespace {

std::optional<RawRecord> parse_record(const json& r, const std::string& source) {
    if (!r.is_object() || !r.contains("timestamp")) return std::nullopt;
    RawRecord rec;
    rec.source = source;
    const auto& ts = r.at("timestamp");
    if (ts.is_string()) rec.timestamp = ts.get<std::string>();
    else if (ts.is_number()) rec.timestamp = ts.dump();
    else return std::nullopt;

    auto take_values = [&](const json& obj) -> bool {
        for (const auto& [k, v] : obj.items()) {
            if (k == "timestamp" || k == "images" || k == "sensors") continue;
            if (v.is_number()) rec.values[k] = v.get<double>();
            else if (v.is_boolean()) rec.values[k] = v.get<bool>() ? 1.0 : 0.0;
            else if (v.is_null() || v.is_string()) return false;
        }
        return true;
    };
    if (r.contains("sensors")) {
        if (!r.at("sensors").is_object() || !take_values(r.at("sensors"))) return std::nullopt;
    }
    if (!take_values(r)) return std::nullopt;
    if (rec.values.empty()) return std::nullopt;
    if (r.contains("images")) {
        if (!r.at("images").is_object()) return std::nullopt;
        for (const auto& [cam, p] : r.at("images").items()) {
            if (p.is_string()) rec.images[cam] = p.get<std::string>();
            else if (!p.is_null()) return std::nullopt;
        }
    }
    return rec;
}

}  // namespace

RawTable parse_batch_documents(const std::vector<std::pair<std::string, json>>& docs) {
    RawTable table;
    std::set<std::string> schema;
    bool have_schema = false;
    for (const auto& [name, doc] : docs) {
        const json* records = &doc;
        if (doc.is_object() && doc.contains("records")) records = &doc.at("records");
        if (!records->is_array()) {
            throw Error("batch " + name + " is neither an array nor an object with 'records'");
        }
        std::size_t i = 0;
        for (const auto& r : *records) {
            ++table.total;
            auto rec = parse_record(r, name + "#" + std::to_string(i++));
            if (rec) {
                std::set<std::string> keys;
                for (const auto& [k, v] : rec->values) keys.insert(k);
                if (!have_schema) {
                    schema = keys;
                    have_schema = true;
                } else if (!std::includes(keys.begin(), keys.end(), schema.begin(), schema.end())) {
                    rec.reset();  // missing fields from the batch schema
                }
            }
            if (rec) table.records.push_back(std::move(*rec));
            else ++table.skipped;
        }
    }
    // a single bad record never trips the guard, so small batches stay usable
    const double allowed = std::max(1.0, kMaxMalformedFraction * static_cast<double>(table.total));
    if (static_cast<double>(table.skipped) > allowed) {
        throw Error("too many malformed records: " + std::to_string(table.skipped) + " of " +
                    std::to_string(table.total));
    }
    if (table.skipped > 0) {
        std::cerr << "[ingest] skipped " << table.skipped << " malformed record(s) of " << table.total << '\n';
    }
    return table;
}

RawTable parse_batches(const fs::path& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw Error("cannot read batch directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir, ec)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    if (ec) throw Error("cannot list batch directory: " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<std::pair<std::string, json>> docs;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) throw Error("cannot open batch " + f.string());
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw Error("unparseable batch " + f.string() + ": " + e.what());
        }
        docs.emplace_back(f.filename().string(), std::move(doc));
    }
    return parse_batch_documents(docs);
}

bool Predicate::holds(const RawRecord& r) const {
    auto it = r.values.find(field);
    if (it == r.values.end()) return false;
    const double v = it->second;
    if (op == "==") return v == value;
    if (op == "!=") return v != value;
    if (op == "<") return v < value;
    if (op == "<=") return v <= value;
    if (op == ">") return v > value;
    if (op == ">=") return v >= value;
    if (op == "between") return v >= value && v <= upper;
    return false;
}

namespace {

std::vector<Predicate> parse_predicates(const json& when, const std::string& where) {
    std::vector<Predicate> out;
    if (!when.is_array()) throw Error(where + ": 'when' must be an array");
    static const std::set<std::string> kOps = {"==", "!=", "<", "<=", ">", ">=", "between"};
    for (const auto& p : when) {
        Predicate pr;
        pr.field = p.at("field").get<std::string>();
        pr.op = p.value("op", "==");
        if (!kOps.count(pr.op)) throw Error(where + ": unknown operator '" + pr.op + "'");
        if (pr.op == "between") {
            const auto& b = p.at("value");
            pr.value = b.at(0).get<double>();
            pr.upper = b.at(1).get<double>();
        } else {
            pr.value = p.at("value").get<double>();
        }
        out.push_back(std::move(pr));
    }
    return out;
}

}  // namespace

StateMapping parse_state_mapping(const json& doc) {
    StateMapping m;
    try {
        m.cycle_field = doc.value("cycle_field", m.cycle_field);
        m.camera = doc.value("camera", m.camera);
        if (doc.contains("sensor_fields")) m.sensor_fields = doc.at("sensor_fields").get<std::vector<std::string>>();
        std::size_t i = 0;
        for (const auto& r : doc.at("state_rules")) {
            const auto where = "state_rules[" + std::to_string(i++) + "]";
            StateRule sr;
            sr.state = CycleState(r.at("state").get<int>()).index();
            sr.when = parse_predicates(r.value("when", json::array()), where);
            m.state_rules.push_back(std::move(sr));
        }
        i = 0;
        for (const auto& r : doc.at("anomaly_rules")) {
            const auto where = "anomaly_rules[" + std::to_string(i++) + "]";
            AnomalyRule ar;
            ar.label = anomaly_class_from_string(r.at("label").get<std::string>());
            ar.when = parse_predicates(r.value("when", json::array()), where);
            m.anomaly_rules.push_back(std::move(ar));
        }
    } catch (const json::exception& e) {
        throw Error(std::string("malformed state mapping: ") + e.what());
    }
    return m;
}

StateMapping load_state_mapping(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open state mapping: " + path.string());
    try {
        return parse_state_mapping(json::parse(in));
    } catch (const json::parse_error& e) {
        throw Error("unparseable state mapping " + path.string() + ": " + e.what());
    }
}

Dataset apply_state_mapping(const RawTable& raw, const StateMapping& map, double sampling_rate_hz) {
    Dataset ds;
    ds.sampling_rate_hz = sampling_rate_hz;
    if (!map.sensor_fields.empty()) {
        ds.sensor_names = map.sensor_fields;
    } else if (!raw.records.empty()) {
        std::set<std::string> used{map.cycle_field};
        for (const auto& r : map.state_rules)
            for (const auto& p : r.when) used.insert(p.field);
        for (const auto& r : map.anomaly_rules)
            for (const auto& p : r.when) used.insert(p.field);
        for (const auto& [k, v] : raw.records.front().values) {
            if (!used.count(k)) ds.sensor_names.push_back(k);
        }
    }
    std::map<std::pair<int, int>, int> next_step;
    for (const auto& rec : raw.records) {
        auto cyc = rec.values.find(map.cycle_field);
        if (cyc == rec.values.end() || cyc->second < 1) {
            throw Error("record " + rec.source + " has no usable cycle field '" + map.cycle_field + "'");
        }
        const StateRule* sr = nullptr;
        for (const auto& r : map.state_rules) {
            if (std::all_of(r.when.begin(), r.when.end(), [&](const Predicate& p) { return p.holds(rec); })) {
                sr = &r;
                break;
            }
        }
        if (!sr) throw Error("unmapped record " + rec.source + ": no state rule matches");
        const AnomalyRule* ar = nullptr;
        for (const auto& r : map.anomaly_rules) {
            if (std::all_of(r.when.begin(), r.when.end(), [&](const Predicate& p) { return p.holds(rec); })) {
                ar = &r;
                break;
            }
        }
        if (!ar) throw Error("unmapped record " + rec.source + ": no anomaly rule matches");
        MultimodalSample s;
        s.cycle_id = static_cast<int>(cyc->second);
        s.state = CycleState(sr->state);
        s.step = next_step[{s.cycle_id, sr->state}]++;
        s.label = ar->label;
        s.sensors.reserve(ds.sensor_names.size());
        for (const auto& name : ds.sensor_names) {
            auto v = rec.values.find(name);
            if (v == rec.values.end()) throw Error("record " + rec.source + " lacks sensor '" + name + "'");
            s.sensors.push_back(v->second);
        }
        if (auto img = rec.images.find(map.camera); img != rec.images.end()) s.image_ref = img->second;
        ds.samples.push_back(std::move(s));
    }
    std::stable_sort(ds.samples.begin(), ds.samples.end(),
                     [](const MultimodalSample& a, const MultimodalSample& b) { return key_of(a) < key_of(b); });
    return ds;
}

Dataset filter_fusion_images(Dataset ds) {
    for (auto& s : ds.samples) {
        if (!s.state.fusion_eligible()) s.image_ref.reset();
    }
    return ds;
}

std::map<std::string, CropBox> read_crop_sidecar(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open crop sidecar: " + path.string());
    std::map<std::string, CropBox> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (lineno == 1 && !f.empty() && f[0] == "path") continue;
        const auto where = path.filename().string() + " line " + std::to_string(lineno);
        if (f.size() != 5) throw Error(where + ": expected 5 columns");
        out[f[0]] = CropBox{parse_int(f[1], where), parse_int(f[2], where), parse_int(f[3], where),
                            parse_int(f[4], where)};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

std::map<int, AnomalyClass> cycle_classes(const Dataset& ds) {
    std::map<int, AnomalyClass> out;
    for (const auto& s : ds.samples) {
        auto [it, inserted] = out.emplace(s.cycle_id, s.label);
        if (!inserted && it->second == AnomalyClass::NoAnomaly) it->second = s.label;
    }
    return out;
}

std::map<AnomalyClass, double> stratum_proportions(const Dataset& ds) {
    const auto cls = cycle_classes(ds);
    std::map<AnomalyClass, double> out;
    if (ds.samples.empty()) return out;
    for (const auto& s : ds.samples) out[cls.at(s.cycle_id)] += 1.0;
    for (auto& [c, v] : out) v /= static_cast<double>(ds.samples.size());
    return out;
}

Dataset subset_cycles(const Dataset& ds, const std::vector<int>& cycle_ids) {
    const std::set<int> keep(cycle_ids.begin(), cycle_ids.end());
    Dataset out;
    out.sensor_names = ds.sensor_names;
    out.sampling_rate_hz = ds.sampling_rate_hz;
    for (const auto& s : ds.samples) {
        if (keep.count(s.cycle_id)) out.samples.push_back(s);
    }
    return out;
}

SplitResult cycle_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("train_fraction must be in (0,1)");
    const auto cls = cycle_classes(ds);
    std::map<int, std::size_t> cycle_size;
    for (const auto& s : ds.samples) ++cycle_size[s.cycle_id];

    std::map<AnomalyClass, std::vector<int>> strata;
    for (const auto& [cyc, c] : cls) strata[c].push_back(cyc);
    for (const auto& [c, cycles] : strata) {
        if (cycles.size() < 2) {
            throw Error("too few cycles to stratify: class " + std::string(to_string(c)) + " has " +
                        std::to_string(cycles.size()) + " cycle(s), need >= 2");
        }
    }
    Rng rng(seed);
    struct Stratum {
        std::vector<int> cycles;          // shuffled
        std::vector<std::size_t> prefix;  // prefix[t] = samples in first t cycles
        std::vector<int> options;         // candidate train counts
        double full_share = 0.0;
    };
    const double n_total = static_cast<double>(ds.samples.size());
    std::vector<Stratum> st;
    for (auto& [c, cycles] : strata) {
        Stratum s;
        s.cycles = cycles;
        rng.shuffle(s.cycles);
        s.prefix.push_back(0);
        for (int cyc : s.cycles) s.prefix.push_back(s.prefix.back() + cycle_size[cyc]);
        s.full_share = static_cast<double>(s.prefix.back()) / n_total;
        const int n = static_cast<int>(s.cycles.size());
        const double exact = train_fraction * n;
        const int lo = std::max(1, static_cast<int>(std::floor(exact)) - 1);
        const int hi = std::min(n - 1, static_cast<int>(std::ceil(exact)) + 1);
        for (int t = lo; t <= hi; ++t) s.options.push_back(t);
        st.push_back(std::move(s));
    }

    // Exhaustive search over per-stratum train counts.
    constexpr double kTolerance = 0.02;
    std::vector<std::size_t> idx(st.size(), 0), best;
    double best_dev = INFINITY, best_frac = INFINITY;
    bool best_feasible = false;
    while (true) {
        std::size_t train_n = 0;
        for (std::size_t i = 0; i < st.size(); ++i) train_n += st[i].prefix[static_cast<std::size_t>(st[i].options[idx[i]])];
        double dev = 0.0;
        for (std::size_t i = 0; i < st.size(); ++i) {
            const double share = static_cast<double>(st[i].prefix[static_cast<std::size_t>(st[i].options[idx[i]])]) /
                                 static_cast<double>(train_n);
            dev = std::max(dev, std::abs(share - st[i].full_share));
        }
        const double frac = std::abs(static_cast<double>(train_n) / n_total - train_fraction);
        const bool feasible = dev <= kTolerance;
        bool better;
        if (feasible != best_feasible) better = feasible;
        else if (feasible) better = frac < best_frac || (frac == best_frac && dev < best_dev);
        else better = dev < best_dev || (dev == best_dev && frac < best_frac);
        if (best.empty() || better) {
            best = idx;
            best_dev = dev;
            best_frac = frac;
            best_feasible = feasible;
        }
        std::size_t k = 0;
        while (k < st.size() && ++idx[k] == st[k].options.size()) idx[k++] = 0;
        if (k == st.size()) break;
    }

    std::vector<int> train_ids, test_ids;
    for (std::size_t i = 0; i < st.size(); ++i) {
        const auto t = static_cast<std::size_t>(st[i].options[best[i]]);
        train_ids.insert(train_ids.end(), st[i].cycles.begin(), st[i].cycles.begin() + static_cast<long>(t));
        test_ids.insert(test_ids.end(), st[i].cycles.begin() + static_cast<long>(t), st[i].cycles.end());
    }
    return {subset_cycles(ds, train_ids), subset_cycles(ds, test_ids)};
}

SplitResult carve_validation(const Dataset& train, double fraction) {
    std::vector<int> ids;
    for (const auto& s : train.samples) {
        if (ids.empty() || ids.back() != s.cycle_id) ids.push_back(s.cycle_id);
    }
    if (ids.size() < 2) throw Error("need at least 2 training cycles to carve a validation set");
    const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * ids.size())), 1,
                                               ids.size() - 1);
    const std::vector<int> keep(ids.begin(), ids.end() - static_cast<long>(n_val));
    const std::vector<int> val(ids.end() - static_cast<long>(n_val), ids.end());
    return {subset_cycles(train, keep), subset_cycles(train, val)};
}

std::map<AnomalyClass, std::size_t> label_counts(const Dataset& ds) {
    std::map<AnomalyClass, std::size_t> out;
    for (const auto& s : ds.samples) ++out[s.label];
    return out;
}

std::map<AnomalyClass, std::size_t> image_label_counts(const Dataset& ds) {
    std::map<AnomalyClass, std::size_t> out;
    for (const auto& s : ds.samples) {
        if (s.image_ref) ++out[s.label];
    }
    return out;
}

}  // namespace nsfmap
