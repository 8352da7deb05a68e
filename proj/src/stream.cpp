#include "nsfmap/stream.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include "json.hpp"
#include "nsfmap/explain.hpp"
#include "nsfmap/ingest.hpp"

namespace nsfmap {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

void StreamConfig::validate() const {
    std::vector<std::string> v;
    if (!(rate_hz > 0.0) || !std::isfinite(rate_hz)) v.push_back("rate_hz must be > 0");
    if (source.empty()) v.push_back("source is required");
    if (checkpoint.empty()) v.push_back("checkpoint is required");
    if (sink.empty()) v.push_back("sink is required");
    if (queue_capacity == 0) v.push_back("queue_capacity must be >= 1");
    if (!v.empty()) throw ValidationError(v);
}

namespace {

struct Ticket {
    std::size_t index;
    Clock::time_point release;
};

class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t cap) : cap_(cap) {}

    // false when the queue was cancelled
    bool push(Ticket t) {
        std::unique_lock lk(mu_);
        not_full_.wait(lk, [&] { return q_.size() < cap_ || cancelled_; });
        if (cancelled_) return false;
        q_.push_back(t);
        not_empty_.notify_one();
        return true;
    }

    std::optional<Ticket> pop() {
        std::unique_lock lk(mu_);
        not_empty_.wait(lk, [&] { return !q_.empty() || closed_ || cancelled_; });
        if (q_.empty() || cancelled_) return std::nullopt;
        Ticket t = q_.front();
        q_.pop_front();
        not_full_.notify_one();
        return t;
    }

    void close() {
        std::lock_guard lk(mu_);
        closed_ = true;
        not_empty_.notify_all();
    }

    void cancel() {
        std::lock_guard lk(mu_);
        cancelled_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

private:
    std::size_t cap_;
    std::deque<Ticket> q_;
    bool closed_ = false;
    bool cancelled_ = false;
    std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
};

json record_line(std::size_t seq, double ts, const MultimodalSample& s, const PredictionRecord& r,
                 const ProcessOntology& onto) {
    const Explanation e = explain_prediction(r, onto);
    json sensors = json::object();
    for (std::size_t i = 0; i < r.sensor_ids.size(); ++i) sensors[r.sensor_ids[i]] = r.predicted_sensors[i];
    return json{{"schema", kStreamSchema},
                {"seq", seq},
                {"timestamp", ts},
                {"cycle", s.cycle_id},
                {"state", s.state.index()},
                {"step", s.step},
                {"target_step", r.step},
                {"predicted_sensors", sensors},
                {"anomaly_value", r.anomaly_value},
                {"predicted_class", to_string(r.predicted_label)},
                {"scenario", to_string(e.scenario)},
                {"routing", to_string(r.routing)},
                {"image_fallback", r.image_fallback},
                {"explanation", to_json(e)}};
}

json error_line(std::size_t seq, double ts, const MultimodalSample& s, const std::string& what) {
    return json{{"schema", kStreamSchema}, {"seq", seq},     {"timestamp", ts},
                {"cycle", s.cycle_id},     {"state", s.state.index()}, {"step", s.step},
                {"error", what}};
}

}  // namespace

StreamStats replay(const Dataset& ds, const Predictor& predictor, const ProcessOntology& onto, std::ostream& sink,
                   const StreamOptions& opts) {
    if (!(opts.rate_hz > 0.0)) throw Error("rate_hz must be > 0");
    if (predictor.checkpoint().variant() == Variant::B2) {
        throw Error("B2 checkpoints only classify images and cannot drive the prediction stream");
    }
    const std::size_t n = opts.max_samples ? std::min(*opts.max_samples, ds.samples.size()) : ds.samples.size();
    const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / opts.rate_hz));

    BoundedQueue queue(std::max<std::size_t>(1, opts.queue_capacity));
    const auto t0 = Clock::now();

    std::thread pacer([&] {
        auto release = t0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!opts.test_mode) {
                if (i > 0) release = std::max(release + period, Clock::now());
                std::this_thread::sleep_until(release);
                release = std::max(release, Clock::now());
            }
            if (!queue.push({i, opts.test_mode ? t0 : release})) return;
        }
        queue.close();
    });

    StreamStats st;
    double latency_sum = 0.0;
    std::exception_ptr abort;
    try {
        while (auto t = queue.pop()) {
            const auto start = Clock::now();
            const auto& s = ds.samples[t->index];
            const double ts = opts.test_mode ? static_cast<double>(t->index) / opts.rate_hz
                                             : std::chrono::duration<double>(t->release - t0).count();
            const MultimodalSample* target = nullptr;
            if (t->index + 1 < ds.samples.size()) {
                const auto& nx = ds.samples[t->index + 1];
                if (nx.cycle_id == s.cycle_id && nx.state == s.state) target = &nx;
            }
            json line;
            try {
                line = record_line(t->index, ts, s, predictor.predict_next(s, ds.sensor_names, target), onto);
            } catch (const std::exception& ex) {
                line = error_line(t->index, ts, s, ex.what());
                ++st.errors;
            }
            sink << line.dump() << '\n';
            sink.flush();
            if (!sink) throw Error("stream sink is no longer writable");
            ++st.emitted;
            const auto done = Clock::now();
            const double lat = std::chrono::duration<double>(done - start).count();
            latency_sum += lat;
            st.max_latency_s = std::max(st.max_latency_s, lat);
            if (!opts.test_mode && done > t->release + period) ++st.dropped_deadlines;
        }
    } catch (...) {
        abort = std::current_exception();
        queue.cancel();
    }
    pacer.join();
    if (abort) std::rethrow_exception(abort);
    if (st.emitted > 0) st.mean_latency_s = latency_sum / static_cast<double>(st.emitted);
    return st;
}

StreamStats replay(const StreamConfig& cfg) {
    cfg.validate();
    const Dataset ds = read_dataset(cfg.source);
    const ProcessOntology onto = cfg.ontology.empty() ? default_ff_ontology() : load_ontology(cfg.ontology.string());
    auto images = std::make_shared<const ImageSource>(cfg.source);
    Predictor predictor(load_checkpoint(cfg.checkpoint), images);
    std::ofstream out(cfg.sink, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open stream sink " + cfg.sink.string());
    StreamOptions opts;
    opts.rate_hz = cfg.rate_hz;
    opts.max_samples = cfg.max_samples;
    opts.test_mode = cfg.test_mode;
    opts.queue_capacity = cfg.queue_capacity;
    return replay(ds, predictor, onto, out, opts);
}

namespace {

std::optional<std::string> check_line(const json& j, double& last_ts, long long& last_seq, bool& is_error) {
    if (!j.is_object()) return "line is not an object";
    auto need = [&](const char* k) -> bool { return j.contains(k); };
    for (const char* k : {"schema", "seq", "timestamp", "cycle", "state", "step"}) {
        if (!need(k)) return std::string("missing field '") + k + "'";
    }
    if (!j["schema"].is_string() || j["schema"].get<std::string>() != kStreamSchema) return "unknown schema";
    if (!j["seq"].is_number_integer() || !j["timestamp"].is_number() || !j["cycle"].is_number_integer() ||
        !j["state"].is_number_integer() || !j["step"].is_number_integer()) {
        return "header field has the wrong type";
    }
    const int state = j["state"].get<int>();
    if (state < 1 || state > kNumCycleStates) return "state out of range";
    is_error = j.contains("error");
    if (is_error) {
        if (!j["error"].is_string()) return "error field must be a string";
    } else {
        for (const char* k : {"target_step", "predicted_sensors", "anomaly_value", "predicted_class", "scenario",
                              "routing", "image_fallback", "explanation"}) {
            if (!need(k)) return std::string("missing field '") + k + "'";
        }
        if (!j["predicted_sensors"].is_object()) return "predicted_sensors must be an object";
        if (!parse_anomaly_class(j["predicted_class"].get<std::string>())) return "unknown predicted_class";
        try {
            scenario_from_string(j["scenario"].get<std::string>());
            explanation_from_json(j["explanation"]);
        } catch (const std::exception& ex) {
            return std::string(ex.what());
        }
    }
    const double ts = j["timestamp"].get<double>();
    const long long seq = j["seq"].get<long long>();
    if (ts < last_ts) return "timestamp decreases";
    if (seq <= last_seq) return "seq is not increasing";
    last_ts = ts;
    last_seq = seq;
    return std::nullopt;
}

}  // namespace

StreamValidation validate_stream_lines(std::istream& in) {
    StreamValidation rep;
    std::string text;
    std::size_t lineno = 0;
    double last_ts = -INFINITY;
    long long last_seq = -1;
    while (std::getline(in, text)) {
        ++lineno;
        if (text.empty()) continue;
        std::optional<std::string> problem;
        bool is_error = false;
        try {
            problem = check_line(json::parse(text), last_ts, last_seq, is_error);
        } catch (const json::exception& ex) {
            problem = std::string("not valid JSON: ") + ex.what();
        }
        if (problem) {
            ++rep.invalid;
            rep.problems.push_back({lineno, *problem});
        } else {
            ++rep.valid;
            if (is_error) ++rep.error_lines;
        }
    }
    return rep;
}

StreamValidation validate_stream_output(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        StreamValidation rep;
        rep.problems.push_back({0, "cannot open " + path.string()});
        return rep;
    }
    return validate_stream_lines(in);
}

}  // namespace nsfmap
