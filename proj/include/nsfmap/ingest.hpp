#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nsfmap/core.hpp"
#include "nsfmap/image.hpp"

namespace nsfmap {

// ---------------------------------------------------------------------------
// Tabular dataset layout shared by gen, ingest, train and stream:
//   <dir>/dataset.json   sensor names, sampling rate, format version
//   <dir>/samples.csv    cycle_id,state,step,<sensor...>,label,image_ref
//   <dir>/images/        PPM frames referenced by relative image_ref
// ---------------------------------------------------------------------------

struct WriteOptions {
    /// Render synthetic image references into images/ and store relative paths.
    bool materialize_images = true;
};

void write_dataset(const Dataset& ds, const std::filesystem::path& dir, const WriteOptions& opts = {});
Dataset read_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// FF JSON batches
// ---------------------------------------------------------------------------

struct RawRecord {
    std::string source;  // "<file>#<index>", names the record in errors
    std::string timestamp;
    std::map<std::string, double> values;
    std::map<std::string, std::string> images;  // camera name -> path
};

struct RawTable {
    std::vector<RawRecord> records;
    std::size_t skipped = 0;
    std::size_t total = 0;
};

/// Parses every *.json batch in dir (name order). A batch is either an array
/// of records or an object with a "records" array. Malformed records are
/// skipped and counted; more than 5% malformed is an error.
RawTable parse_batches(const std::filesystem::path& dir);
RawTable parse_batch_documents(const std::vector<std::pair<std::string, nlohmann::json>>& docs);

struct Predicate {
    std::string field;
    std::string op;  // == != < <= > >= between
    double value = 0.0;
    double upper = 0.0;  // for between
    bool holds(const RawRecord& r) const;
};

struct StateRule {
    int state = 1;
    std::vector<Predicate> when;
};

struct AnomalyRule {
    AnomalyClass label = AnomalyClass::NoAnomaly;
    std::vector<Predicate> when;
};

struct StateMapping {
    std::string cycle_field = "cycle_count";
    std::vector<std::string> sensor_fields;  // empty: every field not used by the mapping
    std::string camera = "camera1";
    std::vector<StateRule> state_rules;
    std::vector<AnomalyRule> anomaly_rules;
};

StateMapping parse_state_mapping(const nlohmann::json& doc);
StateMapping load_state_mapping(const std::filesystem::path& path);

/// Assigns cycle, state, step and label to each record. The result may still
/// carry image refs outside states 4/9 until filter_fusion_images runs.
Dataset apply_state_mapping(const RawTable& raw, const StateMapping& map, double sampling_rate_hz = 1.95);

Dataset filter_fusion_images(Dataset ds);

/// Sidecar file with rows path,x_min,y_min,x_max,y_max (header optional).
std::map<std::string, CropBox> read_crop_sidecar(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Cycle-level class: the first non-NoAnomaly label seen in the cycle.
std::map<int, AnomalyClass> cycle_classes(const Dataset& ds);

struct SplitResult {
    Dataset train;
    Dataset test;
};

/// Cycle-wise split stratified by cycle-level class.
SplitResult cycle_split(const Dataset& ds, double train_fraction, std::uint64_t seed);

/// Holds out the last fraction of cycles (by id), at least one.
SplitResult carve_validation(const Dataset& train, double fraction = 0.1);

/// Per-class share of samples, attributing each sample to its cycle's class.
std::map<AnomalyClass, double> stratum_proportions(const Dataset& ds);

std::map<AnomalyClass, std::size_t> label_counts(const Dataset& ds);
std::map<AnomalyClass, std::size_t> image_label_counts(const Dataset& ds);

Dataset subset_cycles(const Dataset& ds, const std::vector<int>& cycle_ids);

}  // namespace nsfmap
