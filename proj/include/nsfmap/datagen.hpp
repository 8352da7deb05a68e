#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "nsfmap/core.hpp"
#include "nsfmap/image.hpp"
#include "nsfmap/ontology.hpp"

namespace nsfmap {

/// Synthetic assembly-line generator settings.
struct GenConfig {
    int n_cycles = 60;
    int m_sensors = 4;
    int steps_per_state = 4;
    /// Run length in the camera states 4 and 9; 0 means steps_per_state.
    int fusion_steps_per_state = 0;
    std::map<AnomalyClass, double> anomaly_mix;
    int image_size = 16;
    double image_signal_strength = 0.8;
    std::uint64_t seed = 42;
    double sampling_rate_hz = 1.95;

    int fusion_steps() const { return fusion_steps_per_state > 0 ? fusion_steps_per_state : steps_per_state; }
    void validate() const;
};

/// Class proportions of the FF multimodal time-series table.
std::map<AnomalyClass, double> ff_table_mix();

struct SyntheticImage {
    Image pixels;
    CycleState state{4};
    AnomalyClass truth_label = AnomalyClass::NoAnomaly;
};

/// Sensors pushed out of range for a class: index into the dataset's sensor
/// list plus direction (+1 above max, -1 below min).
struct SensorSignature {
    std::size_t sensor_index;
    int direction;
};
std::vector<SensorSignature> anomaly_signature(AnomalyClass c);

/// Parts whose marker is absent from the image for a class.
struct MissingParts {
    bool nose = false;
    bool body1 = false;
    bool body2 = false;
};
MissingParts missing_parts(AnomalyClass c);

/// Per-cycle class assignment: largest-remainder quota of the mix, shuffled.
std::vector<AnomalyClass> assign_cycle_classes(int n_cycles, const std::map<AnomalyClass, double>& mix,
                                               std::uint64_t seed);

Dataset generate_dataset(const GenConfig& cfg, const ProcessOntology& onto);
Dataset generate_dataset(const GenConfig& cfg);  // default FF ontology

/// Relabels samples in the class's valid states and pushes the designated
/// sensors out of their per-state ranges. Other samples are returned as is.
std::vector<MultimodalSample> inject_anomaly(std::span<const MultimodalSample> cycle_samples, AnomalyClass cls,
                                             const ProcessOntology& onto,
                                             std::span<const std::string> sensor_names, std::uint64_t seed);

SyntheticImage render_synthetic_image(CycleState state, AnomalyClass cls, double strength, std::uint64_t seed,
                                      int size = 16);

}  // namespace nsfmap
