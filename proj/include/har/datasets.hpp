#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "har/localization.hpp"

#include "json.hpp"

namespace har {

/// Fixed-length multi-channel sensor windows with integer labels and,
/// optionally, ground-truth foreground segments per window.
struct SequenceDataset {
    std::size_t num_channels = 0;
    std::size_t seq_len = 0;
    std::vector<double> data;  // [N, C, L] row-major
    std::vector<int> labels;
    std::vector<std::vector<Interval>> segments;  // empty when no ground truth
    std::vector<std::string> class_names;
    std::vector<std::string> channel_names;
    double sample_rate_hz = 50.0;

    std::size_t size() const { return labels.size(); }
    bool has_segments() const { return !segments.empty(); }
    const double* window(std::size_t i) const { return data.data() + i * num_channels * seq_len; }

    SequenceDataset subset(const std::vector<std::size_t>& indices) const;

    /// Checks the structural invariants (label range, segment bounds,
    /// finite values); throws std::runtime_error on violation.
    void check() const;
};

/// Loads the raw inertial signals of the public UCI HAR dataset:
/// body_acc_{x,y,z} and body_gyro_{x,y,z}, 128 samples per window, labels
/// remapped from 1..6 to 0..5. `split` is "train" or "test".
SequenceDataset load_ucihar(const std::string& root_dir, const std::string& split);

/// Per-channel mean/stddev, intended to be computed on the training split.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

ChannelStats compute_channel_stats(const SequenceDataset& ds);

/// Per-channel z-score using the supplied (training) stats; a stddev floor
/// of 1e-8 guards constant channels.
SequenceDataset standardize(SequenceDataset ds, const ChannelStats& stats);

/// Generator settings for the synthetic weakly labeled set: one foreground
/// activity segment embedded in a walking-like background per window. All
/// values are generator defaults, not measured constants.
struct SynthConfig {
    std::size_t num_windows = 8000;
    std::size_t seq_len = 2048;
    std::size_t num_channels = 3;
    double sample_rate_hz = 50.0;
    std::array<double, 4> class_proportions{0.265, 0.244, 0.185, 0.306};
    std::size_t min_segment_len = 256;
    std::size_t max_segment_len = 1024;
    double background_freq_hz = 2.0;
    double background_amp = 1.0;
    double noise_sigma = 0.1;
    std::array<double, 4> foreground_freq_hz{1.2, 2.6, 3.6, 3.0};
    std::array<double, 4> foreground_amp{1.2, 1.4, 2.5, 1.8};
};

void validate(const SynthConfig& config);

nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// Deterministic under (config, seed); every window records its foreground
/// segment as ground truth. Classes: going upstairs, going downstairs,
/// jumping, jogging over a walking background.
SequenceDataset synth_weak(const SynthConfig& config, std::uint64_t seed);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Disjoint shuffled partition by fractions (must sum to 1), deterministic
/// under the seed.
SplitIndices split_indices(std::size_t n, const std::array<double, 3>& fractions,
                           std::uint64_t seed);

struct DatasetSplits {
    SequenceDataset train, val, test;
};

DatasetSplits split(const SequenceDataset& ds, const std::array<double, 3>& fractions,
                    std::uint64_t seed);

/// On-disk form: `<prefix>.f64` holds little-endian 64-bit floats in [N,C,L]
/// order; `<prefix>.json` is the sidecar with labels, segments and config.
void save_synth_dataset(const SequenceDataset& ds, const std::string& prefix,
                        const SynthConfig& config, std::uint64_t seed);
SequenceDataset load_synth_dataset(const std::string& prefix);

/// Reads the sidecar's generator seed back (for split reproduction).
std::uint64_t synth_sidecar_seed(const std::string& prefix);

}  // namespace har
