#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "har/datasets.hpp"
#include "har/model.hpp"
#include "har/tensor.hpp"

namespace har {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 50;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 1;
    bool shuffle = true;
};

void validate(const TrainConfig& cfg);

/// First/second moment estimates per parameter tensor.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;

    static AdamState init(const std::vector<TensorPtr>& params);
};

/// One bias-corrected Adam update. Gradients are read from each parameter's
/// grad buffer; parameter and state shapes must agree.
void adam_step(const std::vector<TensorPtr>& params, AdamState& state, const TrainConfig& cfg);

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;  // meaningful only when has_val
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    bool has_val = false;
};

void write_history_csv(const std::string& path, const TrainHistory& history);

struct ParamBlob {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

/// Versioned snapshot of everything needed to resume or evaluate a model.
struct Checkpoint {
    static constexpr int kVersion = 1;
    int version = kVersion;
    ModelSpec spec;
    std::vector<ParamBlob> params;
    AdamState adam;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;
};

Checkpoint make_checkpoint(const Model& model, const AdamState& adam, std::size_t epoch,
                           std::uint64_t seed);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Installs checkpoint parameters into a model with the same spec; names and
/// shapes must match exactly.
void apply_checkpoint(Model& model, const Checkpoint& ckpt);

/// Convenience: builds the model described by the checkpoint and loads it.
Model model_from_checkpoint(const Checkpoint& ckpt);

struct TrainResult {
    TrainHistory history;
    Checkpoint final_checkpoint;
    Checkpoint best_checkpoint;  // best validation accuracy; == final when no val set
    std::size_t best_epoch = 0;
};

/// Minimizes softmax cross-entropy over shuffled mini-batches (last partial
/// batch kept). Shuffling is re-seeded per epoch from the config seed, so a
/// fixed seed reproduces the run bit for bit. Aborts with a diagnostic when
/// the loss turns non-finite.
TrainResult train(Model& model, const SequenceDataset& train_set, const SequenceDataset* val_set,
                  const TrainConfig& cfg, std::ostream* log = nullptr);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    double throughput_seqs_per_s = 0.0;               // forward passes only
    std::size_t count = 0;
};

EvalResult evaluate(const Model& model, const SequenceDataset& ds, std::size_t batch_size = 50);

/// Copies dataset windows [first, first+count) into a [count,C,L] tensor.
TensorPtr batch_tensor(const SequenceDataset& ds, const std::vector<std::size_t>& indices,
                       std::size_t first, std::size_t count);

}  // namespace har
