#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "apnea/datapipe.hpp"
#include "apnea/metrics.hpp"
#include "apnea/model.hpp"
#include "apnea/sparsify.hpp"

namespace apnea {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  WeightMode mode = WeightMode::dense;
  PruneSchedule prune;  // used when mode == pruned
  std::optional<ScheduleFn> schedule_override;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // fraction, not percent
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based, earliest maximum of val accuracy
};

// Called after each epoch's validation pass, before best-weights bookkeeping
// concludes; receives the live model. Used by tests to assert per-epoch
// invariants (mask integrity, sign weights).
using EpochCallback = std::function<void(const Model&, const EpochStats&)>;

struct TrainResult {
  Model model;  // weights of the best-validation epoch
  TrainHistory history;
};

// Shuffled mini-batch ADAM on softmax cross entropy. Batches smaller than 2
// are dropped (batch norm needs at least 2 samples). Validation runs in
// infer mode after every epoch. In pruned mode the sparsity schedule
// advances once per epoch and masks are re-applied after every step; in
// binarized mode forward uses sign weights, backward the straight-through
// estimator, and latents are clipped after each step.
TrainResult train(Model model, const DatasetSplit& split,
                  const TrainConfig& config,
                  const EpochCallback& on_epoch = nullptr);

// Builds an M4-shaped model for one patient: conv1/conv2 kernels, biases,
// and input BN state are copied from the trained generic model; the dense
// head is freshly initialized for the shorter flatten length; every layer
// stays trainable during the retraining run.
struct PatientModelResult {
  Model model;
  TrainHistory history;
  bool no_positive_windows = false;
};
PatientModelResult derive_patient_model(const Model& generic,
                                        const DatasetSplit& patient_split,
                                        const TrainConfig& config,
                                        const EpochCallback& on_epoch = nullptr);

struct Evaluation {
  Metrics metrics;
  double mean_loss = 0.0;
  std::vector<std::size_t> predictions;
};
Evaluation evaluate(const Model& model, const std::vector<SampleWindow>& windows);

// History CSV: header "epoch,train_loss,train_acc,val_loss,val_acc".
void save_history_csv(const TrainHistory& history,
                      const std::filesystem::path& path);

}  // namespace apnea
