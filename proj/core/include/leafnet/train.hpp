// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "leafnet/checkpoint.hpp"
#include "leafnet/data.hpp"
#include "leafnet/metrics.hpp"
#include "leafnet/model.hpp"
#include "leafnet/optim.hpp"

namespace leafnet {

struct TrainConfig {
  std::size_t max_epochs = 12;
  std::size_t batch_size = 32;
  double val_fraction = 0.20;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t prefetch_chunk = 128;

  OptimizerConfig optimizer;

  bool early_stopping = true;
  std::size_t early_stop_patience = 5;
  bool restore_best = true;

  bool plateau = true;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 3;
  double plateau_min_lr = 1e-6;
  double min_delta = 0.0;

  bool cosine = true;
  double cosine_lr_min = 0.0;
  std::size_t cosine_steps = 0;  // 0: epochs x batches per epoch

  /// Lower bound on the effective rate (cosine x plateau multiplier).
  double lr_floor = 1e-6;

  std::optional<AugmentConfig> augment = AugmentConfig{};

  /// Written whenever validation loss improves, if set.
  std::filesystem::path checkpoint_path;

  static TrainConfig fine_tune();  // 12-epoch cap
  static TrainConfig baseline();   // 20-epoch cap

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;  // value the callbacks acted on
  double val_acc = 0.0;
  double measured_val_loss = 0.0;  // before any hook override
  double lr = 0.0;                  // rate of the epoch's first step
  double wall_seconds = 0.0;
  std::vector<std::string> events;  // callback actions in execution order
};

/// Test seams; production runs leave these empty.
struct TrainHooks {
  /// May replace the validation loss seen by the callbacks.
  std::function<double(std::size_t epoch, double val_loss)> after_validation;
  std::function<void(const EpochRecord&)> on_epoch_end;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_loss = 0.0;
  bool stopped_early = false;
  bool restored_best = false;
  std::optional<Checkpoint> best_checkpoint;
  std::size_t steps = 0;
};

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Stratified: each class holds out round(n * fraction) samples, at least
/// one and at most n - 1.
std::pair<Dataset, Dataset> split_train_val(const Dataset& data, double fraction, std::uint64_t seed);

TrainResult train(ModelGraph& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});
/// Splits off cfg.val_fraction for validation first.
TrainResult train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Infer-mode forward over the dataset in fixed order; returns [N x K] probabilities.
Tensor predict(ModelGraph& model, const Dataset& data, std::size_t batch_size = 32);
LossAccuracy evaluate_loss(ModelGraph& model, const Dataset& data, std::size_t batch_size = 32);
EvalReport evaluate(ModelGraph& model, const Dataset& data, ReportMetadata meta = {}, std::size_t batch_size = 32);

std::string history_csv(const std::vector<EpochRecord>& history);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace leafnet
