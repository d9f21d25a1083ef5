// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafnet/model.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

enum class UpdateRule { SgdMomentum, AdamLike };

std::string_view to_string(UpdateRule rule);
UpdateRule parse_update_rule(std::string_view name);

struct OptimizerConfig {
  UpdateRule rule = UpdateRule::AdamLike;
  double base_lr = 1e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});

  const OptimizerConfig& config() const { return config_; }
  double current_lr() const { return current_lr_; }
  void set_lr(double lr);
  std::size_t step_count() const { return step_count_; }

  /// Updates every trainable parameter from its gradient and clears the
  /// gradient. Frozen parameters are never touched.
  void apply_step(ModelGraph& model);
  void apply_step(std::vector<Tensor> params);

  nlohmann::json hyperparams() const;

 private:
  OptimizerConfig config_;
  double current_lr_;
  std::size_t step_count_ = 0;
  std::map<const detail::TensorImpl*, std::pair<detail::Storage, detail::Storage>> moments_;
};

/// lr(t) = lr_min + (lr0 - lr_min) * (1 + cos(pi * t / T)) / 2, clamped to
/// lr_min beyond T.
struct CosineSchedule {
  double lr0 = 1e-4;
  double lr_min = 0.0;
  std::size_t total_steps = 1;
};

double cosine_lr(const CosineSchedule& s, std::size_t step);

/// Multiplies the rate by `factor` after `patience` epochs without a strict
/// improvement (beyond min_delta) in validation loss, never going below min_lr.
class PlateauReducer {
 public:
  PlateauReducer(double factor = 0.1, std::size_t patience = 3, double min_lr = 1e-6, double min_delta = 0.0);

  double update(double epoch_val_loss, double current_lr);

  double factor() const { return factor_; }
  std::size_t patience() const { return patience_; }
  double min_lr() const { return min_lr_; }
  double min_delta() const { return min_delta_; }
  double best_loss() const { return best_; }
  std::size_t wait() const { return wait_; }

 private:
  double factor_;
  std::size_t patience_;
  double min_lr_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t wait_ = 0;
};

}  // namespace leafnet
