// SPDX-License-Identifier: Apache-2.0
#include "leafnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace leafnet {

std::string_view to_string(UpdateRule rule) { return rule == UpdateRule::AdamLike ? "adam" : "sgd"; }

UpdateRule parse_update_rule(std::string_view name) {
  if (name == "adam" || name == "adam_like") return UpdateRule::AdamLike;
  if (name == "sgd" || name == "sgd_momentum") return UpdateRule::SgdMomentum;
  throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + std::string(name) + "'");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config), current_lr_(config.base_lr) {
  require(config.base_lr >= 0, ErrorCode::InvalidArgument, "learning rate must be non-negative");
}

void Optimizer::set_lr(double lr) {
  require(lr >= 0 && std::isfinite(lr), ErrorCode::InvalidArgument, "learning rate must be finite and >= 0");
  current_lr_ = lr;
}

void Optimizer::apply_step(ModelGraph& model) {
  std::vector<Tensor> params;
  for (auto& g : model.param_groups())
    for (auto& t : g.tensors) params.push_back(t);
  apply_step(std::move(params));
}

void Optimizer::apply_step(std::vector<Tensor> params) {
  for (const Tensor& p : params)
    if (p.requires_grad())
      require(p.has_grad(), ErrorCode::MissingGradient, "trainable parameter has no gradient");
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  for (Tensor& p : params) {
    if (!p.requires_grad()) continue;
    visit_dtype(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto w = p.mutable_values<T>();
      const auto& g = std::get<std::vector<T>>(*p.impl()->grad);
      auto [it, fresh] = moments_.try_emplace(p.impl().get());
      if (fresh) {
        it->second.first = std::vector<T>(w.size(), T(0));
        it->second.second = std::vector<T>(w.size(), T(0));
      }
      auto& m = std::get<std::vector<T>>(it->second.first);
      auto& v = std::get<std::vector<T>>(it->second.second);
      const T lr = static_cast<T>(current_lr_);
      if (config_.rule == UpdateRule::SgdMomentum) {
        const T mu = static_cast<T>(config_.momentum);
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = mu * m[i] + g[i];
          w[i] -= lr * m[i];
        }
      } else {
        const T b1 = static_cast<T>(config_.beta1);
        const T b2 = static_cast<T>(config_.beta2);
        const T eps = static_cast<T>(config_.epsilon);
        const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
        const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = b1 * m[i] + (T(1) - b1) * g[i];
          v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
          const T mhat = m[i] / c1;
          const T vhat = v[i] / c2;
          w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
      }
    });
    p.clear_grad();
  }
}

nlohmann::json Optimizer::hyperparams() const {
  return {{"rule", std::string(to_string(config_.rule))},
          {"base_lr", config_.base_lr},
          {"current_lr", current_lr_},
          {"momentum", config_.momentum},
          {"beta1", config_.beta1},
          {"beta2", config_.beta2},
          {"epsilon", config_.epsilon},
          {"step_count", step_count_}};
}

double cosine_lr(const CosineSchedule& s, std::size_t step) {
  require(s.total_steps >= 1, ErrorCode::InvalidArgument, "cosine horizon must be >= 1");
  require(s.lr_min >= 0 && s.lr_min <= s.lr0, ErrorCode::InvalidArgument, "need 0 <= lr_min <= lr0");
  if (step >= s.total_steps) return s.lr_min;
  const double progress = static_cast<double>(step) / static_cast<double>(s.total_steps);
  return s.lr_min + (s.lr0 - s.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

PlateauReducer::PlateauReducer(double factor, std::size_t patience, double min_lr, double min_delta)
    : factor_(factor), patience_(patience), min_lr_(min_lr), min_delta_(min_delta) {
  require(factor > 0 && factor < 1, ErrorCode::InvalidArgument, "plateau factor must be in (0, 1)");
  require(patience >= 1, ErrorCode::InvalidArgument, "plateau patience must be >= 1");
}

double PlateauReducer::update(double epoch_val_loss, double current_lr) {
  if (epoch_val_loss < best_ - min_delta_) {
    best_ = epoch_val_loss;
    wait_ = 0;
    return current_lr;
  }
  if (++wait_ == patience_) {
    wait_ = 0;
    return std::max(current_lr * factor_, min_lr_);
  }
  return current_lr;
}

}  // namespace leafnet
