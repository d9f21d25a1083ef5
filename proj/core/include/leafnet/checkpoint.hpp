// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafnet/model.hpp"
#include "leafnet/optim.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "PDNRT50\0", u32 version, u32 tensor count, tensors (u16 name
/// length + name, u8 dtype 1=f32/2=f64, u8 ndim, u64 dims, LE data), u32
/// length-prefixed JSON metadata, CRC-32 of everything before it. All
/// integers little-endian.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json architecture;
  std::size_t epoch = 0;
  std::optional<double> best_val_loss;
  nlohmann::json optimizer = nlohmann::json::object();
  std::string rng_state;
  /// Free-form extras (class names, trainable flags).
  nlohmann::json extra = nlohmann::json::object();
};

/// Deep-copies the model's state so later training does not alter it.
Checkpoint make_checkpoint(ModelGraph& model, const Optimizer* optimizer = nullptr, std::size_t epoch = 0,
                           std::optional<double> best_val_loss = std::nullopt);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into the model after validating every name,
/// dtype and shape; the model is untouched if any check fails.
void load_state(ModelGraph& model, const Checkpoint& ckpt);

/// Rebuilds the architecture, loads weights and restores trainable flags.
ModelGraph model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace leafnet
