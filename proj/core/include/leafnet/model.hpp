// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafnet/layers.hpp"
#include "leafnet/random.hpp"

namespace leafnet {

enum class Preset { ResNet50, Mini };

std::string_view to_string(Preset preset);
Preset parse_preset(std::string_view name);

struct InputSpec {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
};

/// Classification head: GAP -> [dense -> BN -> LeakyReLU -> dropout] per
/// width -> dense(classes) -> softmax.
struct HeadSpec {
  std::vector<std::size_t> widths{128, 64};
  std::vector<double> dropout_rates{0.3, 0.4};
  double leaky_alpha = 0.01;
  std::size_t classes = 41;
};

struct ConvLayer { ConvParams params; };
struct BatchNormLayer { BatchNormState state; };
struct ReluLayer {};
struct LeakyReluLayer { double alpha = 0.01; };
struct DropoutLayer { DropoutParams params; };
struct MaxPoolLayer { std::size_t window = 3; std::size_t stride = 2; };
struct GlobalAvgPoolLayer {};
struct DenseLayer { DenseParams params; };
struct SoftmaxLayer {};
struct ResidualLayer { ResidualBlock block; };

using Layer = std::variant<ConvLayer, BatchNormLayer, ReluLayer, LeakyReluLayer, DropoutLayer, MaxPoolLayer,
                           GlobalAvgPoolLayer, DenseLayer, SoftmaxLayer, ResidualLayer>;

struct LayerSpec {
  std::string name;
  Layer layer;
  bool head = false;

  std::string kind() const;
};

/// One freezable unit. Parameter groups are enumerated in forward order;
/// inside a residual block the main path precedes the projection shortcut.
/// Each conv (kernel [+ bias]) and each dense (weight + bias) is one group;
/// batch-norm gamma and beta are separate groups.
struct ParamGroup {
  std::string name;
  std::vector<Tensor> tensors;
  bool head = false;

  bool trainable() const;
  std::size_t count() const;
};

struct LayerCount {
  std::string name;
  std::size_t parameters = 0;
  bool trainable = false;
};

struct ParameterSummary {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::vector<LayerCount> per_layer;  // one entry per parameter group
};

enum class TrainablePolicy { FreezeAll, UnfreezeAll, UnfreezeLastK, HeadOnly };

class ModelGraph {
 public:
  Preset preset = Preset::Mini;
  InputSpec input;
  DType dtype = DType::F32;
  std::uint64_t seed = 0;
  std::size_t class_count = 0;
  std::string head_kind;  // "", "custom" or "linear"
  HeadSpec head_spec;
  std::vector<LayerSpec> layers;
  Rng dropout_rng;

  Tensor forward(const Tensor& x, Mode mode);

  bool has_head() const { return !head_kind.empty(); }
  std::size_t head_start() const;

  std::vector<ParamGroup> param_groups();
  /// Every persisted tensor (parameters plus BN running statistics), named.
  std::vector<std::pair<std::string, Tensor>> named_state();

  /// Shape after running the layer stack on a single sample (N = 1).
  Shape output_shape() const;

  /// Deep copy of every state tensor, for best-epoch restoration.
  std::vector<Tensor> snapshot();
  void restore(const std::vector<Tensor>& snapshot);

  nlohmann::json descriptor() const;
};

ModelGraph build_backbone(Preset preset, const InputSpec& input, std::uint64_t seed, DType dtype = DType::F32);

/// Appends the regularized classification head. Weights are drawn from a
/// stream derived from the model seed.
void attach_head(ModelGraph& model, const HeadSpec& head);
/// GAP -> dense(classes) -> softmax, used as the plain transfer baseline.
void attach_linear_head(ModelGraph& model, std::size_t classes);
void strip_head(ModelGraph& model);

/// Rebuilds an initialized graph from descriptor(); weights are then loaded
/// from a checkpoint by the caller.
ModelGraph model_from_descriptor(const nlohmann::json& descriptor);

void set_trainable(ModelGraph& model, TrainablePolicy policy, std::size_t k = 0);
std::size_t parameterized_layer_count(ModelGraph& model);
ParameterSummary parameter_summary(ModelGraph& model);

}  // namespace leafnet
