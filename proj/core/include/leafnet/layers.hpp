// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "leafnet/random.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

enum class Mode { Train, Infer };
enum class Padding { Valid, Same };

struct ConvParams {
  Tensor kernel;  // [outC, inC, kH, kW]
  Tensor bias;    // [outC], undefined when the conv has no bias
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  Padding padding = Padding::Valid;

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }
};

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  Mode mode = Mode::Train;
};

struct DropoutParams {
  double rate = 0.0;
  Mode mode = Mode::Train;
};

struct DenseParams {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

/// Output extent and leading pad of one spatial axis. "Same" pads a total of
/// max((ceil(in/stride) - 1) * stride + k - in, 0), the extra pixel going to
/// the trailing edge.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
  std::size_t pad_total = 0;
};
AxisGeometry conv_axis_geometry(std::size_t in, std::size_t k, std::size_t stride, Padding padding);

Tensor conv2d_forward(const Tensor& x, const ConvParams& p);

/// Normalizes per channel over N (and H, W for 4-D input). Train mode uses
/// biased batch statistics and updates the running statistics in place.
Tensor batchnorm_forward(const Tensor& x, BatchNormState& s);

/// y = x for x >= 0, alpha * x otherwise; derivative alpha at exactly 0.
Tensor leaky_relu(const Tensor& x, double alpha);
inline Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

/// Inverted dropout. Infer mode (or rate 0) returns x itself.
Tensor dropout(const Tensor& x, const DropoutParams& p, Rng& rng);

Tensor global_avg_pool(const Tensor& x);

/// Valid max pooling; ties route the gradient to the first maximal element
/// in row-major window order.
Tensor max_pool2d(const Tensor& x, std::size_t window, std::size_t stride);

/// y = x . W^T + b
Tensor dense_forward(const Tensor& x, const DenseParams& p);

/// Row-wise softmax of [N x K] logits with max subtraction.
Tensor softmax(const Tensor& x);

/// -mean(log(max(p[i, label_i], 1e-12))) over rows of a probability matrix.
Tensor cross_entropy_loss(const Tensor& probs, std::span<const std::size_t> labels);

enum class BlockKind { Basic, Bottleneck };

/// Residual unit: out = relu(F(x) + shortcut(x)). Basic F is two 3x3 convs,
/// bottleneck F is 1x1 -> 3x3 -> 1x1 with the stride on the 3x3. Every conv is
/// followed by batch norm; the shortcut is a 1x1 conv + BN projection when the
/// channel count or stride changes, identity otherwise.
struct ResidualBlock {
  BlockKind kind = BlockKind::Basic;
  std::vector<ConvParams> convs;
  std::vector<BatchNormState> norms;
  std::optional<ConvParams> projection;
  std::optional<BatchNormState> projection_norm;
};

/// BN state used for a forward in `requested` mode: batch statistics only when
/// training and at least one of gamma/beta is trainable.
Mode effective_norm_mode(const BatchNormState& s, Mode requested);

Tensor residual_block_forward(const Tensor& x, ResidualBlock& block, Mode mode);

// Initializers: He-normal weights (std = sqrt(2 / fan_in)), zero biases and
// beta, unit gamma, running stats 0 / 1.
ConvParams make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                     std::size_t stride, Padding padding, bool with_bias, Rng& rng, DType dtype);
DenseParams make_dense(std::size_t in, std::size_t out, Rng& rng, DType dtype);
BatchNormState make_batchnorm(std::size_t channels, DType dtype);
ResidualBlock make_basic_block(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                               Rng& rng, DType dtype);
ResidualBlock make_bottleneck_block(std::size_t in_channels, std::size_t width, std::size_t stride,
                                    Rng& rng, DType dtype);

}  // namespace leafnet
