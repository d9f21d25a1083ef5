// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "leafnet/error.hpp"
#include "leafnet/model.hpp"
#include "leafnet/ops.hpp"
#include "leafnet/optim.hpp"
#include "test_util.hpp"

namespace leafnet {
namespace {

using testing::random_tensor;

ModelGraph mini_with_head(std::size_t classes = 41, std::uint64_t seed = 1, DType dtype = DType::F32) {
  auto m = build_backbone(Preset::Mini, {3, 32, 32}, seed, dtype);
  HeadSpec h;
  h.classes = classes;
  attach_head(m, h);
  return m;
}

// Conv kernels without bias plus BN gamma/beta, from the layer shapes alone.
std::size_t expected_resnet50_params() {
  std::size_t total = 3 * 64 * 49 + 2 * 64;  // stem conv + bn
  std::size_t in = 64;
  const std::size_t blocks[] = {3, 4, 6, 3};
  const std::size_t widths[] = {64, 128, 256, 512};
  for (int s = 0; s < 4; ++s) {
    const std::size_t w = widths[s], out = 4 * w;
    for (std::size_t b = 0; b < blocks[s]; ++b) {
      total += in * w + 2 * w;         // 1x1
      total += w * w * 9 + 2 * w;      // 3x3
      total += w * out + 2 * out;      // 1x1 expand
      if (b == 0) total += in * out + 2 * out;  // projection
      in = out;
    }
  }
  return total;
}

TEST(Backbone, ResNet50ParameterCount) {
  auto m = build_backbone(Preset::ResNet50, {3, 32, 32}, 0);
  const auto s = parameter_summary(m);
  EXPECT_EQ(s.total, expected_resnet50_params());
  // Published headless ResNet-50 trainable parameter count (conv weights
  // plus batch-norm affine parameters, no classifier).
  EXPECT_EQ(s.total, 23508032u);
  EXPECT_EQ(m.output_shape(), (Shape{1, 2048, 1, 1}));
}

TEST(Backbone, ResNet50ForwardShape) {
  auto m = build_backbone(Preset::ResNet50, {3, 64, 64}, 0);
  Rng rng(1);
  auto y = m.forward(random_tensor({1, 3, 64, 64}, rng, 0, 1, DType::F32), Mode::Infer);
  EXPECT_EQ(y.shape(), (Shape{1, 2048, 2, 2}));
  EXPECT_EQ(y.shape(), m.output_shape());
}

TEST(Backbone, MiniFeatureMap) {
  auto m = build_backbone(Preset::Mini, {3, 32, 32}, 0);
  EXPECT_EQ(m.output_shape(), (Shape{1, 64, 8, 8}));
  Rng rng(2);
  auto y = m.forward(random_tensor({2, 3, 32, 32}, rng, 0, 1, DType::F32), Mode::Infer);
  EXPECT_EQ(y.shape(), (Shape{2, 64, 8, 8}));
}

TEST(Backbone, InputTooSmall) {
  for (auto [preset, side] : {std::pair{Preset::ResNet50, 31}, std::pair{Preset::Mini, 15}}) {
    try {
      (void)build_backbone(preset, {3, static_cast<std::size_t>(side), 64}, 0);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InputTooSmall);
    }
  }
  EXPECT_NO_THROW((void)build_backbone(Preset::Mini, {3, 16, 16}, 0));
}

TEST(Backbone, SameSeedSameParameters) {
  auto a = build_backbone(Preset::Mini, {3, 32, 32}, 42, DType::F64);
  auto b = build_backbone(Preset::Mini, {3, 32, 32}, 42, DType::F64);
  auto c = build_backbone(Preset::Mini, {3, 32, 32}, 43, DType::F64);
  auto sa = a.named_state(), sb = b.named_state(), sc = c.named_state();
  ASSERT_EQ(sa.size(), sb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].first, sb[i].first);
    EXPECT_TRUE(sa[i].second.bitwise_equal(sb[i].second)) << sa[i].first;
    any_diff |= !sa[i].second.bitwise_equal(sc[i].second);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Head, StructureIsExact) {
  auto m = mini_with_head();
  std::vector<std::string> kinds;
  for (std::size_t i = m.head_start(); i < m.layers.size(); ++i) kinds.push_back(m.layers[i].kind());
  EXPECT_EQ(kinds, (std::vector<std::string>{"global_avg_pool", "dense", "batchnorm", "leaky_relu", "dropout",
                                             "dense", "batchnorm", "leaky_relu", "dropout", "dense", "softmax"}));
  const auto& d1 = std::get<DenseLayer>(m.layers[m.head_start() + 1].layer).params;
  const auto& d2 = std::get<DenseLayer>(m.layers[m.head_start() + 5].layer).params;
  const auto& d3 = std::get<DenseLayer>(m.layers[m.head_start() + 9].layer).params;
  EXPECT_EQ(d1.weight.shape(), (Shape{128, 64}));
  EXPECT_EQ(d2.weight.shape(), (Shape{64, 128}));
  EXPECT_EQ(d3.weight.shape(), (Shape{41, 64}));
  EXPECT_DOUBLE_EQ(std::get<LeakyReluLayer>(m.layers[m.head_start() + 3].layer).alpha, 0.01);
  EXPECT_DOUBLE_EQ(std::get<DropoutLayer>(m.layers[m.head_start() + 4].layer).params.rate, 0.3);
  EXPECT_DOUBLE_EQ(std::get<DropoutLayer>(m.layers[m.head_start() + 8].layer).params.rate, 0.4);
}

TEST(Head, ParameterCountArithmetic) {
  auto m = mini_with_head();
  std::size_t head = 0;
  std::size_t head_groups = 0;
  for (const auto& g : m.param_groups()) {
    if (!g.head) continue;
    head += g.count();
    ++head_groups;
  }
  EXPECT_EQ(head, (64u * 128 + 128) + 2 * 128 + (128 * 64 + 64) + 2 * 64 + (64 * 41 + 41));
  EXPECT_EQ(head, 19625u);
  EXPECT_EQ(head_groups, 7u);
}

TEST(Head, ForwardIsDistribution) {
  auto m = mini_with_head();
  Rng rng(3);
  auto p = m.forward(random_tensor({3, 3, 32, 32}, rng, 0, 1, DType::F32), Mode::Train).to_vector();
  ASSERT_EQ(p.size(), 3u * 41);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 41; ++k) s += p[r * 41 + k];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  Tape::current().clear();
}

TEST(Head, AlreadyHasHead) {
  auto m = mini_with_head();
  try {
    attach_head(m, HeadSpec{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AlreadyHasHead);
  }
  strip_head(m);
  EXPECT_FALSE(m.has_head());
  EXPECT_NO_THROW(attach_linear_head(m, 5));
  EXPECT_EQ(m.layers.size() - m.head_start(), 3u);
}

TEST(Head, InferForwardIsPure) {
  auto m = mini_with_head(4, 5, DType::F64);
  Rng rng(4);
  auto x = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  auto a = m.forward(x, Mode::Infer);
  auto b = m.forward(x, Mode::Infer);
  EXPECT_TRUE(a.bitwise_equal(b));
}

TEST(Freeze, GroupEnumeration) {
  auto m = mini_with_head();
  const auto groups = m.param_groups();
  // stem conv + bn(2) + 6 blocks x (2 convs + 2 bns x 2) + 2 projections x 3, then 7 head groups.
  EXPECT_EQ(groups.size(), 3u + 6 * 6 + 2 * 3 + 7);
  EXPECT_EQ(parameterized_layer_count(m), groups.size());
  EXPECT_EQ(groups.front().name, "stem.conv");
  EXPECT_EQ(groups.back().name, "head.out");
}

TEST(Freeze, UnfreezeLastK) {
  auto m = mini_with_head();
  const std::size_t total = m.param_groups().size();
  set_trainable(m, TrainablePolicy::UnfreezeLastK, 4);
  const auto groups = m.param_groups();
  for (std::size_t i = 0; i < total; ++i) EXPECT_EQ(groups[i].trainable(), i >= total - 4) << groups[i].name;
  try {
    set_trainable(m, TrainablePolicy::UnfreezeLastK, total + 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::KOutOfRange);
  }
}

TEST(Freeze, HeadOnlyMarksSevenGroups) {
  auto m = mini_with_head();
  set_trainable(m, TrainablePolicy::HeadOnly);
  std::size_t on = 0;
  for (const auto& g : m.param_groups()) {
    EXPECT_EQ(g.trainable(), g.head);
    on += g.trainable();
  }
  EXPECT_EQ(on, 7u);
}

TEST(Freeze, SummaryConsistency) {
  auto m = mini_with_head();
  set_trainable(m, TrainablePolicy::UnfreezeAll);
  auto s = parameter_summary(m);
  EXPECT_EQ(s.frozen, 0u);
  set_trainable(m, TrainablePolicy::FreezeAll);
  s = parameter_summary(m);
  EXPECT_EQ(s.trainable, 0u);
  set_trainable(m, TrainablePolicy::UnfreezeLastK, 9);
  s = parameter_summary(m);
  EXPECT_EQ(s.total, s.trainable + s.frozen);
  // Independent recount straight from the persisted state tensors.
  std::size_t recount = 0, trainable = 0;
  for (auto& [name, t] : m.named_state()) {
    if (name.ends_with(".running_mean") || name.ends_with(".running_var")) continue;
    recount += t.numel();
    if (t.requires_grad()) trainable += t.numel();
  }
  EXPECT_EQ(recount, s.total);
  EXPECT_EQ(trainable, s.trainable);
}

TEST(Freeze, FreezeAllThenStepLeavesParametersUntouched) {
  auto m = mini_with_head(4, 2, DType::F64);
  set_trainable(m, TrainablePolicy::FreezeAll);
  const auto before = m.snapshot();
  Optimizer opt({UpdateRule::SgdMomentum, 0.1});
  Rng rng(5);
  auto p = m.forward(random_tensor({2, 3, 32, 32}, rng, 0, 1), Mode::Train);
  EXPECT_FALSE(p.requires_grad());
  opt.apply_step(m);
  const auto after = m.snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i].bitwise_equal(after[i]));
}

TEST(Descriptor, RoundTripRebuildsSameArchitecture) {
  auto m = mini_with_head(7, 9);
  auto r = model_from_descriptor(m.descriptor());
  EXPECT_EQ(r.descriptor(), m.descriptor());
  auto a = m.named_state(), b = r.named_state();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second.shape(), b[i].second.shape());
  }
}

TEST(Snapshot, RestoreIsBitExact) {
  auto m = mini_with_head(4, 3, DType::F64);
  auto snap = m.snapshot();
  for (auto& [name, t] : m.named_state()) {
    for (auto& v : t.mutable_values<double>()) v += 1.0;
  }
  m.restore(snap);
  auto now = m.snapshot();
  for (std::size_t i = 0; i < snap.size(); ++i) EXPECT_TRUE(snap[i].bitwise_equal(now[i]));
}

}  // namespace
}  // namespace leafnet
