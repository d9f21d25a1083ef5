// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "leafnet/data.hpp"
#include "leafnet/kernels.hpp"
#include "leafnet/layers.hpp"
#include "leafnet/model.hpp"
#include "leafnet/parallel.hpp"
#include "leafnet/ops.hpp"
#include "leafnet/random.hpp"

namespace {

using namespace leafnet;

Tensor random_input(const Shape& shape, std::uint64_t seed, DType dtype = DType::F32) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values(shape, v, dtype);
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<float> a(n * n, 0.5f), b(n * n, 0.25f), c(n * n);
  for (auto _ : state) {
    kernels::gemm(a.data(), b.data(), c.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Arg(512);

void BM_ConvForwardBackward(benchmark::State& state) {
  Rng rng(1);
  auto conv = make_conv(32, 32, 3, 1, Padding::Same, false, rng, DType::F32);
  conv.kernel.set_requires_grad(true);
  auto x = random_input({32, 32, 16, 16}, 2);
  for (auto _ : state) {
    auto loss = sum(conv2d_forward(x, conv));
    backward(loss);
    conv.kernel.clear_grad();
  }
}
BENCHMARK(BM_ConvForwardBackward)->Unit(benchmark::kMillisecond);

void BM_MiniTrainStep(benchmark::State& state) {
  auto model = build_backbone(Preset::Mini, {3, 32, 32}, 3);
  HeadSpec head;
  head.classes = 4;
  attach_head(model, head);
  auto x = random_input({32, 3, 32, 32}, 4);
  std::vector<std::size_t> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 4;
  for (auto _ : state) {
    backward(cross_entropy_loss(model.forward(x, Mode::Train), labels));
    for (auto& g : model.param_groups())
      for (auto& t : g.tensors) t.clear_grad();
  }
}
BENCHMARK(BM_MiniTrainStep)->Unit(benchmark::kMillisecond);

void BM_Augment(benchmark::State& state) {
  LabeledImage img;
  img.pixels = random_input({3, 224, 224}, 5);
  AugmentConfig cfg;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(augment(img, cfg, seed++));
}
BENCHMARK(BM_Augment)->Unit(benchmark::kMillisecond);

}  // namespace
int main(int argc, char** argv) {
  leafnet::retain_freed_memory();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
