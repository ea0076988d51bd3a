#include <benchmark/benchmark.h>

#include "nucleigan/mask_synth.hpp"
#include "nucleigan/metrics.hpp"
#include "nucleigan/nn.hpp"
#include "nucleigan/ops.hpp"
#include "nucleigan/rng.hpp"
#include "nucleigan/stain_norm.hpp"

using namespace nucleigan;

namespace {

Tensor<float> random_tensor(Shape s, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<float> v(s.numel());
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>(s, std::move(v), grad);
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const auto x = random_tensor({1, c, 64, 64}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, Tensor<float>(), 1, 1).data().data());
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = random_tensor({1, c, 64, 64}, 1, true);
  auto w = random_tensor({c, c, 3, 3}, 2, true);
  for (auto _ : state) {
    ops::sum(ops::conv2d(x, w, Tensor<float>(), 1, 1)).backward();
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(64);

void BM_UnetForward(benchmark::State& state) {
  auto net = build_network<float>(NetworkSpec::unet_generator(3, 1, 16, 5), 0);
  const auto x = random_tensor({1, 3, 128, 128}, 3);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(net->forward(x).data().data());
}
BENCHMARK(BM_UnetForward)->Unit(benchmark::kMillisecond);

InstanceMap sample_map(std::uint64_t seed) {
  static const ShapeDictionary dict = disk_dictionary({6, 8, 10});
  SamplerParams p;
  p.target_count = 40;
  return sample_mask(dict, p, seed).instances;
}

void BM_Aji256(benchmark::State& state) {
  const auto gt = sample_map(1), pred = sample_map(2);
  for (auto _ : state) benchmark::DoNotOptimize(aji(gt, pred));
}
BENCHMARK(BM_Aji256);

void BM_ImageHausdorff256(benchmark::State& state) {
  const auto gt = sample_map(1), pred = sample_map(2);
  for (auto _ : state) benchmark::DoNotOptimize(image_hausdorff(gt, pred));
}
BENCHMARK(BM_ImageHausdorff256);

void BM_SampleMask(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sample_map(seed++).labels.data());
}
BENCHMARK(BM_SampleMask);

void BM_StainEstimate(benchmark::State& state) {
  Rng rng(5);
  RGBImage img(128, 128, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(80 + rng.below(150));
  const ODImage od = to_optical_density(img);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_stain_basis(od, 0.1, 50, 0).objective.back());
}
BENCHMARK(BM_StainEstimate)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
