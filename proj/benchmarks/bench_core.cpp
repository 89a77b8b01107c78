// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "epiview/attention.hpp"
#include "epiview/membank.hpp"
#include "epiview/pretrain.hpp"
#include "epiview/synth.hpp"

using namespace epiview;

namespace {

FeatureTensor64 random_tensor(std::size_t v, std::size_t t, std::size_t d, std::uint64_t seed) {
  CounterRng rng(seed, 0, "bench");
  FeatureTensor64 z(v, t, d);
  for (auto& x : z.data()) x = rng.normal();
  return z;
}

MatrixD random_points(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  CounterRng rng(seed, 0, "bench");
  MatrixD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_EpipolarMask(benchmark::State& state) {
  const int patch = static_cast<int>(state.range(0));
  const PatchGrid grid = PatchGrid::make(224, 224, patch);
  const CameraRig rig = make_rig(SceneConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(build_epipolar_mask(grid, rig.f(0, 1), 1.0));
  state.SetLabel(std::to_string(grid.token_count()) + " tokens");
}
BENCHMARK(BM_EpipolarMask)->Arg(28)->Arg(14)->Arg(7)->Unit(benchmark::kMicrosecond);

void BM_EamForward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const SceneConfig scene;
  const CameraRig rig = make_rig(scene);
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(t))));
  const EpipolarMaskSet masks = build_mask_set(rig, PatchGrid::make(side * 28, side * 28, 28), 1.0);
  const auto z = random_tensor(3, masks.tokens(), 32, 1);
  const auto w = ProjectionWeights::random(32, 1);
  for (auto _ : state) benchmark::DoNotOptimize(eam_forward(z, masks, w));
}
BENCHMARK(BM_EamForward)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_EamBackward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto z = random_tensor(3, t, 32, 2);
  const auto w = ProjectionWeights::random(32, 2);
  const AttentionResult r = unmasked_mode(z, w);
  const auto g = random_tensor(3, t, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(eam_backward(r.cache, g));
}
BENCHMARK(BM_EamBackward)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_GreedyCoreset(benchmark::State& state) {
  const MatrixD x = random_points(state.range(0), 32, 4);
  const std::size_t count = coreset_size(0.1, static_cast<std::size_t>(x.rows()));
  for (auto _ : state) benchmark::DoNotOptimize(greedy_coreset(x, count, 0));
}
BENCHMARK(BM_GreedyCoreset)->Arg(1280)->Arg(12800)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  const MatrixD x = random_points(state.range(0), 32, 5);
  for (auto _ : state) benchmark::DoNotOptimize(kmeans_init(x, 20, 5));
}
BENCHMARK(BM_KMeans)->Arg(4096)->Arg(12800)->Unit(benchmark::kMillisecond);

void BM_ScoreView(benchmark::State& state) {
  const MatrixD z = random_points(64, 32, 6);
  const MatrixD bank = random_points(state.range(0), 32, 7);
  for (auto _ : state) benchmark::DoNotOptimize(score_view(z, bank));
}
BENCHMARK(BM_ScoreView)->Arg(1280)->Arg(3840)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
