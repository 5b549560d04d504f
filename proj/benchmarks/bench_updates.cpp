#include <random>

#include <benchmark/benchmark.h>

#include "wrp/architecture.hpp"
#include "wrp/layers.hpp"
#include "wrp/reparam.hpp"

namespace {

wrp::Tensor random_tensor(wrp::Shape shape, std::uint64_t seed) {
  wrp::Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (double& v : t.data()) v = normal(rng);
  return t;
}

// Plain gradient accumulation for a dense layer: the baseline the reparametrized
// update is compared against.
void BM_LinearBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t m = n, batch = 64;
  const wrp::LayerParams p = wrp::LayerParams::linear(n, m);
  const wrp::Tensor x = random_tensor({batch, n}, 1);
  const wrp::Tensor g = random_tensor({batch, m}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(wrp::linear_backward(g, x, p));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch * n * m));
}
BENCHMARK(BM_LinearBackward)->Arg(64)->Arg(256);

void BM_ReparamDeltaFromStats(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t m = n, batch = 64;
  const wrp::Tensor x = random_tensor({batch, n}, 1);
  const wrp::Tensor g = random_tensor({batch, m}, 2);
  const wrp::ReparamConstants c = wrp::ReparamConstants::identity(n, m);
  for (auto _ : state) {
    const wrp::BatchStats s = wrp::linear_batch_stats(x, g);
    benchmark::DoNotOptimize(wrp::reparam_delta(s, c));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch * n * m));
}
BENCHMARK(BM_ReparamDeltaFromStats)->Arg(64)->Arg(256);

void BM_ReparamDeltaPerExample(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t m = n, batch = 64;
  const wrp::Tensor x = random_tensor({batch, n}, 1);
  const wrp::Tensor g = random_tensor({batch, m}, 2);
  const wrp::ReparamConstants c = wrp::ReparamConstants::identity(n, m);
  for (auto _ : state) benchmark::DoNotOptimize(wrp::reparam_delta_per_example(x, g, c));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch * n * m));
}
BENCHMARK(BM_ReparamDeltaPerExample)->Arg(64)->Arg(256);

void BM_ConvForward(benchmark::State& state) {
  const wrp::LayerParams p = wrp::LayerParams::conv(3, 6, 5, 5);
  const wrp::Tensor x = random_tensor({64, 3, 32, 32}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(wrp::conv_forward(x, p));
}
BENCHMARK(BM_ConvForward)->Unit(benchmark::kMillisecond);

void BM_LeNetTrainStep(benchmark::State& state) {
  wrp::Network net = wrp::parse_architecture("C6(5x5)-P(2x2)-C16(5x5)-P(2x2)-F120-F84-F10",
                                             {3, 32, 32});
  std::mt19937_64 rng(4);
  net.initialize(rng);
  const wrp::Tensor x = random_tensor({64, 3, 32, 32}, 5);
  const wrp::Tensor g = random_tensor({64, 10}, 6);
  for (auto _ : state) {
    net.forward(x);
    benchmark::DoNotOptimize(net.backward(g));
  }
}
BENCHMARK(BM_LeNetTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
