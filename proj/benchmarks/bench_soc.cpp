#include <benchmark/benchmark.h>

#include <random>

#include "soc/lipnet.hpp"
#include "soc/soc_layer.hpp"

namespace {

// Args: channels, spatial size, series terms.
void BM_SocForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const int k = static_cast<int>(state.range(2));
  std::mt19937_64 rng(0);
  soc::SocConfig cfg;
  cfg.c_in = cfg.c_out = c;
  const soc::SocLayer layer = soc::SocLayer::random(cfg, rng);
  const soc::Tensor x = soc::Tensor::randn({c, n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(soc::soc_apply(layer, x, k));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_SocForward)->ArgsProduct({{4, 16}, {8, 16}, {1, 6, 12}})->Unit(benchmark::kMicrosecond);

void BM_SocBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(1);
  soc::SocConfig cfg;
  cfg.c_in = cfg.c_out = c;
  const soc::SocLayer layer = soc::SocLayer::random(cfg, rng);
  const auto [y, tape] = soc::soc_forward(layer, soc::Tensor::randn({c, n, n}, rng), cfg.k_train);
  const soc::Tensor g = soc::Tensor::randn(y.dims(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(soc::soc_backward(layer, tape, g));
}
BENCHMARK(BM_SocBackward)->ArgsProduct({{4, 16}, {8, 16}})->Unit(benchmark::kMicrosecond);

void BM_SpectralBound(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const soc::Filter l = soc::make_skew(soc::Filter(soc::Tensor::randn({c, c, 3, 3}, rng))).skew;
  for (auto _ : state) benchmark::DoNotOptimize(soc::spectral_bound(l));
}
BENCHMARK(BM_SpectralBound)->Arg(4)->Arg(16)->Unit(benchmark::kMicrosecond);

void BM_TinyForward(benchmark::State& state) {
  std::mt19937_64 rng(3);
  soc::LipNet net(soc::LipNetConfig::tiny(), 0);
  const soc::Tensor x = soc::Tensor::randn({1, 8, 8}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_TinyForward)->Arg(6)->Arg(12)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
