#include <benchmark/benchmark.h>

#include "rockres/backbone.hpp"
#include "rockres/ops.hpp"
#include "rockres/rng.hpp"

using namespace rockres;

namespace {

Tensor<float> images(std::int64_t n, std::int64_t size) {
  NDArray<float> a({n, 3, size, size});
  CounterRng rng(5, 0);
  for (auto& v : a.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor<float>(std::move(a));
}

}  // namespace

// args: block kind, kernel-mod level
static void BM_BlockTrainStep(benchmark::State& state) {
  BlockVariant v;
  v.kind = static_cast<BlockKind>(state.range(0));
  v.channels_in = v.channels_out = 256;
  if (v.kind == BlockKind::modified_kernel) v.flags = ModFlags::ladder(static_cast<int>(state.range(1)));
  auto block = ResidualBlock<float>::build(v, "b", InitContext{1}, 14, 14);
  NDArray<float> a({8, 256, 14, 14});
  CounterRng rng(6, 0);
  for (auto& x : a.data()) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  const Tensor<float> x(std::move(a), true);
  for (auto _ : state) {
    auto y = block.forward(x, Mode::train);
    backward(y, NDArray<float>(y.shape(), 1.0f));
    benchmark::DoNotOptimize(y.value().ptr());
  }
}
BENCHMARK(BM_BlockTrainStep)
    ->Args({0, 0})
    ->Args({1, 1})
    ->Args({1, 4})
    ->Args({2, 0})
    ->Args({3, 0})
    ->Unit(benchmark::kMillisecond);

// arg: input size
static void BM_NetworkForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.input_height = cfg.input_width = state.range(0);
  Network<float> net(cfg);
  const auto x = images(1, state.range(0));
  NoGradGuard guard;
  for (auto _ : state) {
    auto y = net.forward(x, Mode::eval);
    benchmark::DoNotOptimize(y.value().ptr());
  }
}
BENCHMARK(BM_NetworkForward)->Arg(64)->Arg(224)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
