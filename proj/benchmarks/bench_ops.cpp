#include <benchmark/benchmark.h>

#include "rockres/attention.hpp"
#include "rockres/augment.hpp"
#include "rockres/ops.hpp"
#include "rockres/rng.hpp"

using namespace rockres;

namespace {

Tensor<float> random(Shape shape, std::uint64_t seed, bool grad = false) {
  NDArray<float> a(std::move(shape));
  CounterRng rng(seed, 0);
  for (auto& v : a.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor<float>(std::move(a), grad);
}

}  // namespace

// args: channels, spatial size
static void BM_Conv3x3Forward(benchmark::State& state) {
  const auto c = state.range(0), s = state.range(1);
  const auto x = random({8, c, s, s}, 1);
  const auto w = random({c, c, 3, 3}, 2);
  NoGradGuard guard;
  for (auto _ : state) {
    auto y = conv2d(x, w, Tensor<float>(), 1, 1);
    benchmark::DoNotOptimize(y.value().ptr());
  }
  state.SetItemsProcessed(state.iterations() * 8 * c * c * 9 * s * s);
}
BENCHMARK(BM_Conv3x3Forward)->Args({64, 56})->Args({128, 28})->Args({512, 7})->Unit(benchmark::kMillisecond);

static void BM_Conv3x3Backward(benchmark::State& state) {
  const auto c = state.range(0), s = state.range(1);
  auto x = random({8, c, s, s}, 1, true);
  auto w = random({c, c, 3, 3}, 2, true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    auto y = conv2d(x, w, Tensor<float>(), 1, 1);
    backward(y, NDArray<float>(y.shape(), 1.0f));
    benchmark::DoNotOptimize(w.grad().ptr());
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({64, 56})->Args({512, 7})->Unit(benchmark::kMillisecond);

static void BM_MhsaForward(benchmark::State& state) {
  const auto c = state.range(0), s = state.range(1);
  auto layer = MHSALayer<float>::make(InitContext{1}, "mhsa", MHSAConfig{c, 4, s, s});
  const auto x = random({8, c, s, s}, 3);
  NoGradGuard guard;
  for (auto _ : state) {
    auto y = mhsa_forward(x, layer);
    benchmark::DoNotOptimize(y.value().ptr());
  }
}
BENCHMARK(BM_MhsaForward)->Args({512, 7})->Args({512, 2})->Unit(benchmark::kMillisecond);

static void BM_AugmentOne(benchmark::State& state) {
  Image img(256, 256);
  CounterRng rng(4, 0);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  AugmentSpec spec;
  std::uint64_t k = 0;
  for (auto _ : state) {
    auto out = augment_one(img, spec, k++);
    benchmark::DoNotOptimize(out.pixels.data());
  }
}
BENCHMARK(BM_AugmentOne)->Unit(benchmark::kMillisecond);

static void BM_DecodePpm(benchmark::State& state) {
  const auto bytes = encode_ppm(Image(224, 224, 128));
  for (auto _ : state) {
    auto img = decode_ppm(bytes);
    benchmark::DoNotOptimize(img.pixels.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes.size()));
}
BENCHMARK(BM_DecodePpm);
