// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tractseg/losses.hpp"
#include "tractseg/ops.hpp"
#include "tractseg/rle.hpp"
#include "tractseg/unet.hpp"

using namespace tractseg;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(shape.numel());
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(shape, std::move(v), requires_grad);
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  Tensor x = random_tensor({2, c, hw, hw}, 1);
  Tensor w = random_tensor({c, c, 3, 3}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Tensor{}, {1, 1, 1}).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * c * c * 9 * hw * hw));
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 64})->Args({32, 32})->Args({64, 16});

void BM_Conv3x3Backward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  Tensor x = random_tensor({2, c, hw, hw}, 1, true);
  Tensor w = random_tensor({c, c, 3, 3}, 2, true);
  for (auto _ : state) {
    Tensor loss = sum(conv2d(x, w, Tensor{}, {1, 1, 1}));
    backward(loss);
    x.zero_grad();
    w.zero_grad();
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 64})->Args({32, 32});

void BM_Conv3x3WeightGrad(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  Tensor x = random_tensor({2, c, hw, hw}, 1);
  Tensor w = random_tensor({c, c, 3, 3}, 2, true);
  for (auto _ : state) {
    Tensor loss = sum(conv2d(x, w, Tensor{}, {1, 1, 1}));
    backward(loss);
    w.zero_grad();
  }
}
BENCHMARK(BM_Conv3x3WeightGrad)->Args({16, 64});

void BM_UNetTrainStep(benchmark::State& state) {
  UNetConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = static_cast<std::size_t>(state.range(0));
  Model model = Model::build(cfg);
  Tensor x = random_tensor({6, 1, 64, 64}, 3);
  std::vector<float> t(6 * 3 * 64 * 64);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>((i / 7) % 2);
  Tensor truth = Tensor::from_data({6, 3, 64, 64}, std::move(t));
  for (auto _ : state) {
    model.zero_grad();
    Tensor loss = combined_loss(LossKind{}, sigmoid(model.forward(x, true)), truth);
    backward(loss);
  }
}
BENCHMARK(BM_UNetTrainStep)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_RleRoundTrip(benchmark::State& state) {
  BinaryMask m(288, 288, 0);
  std::mt19937_64 rng(4);
  for (std::size_t r = 40; r < 200; ++r) {
    for (std::size_t c = 60 + rng() % 20; c < 220; ++c) m.at(r, c) = 1;
  }
  for (auto _ : state) benchmark::DoNotOptimize(decode_rle(encode_rle(m), 288, 288).values.data());
}
BENCHMARK(BM_RleRoundTrip);

}  // namespace

BENCHMARK_MAIN();
