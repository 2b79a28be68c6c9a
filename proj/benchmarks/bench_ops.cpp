// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "gbt/nn/ops.hpp"

namespace {

using namespace gbt::nn;

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor<float> a = random_tensor({n, n}, 1);
  const Tensor<float> b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Graph<float> g;
    const Var y = mean(g, matmul(g, g.input(a), g.input(b)));
    g.backward(y);
    benchmark::DoNotOptimize(g.value(y)[0]);
  }
  state.SetItemsProcessed(state.iterations() * 3 * state.range(0) * state.range(0) * state.range(0));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(64)->Arg(192);

// Attention logits [heads, Q, N] with a shared distance bias [Q, N].
void BM_SoftmaxWithBias(benchmark::State& state) {
  const std::size_t q = static_cast<std::size_t>(state.range(0));
  const Tensor<float> logits = random_tensor({4, q, 192}, 3);
  const Tensor<float> bias = random_tensor({q, 192}, 4);
  for (auto _ : state) {
    Graph<float> g;
    const Var y = mean(g, square(g, softmax_with_bias(g, g.input(logits), g.input(bias))));
    g.backward(y);
    benchmark::DoNotOptimize(g.value(y)[0]);
  }
}
BENCHMARK(BM_SoftmaxWithBias)->Arg(192)->Arg(512);

void BM_Layernorm(benchmark::State& state) {
  const Tensor<float> x = random_tensor({512, 64}, 5);
  const Tensor<float> gain({64}, 1.0f);
  const Tensor<float> shift({64}, 0.0f);
  for (auto _ : state) {
    Graph<float> g;
    const Var y = mean(g, square(g, layernorm(g, g.input(x), g.input(gain), g.input(shift))));
    g.backward(y);
    benchmark::DoNotOptimize(g.value(y)[0]);
  }
}
BENCHMARK(BM_Layernorm);

void BM_Conv2d(benchmark::State& state) {
  const Tensor<float> x = random_tensor({3, 3, 64, 64}, 6);
  const Tensor<float> k = random_tensor({16, 3, 3, 3}, 7);
  const Tensor<float> b({16}, 0.0f);
  for (auto _ : state) {
    Graph<float> g;
    const Var y = mean(g, conv2d(g, g.input(x), g.input(k), g.input(b), 2, 1));
    g.backward(y);
    benchmark::DoNotOptimize(g.value(y)[0]);
  }
}
BENCHMARK(BM_Conv2d);

}  // namespace
