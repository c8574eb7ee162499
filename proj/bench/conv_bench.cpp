// Serial reference vs OpenMP conv2d kernels.
#include <random>

#include <benchmark/benchmark.h>

#include "d3kit/conv.hpp"

namespace {

using namespace d3kit;

struct Problem {
  Tensor input;
  ConvKernel kernel;
  Tensor grad_out;
};

Problem make_problem(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const auto size = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(7);
  return Problem{random_normal(Shape{2, channels, size, size}, rng),
                 ConvKernel(random_normal(Shape{channels, channels, 3, 3}, rng)),
                 random_normal(Shape{2, channels, size, size}, rng)};
}

void BM_ReferenceForward(benchmark::State& state) {
  const Problem p = make_problem(state);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::conv2d(p.input, p.kernel, 2));
  }
}

void BM_ParallelForward(benchmark::State& state) {
  const Problem p = make_problem(state);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(p.input, p.kernel, 2));
}

void BM_ReferenceBackward(benchmark::State& state) {
  const Problem p = make_problem(state);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::conv2d_grads(p.input, p.kernel, 2, p.grad_out));
  }
}

void BM_ParallelBackward(benchmark::State& state) {
  const Problem p = make_problem(state);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_grads(p.input, p.kernel, 2, p.grad_out));
  }
}

}  // namespace

BENCHMARK(BM_ReferenceForward)->Args({16, 32})->Args({32, 64});
BENCHMARK(BM_ParallelForward)->Args({16, 32})->Args({32, 64});
BENCHMARK(BM_ReferenceBackward)->Args({16, 32})->Args({32, 64});
BENCHMARK(BM_ParallelBackward)->Args({16, 32})->Args({32, 64});

BENCHMARK_MAIN();
