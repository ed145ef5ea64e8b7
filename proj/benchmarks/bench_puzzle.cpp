#include <benchmark/benchmark.h>

#include "patchforge/puzzle.hpp"

using namespace patchforge;
using namespace patchforge::puzzle;

static Tensor bench_image(int64_t side) {
  Tensor img({3, side, side});
  Rng rng(1);
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform01();
  return img;
}

static void BM_SamplePermutation(benchmark::State& state) {
  const GridSpec grid(static_cast<int>(state.range(0)));
  Rng rng(2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_permutation(rng, grid));
  }
}
BENCHMARK(BM_SamplePermutation)->Arg(3)->Arg(5);

static void BM_DivideAssemble(benchmark::State& state) {
  const GridSpec grid(3);
  const Tensor img = bench_image(state.range(0));
  Rng rng(3);
  for (auto _ : state) {
    const Permutation sigma = sample_permutation(rng, grid);
    benchmark::DoNotOptimize(assemble(divide(img, grid), sigma, grid));
  }
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) * img.numel() *
                          static_cast<int64_t>(sizeof(double)));
}
BENCHMARK(BM_DivideAssemble)->Arg(96)->Arg(576);
