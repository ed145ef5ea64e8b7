#include <benchmark/benchmark.h>

#include "patchforge/archspec.hpp"

using namespace patchforge::archspec;

static void BM_ComputeRfProfile(benchmark::State& state, const char* name) {
  const ArchSpec arch = preset(name);
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_rf_profile(arch));
  }
}
BENCHMARK_CAPTURE(BM_ComputeRfProfile, alexnet, "alexnet");
BENCHMARK_CAPTURE(BM_ComputeRfProfile, resnet101, "resnet101");

static void BM_BruteForceRf(benchmark::State& state) {
  const ArchSpec arch = preset("tinyfcn");
  for (auto _ : state) {
    benchmark::DoNotOptimize(brute_force_rf(arch, 576));
  }
}
BENCHMARK(BM_BruteForceRf);

static void BM_CellAssignment(benchmark::State& state) {
  const RFProfile profile = compute_rf_profile(preset("tinyfcn"));
  const patchforge::puzzle::GridSpec grid(static_cast<int>(state.range(0)));
  const int64_t input = 192 * grid.side;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cell_assignment(profile, input, input, grid));
  }
}
BENCHMARK(BM_CellAssignment)->Arg(3)->Arg(5);

static void BM_ParseArch(benchmark::State& state) {
  const std::string text = preset_text("resnet101");
  for (auto _ : state) {
    benchmark::DoNotOptimize(parse_arch(text));
  }
}
BENCHMARK(BM_ParseArch);
