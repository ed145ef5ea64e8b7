#include <benchmark/benchmark.h>

#include "patchforge/model.hpp"
#include "patchforge/train.hpp"

using namespace patchforge;

static void BM_BackboneForward(benchmark::State& state) {
  model::Backbone bb = model::Backbone::build(archspec::preset("tinyfcn"), true, 1);
  const int64_t side = state.range(0);
  Tensor x({1, 3, side, side});
  Rng rng(2);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(bb.forward(x, false));
  }
}
BENCHMARK(BM_BackboneForward)->Arg(96)->Arg(192)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  // one full jigsaw optimization step: forward, loss, backward, SGD
  const int batch = static_cast<int>(state.range(0));
  model::Backbone bb = model::Backbone::build(archspec::preset("tinyfcn"), true, 1);
  const puzzle::GridSpec grid(3);
  const auto asg = archspec::cell_assignment(bb.profile(), 96, 96, grid);
  model::JigsawHead head(bb.out_channels(), 9, 4, 3);
  train::SgdState sgd;

  Rng rng(4);
  Tensor x({batch, 3, 96, 96});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  std::vector<int> labels(static_cast<size_t>(batch) * 9);
  for (int b = 0; b < batch; ++b) {
    const puzzle::Permutation sigma = puzzle::sample_permutation(rng, grid);
    for (int p = 0; p < 9; ++p) labels[static_cast<size_t>(b * 9 + p)] = sigma.sigma[static_cast<size_t>(p)];
  }

  for (auto _ : state) {
    bb.zero_grad();
    head.zero_grad();
    Tensor features = bb.forward(x, true);
    Tensor cells = model::pool_cells(features, asg);
    Tensor glogits;
    (void)train::jigsaw_loss(head.forward(cells), labels, &glogits);
    Tensor gcells = head.backward(glogits);
    (void)bb.backward(model::pool_cells_backward(gcells, asg, features.shape()));
    auto params = bb.params();
    auto grads = bb.grads();
    auto hp = head.params();
    auto hg = head.grads();
    params.insert(params.end(), hp.begin(), hp.end());
    grads.insert(grads.end(), hg.begin(), hg.end());
    sgd.step(params, grads, 0.01, 0.9);
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_JigsawLoss(benchmark::State& state) {
  Rng rng(5);
  Tensor logits({8, 25, 25});
  for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.normal();
  std::vector<int> labels(200);
  for (auto& v : labels) v = static_cast<int>(rng.uniform_int(25));
  Tensor grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train::jigsaw_loss(logits, labels, &grad));
  }
}
BENCHMARK(BM_JigsawLoss);
