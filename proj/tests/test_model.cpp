#include <doctest.h>

#include "patchforge/model.hpp"
#include "patchforge/puzzle.hpp"
#include "patchforge/train.hpp"
#include "test_util.hpp"

using namespace patchforge;
using namespace patchforge::model;

TEST_CASE("tinyfcn feature map shapes") {
  Backbone bb = Backbone::build(archspec::preset("tinyfcn"), false, 1);
  Tensor x({1, 3, 576, 576});
  const FeatureMap fm = backbone_forward(bb, x, false);
  REQUIRE(fm.values.shape() == std::vector<int64_t>{1, 64, 18, 18});
  CHECK(fm.profile.rf == 187);

  Tensor x2({1, 3, 960, 960});
  CHECK(bb.forward(x2, false).dim(2) == 30);
}

TEST_CASE("plain-conv tinyfcn maps zero to zero") {
  Backbone bb = Backbone::build(archspec::preset("tinyfcn"), false, 2);
  Tensor x({1, 3, 96, 96});  // all zeros, biases initialize to zero
  const Tensor y = bb.forward(x, false);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("pool_cells averages each cell") {
  const archspec::RFProfile profile = archspec::compute_rf_profile(archspec::preset("tinyfcn"));
  const puzzle::GridSpec grid(3);
  const auto asg = archspec::cell_assignment(profile, 96, 96, grid);

  Tensor fm = Tensor::full({2, 5, asg.feature_h, asg.feature_w}, 3.25);
  const Tensor cells = pool_cells(fm, asg);
  REQUIRE(cells.shape() == std::vector<int64_t>{2, 9, 5});
  for (int64_t i = 0; i < cells.numel(); ++i) CHECK(cells[i] == doctest::Approx(3.25).epsilon(1e-15));
}

TEST_CASE("pool_cells with one pixel per cell is a reordering") {
  archspec::ArchSpec arch;
  arch.input_channels = 3;
  arch.layers.push_back({"only", archspec::LayerKind::conv, 4, 4, 0, 2});
  const auto profile = archspec::compute_rf_profile(arch);
  const puzzle::GridSpec grid(3);
  const auto asg = archspec::cell_assignment(profile, 12, 12, grid);

  Rng rng(3);
  Tensor fm({1, 2, 3, 3});
  testutil::fill_random(fm, rng);
  const Tensor cells = pool_cells(fm, asg);
  for (int cell = 0; cell < 9; ++cell) {
    const int64_t flat = asg.cell_pixels[static_cast<size_t>(cell)][0];
    for (int64_t c = 0; c < 2; ++c) CHECK(cells.at(0, cell, c) == fm[c * 9 + flat]);
  }
}

TEST_CASE("pool_cells over a single cell averages everything") {
  archspec::RFProfile p{4, 4, 0};
  const auto asg = archspec::cell_assignment(p, 8, 8, puzzle::GridSpec(1));
  Tensor fm({1, 1, 2, 2});
  fm[0] = 1;
  fm[1] = 2;
  fm[2] = 3;
  fm[3] = 6;
  const Tensor cells = pool_cells(fm, asg);
  CHECK(cells.numel() == 1);
  CHECK(cells[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("jigsaw head with zero weights emits zero logits") {
  JigsawHead head(8, 9, 4, 11);
  for (auto& nt : head.params()) nt.tensor->fill(0.0);
  Rng rng(4);
  Tensor feats({2, 9, 8});
  testutil::fill_random(feats, rng);
  const Tensor logits = head.forward(feats);
  REQUIRE(logits.shape() == std::vector<int64_t>{2, 9, 9});
  for (int64_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == 0.0);
}

TEST_CASE("jigsaw head logits shape contract at C=512") {
  JigsawHead head(512, 9, 4, 12);
  Tensor feats({1, 9, 512});
  Rng rng(5);
  testutil::fill_random(feats, rng, 0.05);
  CHECK(head.forward(feats).shape() == std::vector<int64_t>{1, 9, 9});
}

TEST_CASE("jigsaw head is position-wise: permuting rows permutes logits") {
  const int C = 6, N = 9, center = 4;
  JigsawHead head(C, N, center, 13);
  Rng rng(6);
  Tensor feats({1, N, C});
  testutil::fill_random(feats, rng);
  const Tensor base = head.forward(feats);

  // permute the non-center rows
  std::vector<int> perm = {2, 0, 5, 1, 4, 3, 8, 7, 6};
  Tensor shuffled({1, N, C});
  for (int p = 0; p < N; ++p)
    for (int c = 0; c < C; ++c) shuffled.at(0, p, c) = feats.at(0, perm[static_cast<size_t>(p)], c);
  const Tensor moved = head.forward(shuffled);
  for (int p = 0; p < N; ++p)
    for (int l = 0; l < N; ++l)
      CHECK(moved.at(0, p, l) == doctest::Approx(base.at(0, perm[static_cast<size_t>(p)], l)).epsilon(1e-12));
}

TEST_CASE("head parameter arithmetic") {
  CHECK(head_param_count(512, 9, ConcatMode::permutation_concat) == 2359296);  // 4608*512
  CHECK(head_param_count(512, 9, ConcatMode::reference_concat) == 524288);     // 1024*512
  CHECK(head_param_count(1, 9, ConcatMode::reference_concat) == 1024);
  JigsawHead head(512, 9, 4, 14);
  CHECK(head.reduce_weight_count() == head_param_count(512, 9, ConcatMode::reference_concat));
  CHECK(head.trainable_param_count() ==
        head_param_count(512, 9, ConcatMode::reference_concat) + 512 + 512 * 9 + 9);
}

TEST_CASE("seg head produces input-resolution scores") {
  Backbone bb = Backbone::build(archspec::preset("tinyfcn"), false, 3);
  SegHead head(bb.out_channels(), 5, 32, 15);
  Tensor x({1, 3, 96, 96});
  Rng rng(7);
  testutil::fill_random(x, rng, 0.3);
  const Tensor scores = seg_forward(bb, head, x, false);
  CHECK(scores.shape() == std::vector<int64_t>{1, 5, 96, 96});
}

TEST_CASE("per-pixel softmax is shift invariant and uniform at equal scores") {
  Tensor scores({1, 4, 2, 2});
  Rng rng(8);
  testutil::fill_random(scores, rng);
  Tensor mask({1, 1, 2, 2});
  mask.fill(1.0);
  const double base = train::seg_cross_entropy(scores, mask);

  Tensor shifted = scores;
  for (int64_t y = 0; y < 2; ++y)
    for (int64_t x = 0; x < 2; ++x) {
      const double c = 10.0 * rng.uniform01();
      for (int64_t k = 0; k < 4; ++k) shifted.at(0, k, y, x) += c;
    }
  CHECK(train::seg_cross_entropy(shifted, mask) == doctest::Approx(base).epsilon(1e-9));

  Tensor uniform = Tensor::full({1, 4, 2, 2}, 0.7);
  CHECK(train::seg_cross_entropy(uniform, mask) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("patch equivariance at the exact-locality limit") {
  // one-layer backbone with kernel == stride == 4: receptive fields do not
  // overlap, so shuffling input patches permutes pooled cell features exactly
  archspec::ArchSpec arch;
  arch.input_channels = 3;
  arch.layers.push_back({"only", archspec::LayerKind::conv, 4, 4, 0, 6});
  Backbone bb = Backbone::build(arch, false, 16);
  const puzzle::GridSpec grid(3);
  const auto asg = archspec::cell_assignment(bb.profile(), 12, 12, grid);
  JigsawHead head(6, 9, grid.center_index(), 17);

  Rng rng(9);
  Tensor img({3, 12, 12});
  testutil::fill_random(img, rng);
  const puzzle::Permutation sigma = puzzle::sample_permutation(rng, grid);

  auto run = [&](const Tensor& chw) {
    Tensor batch({1, 3, 12, 12});
    std::copy(chw.data(), chw.data() + chw.numel(), batch.data());
    const Tensor cells = pool_cells(bb.forward(batch, false), asg);
    return std::pair<Tensor, Tensor>(cells, head.forward(cells));
  };

  const auto [cells_plain, logits_plain] = run(img);
  const puzzle::PuzzleSample shuffled =
      puzzle::assemble(puzzle::divide(img, grid), sigma, grid);
  const auto [cells_shuffled, logits_shuffled] = run(shuffled.image);

  // equality up to GEMM accumulation-order noise: the backend may sum a
  // column in a different vector order once the patch moves position
  for (int p = 0; p < 9; ++p) {
    const int src = sigma.sigma[static_cast<size_t>(p)];
    for (int c = 0; c < 6; ++c)
      CHECK(cells_shuffled.at(0, p, c) ==
            doctest::Approx(cells_plain.at(0, src, c)).epsilon(1e-12));
    for (int l = 0; l < 9; ++l)
      CHECK(logits_shuffled.at(0, p, l) ==
            doctest::Approx(logits_plain.at(0, src, l)).epsilon(1e-12));
  }
}

TEST_CASE("full jigsaw path gradients match finite differences") {
  archspec::ArchSpec arch;
  arch.input_channels = 3;
  arch.layers.push_back({"c1", archspec::LayerKind::conv, 3, 2, 1, 4});
  arch.layers.push_back({"c2", archspec::LayerKind::conv, 3, 2, 1, 5});
  const puzzle::GridSpec grid(3);
  const std::vector<int> labels = {3, 1, 2, 0, 4, 8, 6, 7, 5};

  for (bool bn : {false, true}) {
    CAPTURE(bn);
    Backbone bb = Backbone::build(arch, bn, 18);
    const auto asg = archspec::cell_assignment(bb.profile(), 12, 12, grid);
    JigsawHead head(5, 9, grid.center_index(), 19, 16);
    Rng rng(10);
    Tensor x({1, 3, 12, 12});
    testutil::fill_random(x, rng);

    auto params = bb.params();
    auto grads = bb.grads();
    auto hp = head.params();
    auto hg = head.grads();
    params.insert(params.end(), hp.begin(), hp.end());
    grads.insert(grads.end(), hg.begin(), hg.end());

    auto loss_fn = [&]() {
      Backbone probe = Backbone::build(arch, bn, 18);
      JigsawHead phead(5, 9, grid.center_index(), 19, 16);
      auto pp = probe.params();
      auto php = phead.params();
      pp.insert(pp.end(), php.begin(), php.end());
      for (size_t i = 0; i < pp.size(); ++i) *pp[i].tensor = *params[i].tensor;
      const Tensor cells = pool_cells(probe.forward(x, true), asg);
      return train::jigsaw_loss(phead.forward(cells), labels);
    };

    bb.zero_grad();
    head.zero_grad();
    Tensor features = bb.forward(x, true);
    Tensor cells = pool_cells(features, asg);
    Tensor logits = head.forward(cells);
    Tensor glogits;
    (void)train::jigsaw_loss(logits, labels, &glogits);
    Tensor gcells = head.backward(glogits);
    Tensor gfeatures = pool_cells_backward(gcells, asg, features.shape());
    (void)bb.backward(gfeatures);

    CHECK(testutil::gradcheck_params(loss_fn, params, grads, rng, 6) < 1e-4);
  }
}

TEST_CASE("full segmentation path gradients match finite differences") {
  archspec::ArchSpec arch;
  arch.input_channels = 3;
  arch.layers.push_back({"c1", archspec::LayerKind::conv, 3, 2, 1, 4});
  arch.layers.push_back({"c2", archspec::LayerKind::conv, 3, 2, 1, 5});
  Backbone bb = Backbone::build(arch, false, 20);
  SegHead head(5, 3, 4, 21);

  Rng rng(11);
  Tensor x({1, 3, 8, 8});
  testutil::fill_random(x, rng);
  Tensor mask({1, 1, 8, 8});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = static_cast<double>(rng.uniform_int(3));

  auto params = bb.params();
  auto grads = bb.grads();
  auto hp = head.params();
  auto hg = head.grads();
  params.insert(params.end(), hp.begin(), hp.end());
  grads.insert(grads.end(), hg.begin(), hg.end());

  auto loss_fn = [&]() {
    Backbone probe = Backbone::build(arch, false, 20);
    SegHead phead(5, 3, 4, 21);
    auto pp = probe.params();
    auto php = phead.params();
    pp.insert(pp.end(), php.begin(), php.end());
    for (size_t i = 0; i < pp.size(); ++i) *pp[i].tensor = *params[i].tensor;
    return train::seg_cross_entropy(seg_forward(probe, phead, x, true), mask);
  };

  bb.zero_grad();
  head.zero_grad();
  Tensor scores = seg_forward(bb, head, x, true);
  Tensor gscores;
  (void)train::seg_cross_entropy(scores, mask, -1, &gscores);
  Tensor gfeat = head.backward(gscores);
  (void)bb.backward(gfeat);

  CHECK(testutil::gradcheck_params(loss_fn, params, grads, rng, 6) < 1e-4);
}

TEST_CASE("backbone fingerprint distinguishes construction options") {
  const auto arch = archspec::preset("tinyfcn");
  Backbone a = Backbone::build(arch, false, 1);
  Backbone b = Backbone::build(arch, true, 1);
  CHECK(a.fingerprint() != b.fingerprint());
  Backbone c = Backbone::build(archspec::preset("alexnet"), false, 1);
  CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("block lookup by tensor name") {
  Backbone bb = Backbone::build(archspec::preset("tinyfcn"), true, 1);
  CHECK(bb.block_of("b1c1.weight") == 0);
  CHECK(bb.block_of("b3c2.bn.gamma") == 2);
  CHECK(bb.block_of("b5c2.bn.running_var") == 4);
  CHECK(bb.block_of("unknown.weight") == -1);
}
