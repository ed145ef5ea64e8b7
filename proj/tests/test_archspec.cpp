#include <doctest.h>

#include "patchforge/archspec.hpp"
#include "patchforge/nn.hpp"
#include "test_util.hpp"

using namespace patchforge;
using namespace patchforge::archspec;

namespace {

ArchSpec chain(std::vector<std::array<int, 3>> ksp) {
  ArchSpec arch;
  arch.input_channels = 1;
  int i = 0;
  for (auto [k, s, p] : ksp) {
    LayerSpec l;
    l.name = "l" + std::to_string(i++);
    l.kind = LayerKind::conv;
    l.kernel = k;
    l.stride = s;
    l.padding = p;
    l.out_channels = 1;
    arch.layers.push_back(l);
  }
  return arch;
}

}  // namespace

TEST_CASE("rf profile of a single conv k3 s1 p1") {
  const RFProfile p = compute_rf_profile(chain({{3, 1, 1}}));
  CHECK(p.rf == 3);
  CHECK(p.effective_stride == 1);
  CHECK(p.effective_padding == 1);
}

TEST_CASE("rf profiles of the shipped presets") {
  const RFProfile alex = compute_rf_profile(preset("alexnet"));
  CHECK(alex.rf == 195);
  CHECK(alex.effective_stride == 32);

  const RFProfile vgg = compute_rf_profile(preset("vgg16"));
  CHECK(vgg.rf == 212);
  CHECK(vgg.effective_stride == 32);

  const RFProfile res = compute_rf_profile(preset("resnet101"));
  CHECK(res.rf == 1027);
  CHECK(res.effective_stride == 32);

  const RFProfile tiny = compute_rf_profile(preset("tinyfcn"));
  CHECK(tiny.rf == 187);
  CHECK(tiny.effective_stride == 32);
  CHECK(tiny.effective_padding == 93);

  const RFProfile mn = compute_rf_profile(preset("mobilenetv2_075"));
  CHECK(mn.effective_stride == 32);
}

TEST_CASE("preset structure") {
  CHECK(preset("tinyfcn").num_blocks() == 5);
  CHECK(preset("resnet101").num_blocks() == 5);
  CHECK(preset("mobilenetv2_075").num_blocks() == 5);
  CHECK(preset("tinyfcn").out_channels() == 64);
  CHECK(preset("mobilenetv2_075").out_channels() == 512);
  CHECK(preset("resnet101").layers.size() == 101);
  CHECK_THROWS_AS((void)preset("nope"), Error);
}

TEST_CASE("empty architecture is rejected") {
  ArchSpec empty;
  CHECK_THROWS_WITH_AS((void)compute_rf_profile(empty), doctest::Contains("empty layer list"), Error);
}

TEST_CASE("block starts must sit on stride>1 layers") {
  ArchSpec arch = chain({{3, 2, 1}, {3, 1, 1}});
  arch.block_starts = {0, 1};  // layer 1 has stride 1
  CHECK_THROWS_AS(arch.validate(), Error);
  arch.block_starts = {0};
  CHECK_NOTHROW(arch.validate());
}

TEST_CASE("rf_center direct substitution") {
  RFProfile p{7, 4, 0};
  auto [h, v] = rf_center(p, 0, 0);
  CHECK(h.twice == 6);  // 3.0
  CHECK(v.value() == 3.0);

  const RFProfile tiny = compute_rf_profile(preset("tinyfcn"));
  CHECK(rf_center(tiny, 0, 0).first.twice == 0);
  CHECK(rf_center(tiny, 0, 0).second.twice == 0);
  CHECK(rf_center(tiny, 1, 0).first.value() == 32.0);
  CHECK(rf_center(tiny, 1, 0).second.value() == 0.0);
}

TEST_CASE("rf centers of adjacent feature pixels differ by S0") {
  Rng rng(41);
  for (int rep = 0; rep < 30; ++rep) {
    RFProfile p;
    p.rf = 1 + static_cast<int64_t>(rng.uniform_int(300));
    p.effective_stride = 1 + static_cast<int64_t>(rng.uniform_int(40));
    p.effective_padding = static_cast<int64_t>(rng.uniform_int(100));
    const int64_t i = static_cast<int64_t>(rng.uniform_int(50));
    const int64_t j = static_cast<int64_t>(rng.uniform_int(50));
    CHECK(rf_center(p, i + 1, j).first.twice - rf_center(p, i, j).first.twice == 2 * p.effective_stride);
    CHECK(rf_center(p, i, j + 1).second.twice - rf_center(p, i, j).second.twice == 2 * p.effective_stride);
  }
}

TEST_CASE("half-unit rounding is half-down") {
  CHECK(HalfUnit{5}.round_half_down() == 2);    // 2.5 -> 2
  CHECK(HalfUnit{-1}.round_half_down() == -1);  // -0.5 -> -1
  CHECK(HalfUnit{4}.round_half_down() == 2);
  CHECK_FALSE(HalfUnit{5}.is_integer());
  CHECK(HalfUnit{4}.is_integer());
}

TEST_CASE("brute force on hand-evaluated chains") {
  // conv k3 s2 then conv k3 s2, no padding: 2*1 + 2*2 + 1 = 7
  const auto a = brute_force_rf(chain({{3, 2, 0}, {3, 2, 0}}), 31);
  CHECK(a.rf == 7);
  const auto b = brute_force_rf(chain({{5, 1, 0}}), 21);
  CHECK(b.rf == 5);
}

TEST_CASE("brute force rejects too-small inputs") {
  CHECK_THROWS_WITH_AS((void)brute_force_rf(chain({{5, 1, 2}}), 3), doctest::Contains("insufficient input"),
                       Error);
}

TEST_CASE("profile equals brute force on random chains") {
  Rng rng(1234);
  int done = 0;
  while (done < 60) {
    const int depth = 1 + static_cast<int>(rng.uniform_int(6));
    std::vector<std::array<int, 3>> ksp;
    for (int l = 0; l < depth; ++l)
      ksp.push_back({1 + static_cast<int>(rng.uniform_int(7)), 1 + static_cast<int>(rng.uniform_int(3)),
                     static_cast<int>(rng.uniform_int(4))});
    const ArchSpec arch = chain(ksp);
    const RFProfile p = compute_rf_profile(arch);
    // pick an input comfortably larger than the RF so a central pixel is interior
    const int64_t input = p.rf * 2 + p.effective_stride * 4 + 16;
    BruteForceResult bf;
    try {
      bf = brute_force_rf(arch, input);
    } catch (const Error&) {
      continue;  // degenerate chain for this size; resample
    }
    REQUIRE(bf.rf == p.rf);
    for (int64_t i = 0; i < bf.out_size; ++i) {
      CHECK(bf.centers[static_cast<size_t>(i)] == rf_center(p, i, 0).first);
    }
    int64_t stride_product = 1;
    for (const auto& l : arch.layers) stride_product *= l.stride;
    CHECK(p.effective_stride == stride_product);
    ++done;
  }
}

TEST_CASE("stride-1 layers never change the effective stride") {
  ArchSpec arch = chain({{3, 2, 1}, {5, 3, 0}});
  const int64_t s0 = compute_rf_profile(arch).effective_stride;
  ArchSpec extended = arch;
  LayerSpec extra;
  extra.name = "extra";
  extra.kind = LayerKind::conv;
  extra.kernel = 3;
  extra.stride = 1;
  extra.padding = 1;
  extra.out_channels = 1;
  extended.layers.push_back(extra);
  CHECK(compute_rf_profile(extended).effective_stride == s0);
}

TEST_CASE("numeric dependency marking agrees with the interval oracle") {
  // run impulses through a real convolution stack with all-ones kernels and
  // read off which input pixels reach the central output pixel
  const std::vector<std::array<int, 3>> ksp = {{3, 2, 1}, {3, 2, 1}};
  const ArchSpec arch = chain(ksp);
  const int64_t input = 21;
  const auto bf = brute_force_rf(arch, input);

  Rng rng(5);
  std::vector<std::unique_ptr<nn::Conv2d>> convs;
  for (size_t i = 0; i < ksp.size(); ++i) {
    auto c = std::make_unique<nn::Conv2d>("c" + std::to_string(i), 1, 1, ksp[i][0], ksp[i][1], ksp[i][2],
                                          false, rng);
    c->weight().fill(1.0);
    convs.push_back(std::move(c));
  }
  const int64_t mid = (bf.out_size - 1) / 2;
  int64_t first = -1, last = -1;
  for (int64_t px = 0; px < input; ++px) {
    Tensor x({1, 1, input, input});
    x.at(0, 0, px, input / 2) = 1.0;
    Tensor y = x;
    for (auto& c : convs) y = c->forward(y, false);
    if (y.at(0, 0, mid, mid) > 0.0) {
      if (first < 0) first = px;
      last = px;
    }
  }
  CHECK(first == bf.extents[static_cast<size_t>(mid)].first);
  CHECK(last == bf.extents[static_cast<size_t>(mid)].second);
  CHECK(last - first + 1 == bf.rf);
}

TEST_CASE("cell assignment for the tinyfcn preset") {
  const RFProfile tiny = compute_rf_profile(preset("tinyfcn"));
  const puzzle::GridSpec g3(3);
  const CellAssignment a = cell_assignment(tiny, 576, 576, g3);
  CHECK(a.feature_h == 18);
  CHECK(a.feature_w == 18);
  for (const auto& cell : a.cell_pixels) CHECK(cell.size() == 36);

  const puzzle::GridSpec g5(5);
  const CellAssignment b = cell_assignment(tiny, 960, 960, g5);
  CHECK(b.feature_h == 30);
  for (const auto& cell : b.cell_pixels) CHECK(cell.size() == 36);
}

TEST_CASE("non-overlapping RFs give one feature pixel per cell") {
  // r = S0, P0 = 0: single conv with kernel == stride
  const ArchSpec arch = chain({{4, 4, 0}});
  const RFProfile p = compute_rf_profile(arch);
  CHECK(p.rf == p.effective_stride);
  const puzzle::GridSpec g3(3);
  const CellAssignment a = cell_assignment(p, 12, 12, g3);
  CHECK(a.feature_h == 3);
  for (const auto& cell : a.cell_pixels) CHECK(cell.size() == 1);
}

TEST_CASE("cell assignment partitions the feature grid") {
  const RFProfile tiny = compute_rf_profile(preset("tinyfcn"));
  const puzzle::GridSpec g3(3);
  const CellAssignment a = cell_assignment(tiny, 192, 192, g3);
  std::vector<int> seen(static_cast<size_t>(a.feature_h * a.feature_w), 0);
  for (int c = 0; c < a.num_cells(); ++c)
    for (int64_t flat : a.cell_pixels[static_cast<size_t>(c)]) {
      CHECK(a.cell_of[static_cast<size_t>(flat)] == c);
      ++seen[static_cast<size_t>(flat)];
    }
  for (int v : seen) CHECK(v == 1);  // disjoint and covering
}

TEST_CASE("cell assignment reports starved cells") {
  // centers -2, 2, 6, 10 on a 9px image with 3px cells: cell 1 gets nothing
  RFProfile p{1, 4, 2};
  CHECK_THROWS_WITH_AS((void)cell_assignment(p, 9, 9, puzzle::GridSpec(3)),
                       doctest::Contains("resolution mismatch"), Error);
  CHECK_THROWS_WITH_AS((void)cell_assignment(p, 9, 9, puzzle::GridSpec(3)), doctest::Contains("cell 1"),
                       Error);
}

TEST_CASE("architecture files round-trip through the parser") {
  for (const auto& name : preset_names()) {
    const ArchSpec a = preset(name);
    const ArchSpec b = parse_arch(a.canonical_text());
    CHECK(a == b);
    CHECK(a.fingerprint() == b.fingerprint());
  }
}

TEST_CASE("arch parser diagnostics") {
  CHECK_THROWS_WITH_AS((void)parse_arch("c1 conv 3 1\n"), doctest::Contains("expected"), Error);
  CHECK_THROWS_WITH_AS((void)parse_arch("c1 wat 3 1 1\n"), doctest::Contains("unknown layer kind"), Error);
  CHECK_THROWS_WITH_AS((void)parse_arch("c1 conv 3 1 1\n"), doctest::Contains("out_channels"), Error);
  CHECK_NOTHROW((void)parse_arch("# comment\n\np1 pool 2 2 0\n"));
}

TEST_CASE("shipped preset files match the built-in presets") {
  const auto dir = std::filesystem::path(PATCHFORGE_SOURCE_DIR) / "presets";
  for (const auto& name : preset_names()) {
    const ArchSpec from_file = load_arch(dir / (name + ".arch"));
    CHECK(from_file == preset(name));
  }
}
