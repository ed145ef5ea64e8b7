#include <doctest.h>

#include <fstream>

#include "patchforge/dataio.hpp"
#include "test_util.hpp"

using namespace patchforge;
using namespace patchforge::dataio;

namespace {

ImageU8 random_rgb(int64_t h, int64_t w, uint64_t seed) {
  ImageU8 img;
  img.channels = 3;
  img.h = h;
  img.w = w;
  img.pixels.resize(static_cast<size_t>(3 * h * w));
  Rng rng(seed);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
  return img;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("png round-trip") {
  testutil::TempDir tmp("png");
  const ImageU8 img = random_rgb(17, 23, 3);
  write_png(tmp / "x.png", img);
  const ImageU8 back = read_png(tmp / "x.png");
  CHECK(back.channels == 3);
  CHECK(back.h == 17);
  CHECK(back.pixels == img.pixels);

  ImageU8 gray;
  gray.channels = 1;
  gray.h = 5;
  gray.w = 7;
  gray.pixels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17,
                 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33, 34};
  write_png(tmp / "g.png", gray);
  CHECK(read_png(tmp / "g.png").pixels == gray.pixels);
}

TEST_CASE("manifest parsing preserves order and validates") {
  testutil::TempDir tmp("manifest");
  write_png(tmp / "a.png", random_rgb(4, 4, 1));
  write_png(tmp / "b.png", random_rgb(4, 4, 2));
  write_png(tmp / "m.png", random_rgb(4, 4, 3));

  write_file(tmp / "ok.tsv", "a.png\nb.png\tm.png\n");
  const DatasetManifest m = load_manifest(tmp / "ok.tsv");
  REQUIRE(m.size() == 2);
  CHECK(m.entries[0].image_path == "a.png");
  CHECK_FALSE(m.entries[0].has_mask());
  CHECK(m.entries[1].mask_path == "m.png");

  write_file(tmp / "bad.tsv", "a.png\nb.png\tm.png\textra\n");
  CHECK_THROWS_WITH_AS((void)load_manifest(tmp / "bad.tsv"), doctest::Contains(":2"), Error);

  write_file(tmp / "dangling.tsv", "a.png\nmissing.png\n");
  CHECK_THROWS_WITH_AS((void)load_manifest(tmp / "dangling.tsv"), doctest::Contains("missing image"), Error);
  CHECK_THROWS_AS((void)load_manifest(tmp / "nonexistent.tsv"), Error);

  write_png(tmp / "small_mask.png", random_rgb(2, 2, 4));
  write_file(tmp / "mismatch.tsv", "a.png\tsmall_mask.png\n");
  CHECK_THROWS_WITH_AS((void)load_manifest(tmp / "mismatch.tsv"), doctest::Contains("mask is 2x2"), Error);
}

TEST_CASE("png header probe") {
  testutil::TempDir tmp("pngdims");
  write_png(tmp / "x.png", random_rgb(13, 29, 5));
  const auto [h, w] = png_dimensions(tmp / "x.png");
  CHECK(h == 13);
  CHECK(w == 29);
  write_file(tmp / "not.png", "plainly not a png, but long enough to hold a header worth of bytes");
  CHECK_THROWS_WITH_AS((void)png_dimensions(tmp / "not.png"), doctest::Contains("not a PNG"), Error);
  write_file(tmp / "short.png", "tiny");
  CHECK_THROWS_WITH_AS((void)png_dimensions(tmp / "short.png"), doctest::Contains("too short"), Error);
}

TEST_CASE("identity augmentation is exact") {
  const ImageU8 img = random_rgb(24, 24, 4);
  AugmentConfig cfg;
  cfg.mirror_prob = 0.0;
  cfg.scale_low = cfg.scale_high = 1.0;
  cfg.crop_h = cfg.crop_w = 24;
  Rng rng(1);
  const Crop crop = sample_training_crop(img, nullptr, cfg, rng);
  CHECK(crop.image == to_double(img));
}

TEST_CASE("mirror flips columns") {
  const ImageU8 img = random_rgb(8, 8, 5);
  AugmentConfig cfg;
  cfg.mirror_prob = 1.0;
  cfg.scale_low = cfg.scale_high = 1.0;
  cfg.crop_h = cfg.crop_w = 8;
  Rng rng(1);
  const Crop crop = sample_training_crop(img, nullptr, cfg, rng);
  const Tensor plain = to_double(img);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 8; ++y)
      for (int64_t x = 0; x < 8; ++x) CHECK(crop.image.at(c, y, x) == plain.at(c, y, 7 - x));
}

TEST_CASE("augmentation is deterministic given the seed") {
  const ImageU8 img = random_rgb(32, 40, 6);
  AugmentConfig cfg;
  cfg.mirror_prob = 0.5;
  cfg.scale_low = 0.5;
  cfg.scale_high = 2.0;
  cfg.crop_h = cfg.crop_w = 16;
  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) {
    const Crop ca = sample_training_crop(img, nullptr, cfg, a);
    const Crop cb = sample_training_crop(img, nullptr, cfg, b);
    CHECK(ca.image == cb.image);
  }
}

TEST_CASE("mask receives the identical geometry") {
  // with unit scale the nearest/bilinear split is exact, so a mask equal to
  // one image channel must track it through mirror+crop bit-for-bit
  ImageU8 img = random_rgb(20, 20, 7);
  ImageU8 mask;
  mask.channels = 1;
  mask.h = 20;
  mask.w = 20;
  mask.pixels.assign(img.pixels.begin(), img.pixels.begin() + 400);
  AugmentConfig cfg;
  cfg.mirror_prob = 1.0;
  cfg.scale_low = cfg.scale_high = 1.0;
  cfg.crop_h = cfg.crop_w = 12;
  Rng rng(8);
  const Crop crop = sample_training_crop(img, &mask, cfg, rng);
  REQUIRE(crop.mask.has_value());
  for (int64_t y = 0; y < 12; ++y)
    for (int64_t x = 0; x < 12; ++x)
      CHECK(crop.mask->at(0, y, x) == doctest::Approx(255.0 * crop.image.at(0, y, x)).epsilon(1e-12));
}

TEST_CASE("small images are reflect-padded up to the crop") {
  const ImageU8 img = random_rgb(5, 5, 9);
  AugmentConfig cfg;
  cfg.mirror_prob = 0.0;
  cfg.scale_low = cfg.scale_high = 1.0;
  cfg.crop_h = cfg.crop_w = 11;
  Rng rng(2);
  const Crop crop = sample_training_crop(img, nullptr, cfg, rng);
  CHECK(crop.image.dim(1) == 11);
  CHECK(all_finite(crop.image));
}

TEST_CASE("synthetic corpus layout and determinism") {
  testutil::TempDir tmp1("synthA"), tmp2("synthB");
  SyntheticSpec spec;
  spec.num_images = 8;
  spec.image_size = 48;
  spec.num_classes = 4;
  spec.texture_seed = 42;
  const SyntheticCorpus c1 = generate_synthetic_corpus(spec, tmp1.path(), 2);
  CHECK(c1.num_train == 6);
  CHECK(c1.num_val == 2);

  const DatasetManifest all = load_manifest(tmp1 / "all.tsv");
  CHECK(all.size() == 8);
  for (size_t i = 0; i < all.size(); ++i) {
    CHECK(all.entries[i].has_mask());
    const ImageU8 mask = read_png(all.mask_file(i));
    CHECK(mask.channels == 1);
    for (uint8_t v : mask.pixels) CHECK(v < 4);
  }

  // same seed -> bit-identical corpora
  (void)generate_synthetic_corpus(spec, tmp2.path(), 2);
  for (int i = 0; i < 8; ++i) {
    const std::string stem = strfmt("%04d.png", i);
    std::ifstream a(tmp1 / "images" / stem, std::ios::binary), b(tmp2 / "images" / stem, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK_FALSE(sa.empty());
  }
}

TEST_CASE("corpus stats standardize the corpus") {
  testutil::TempDir tmp("stats");
  SyntheticSpec spec;
  spec.num_images = 6;
  spec.image_size = 32;
  spec.num_classes = 3;
  spec.texture_seed = 5;
  (void)generate_synthetic_corpus(spec, tmp.path(), 0);
  const DatasetManifest m = load_manifest(tmp / "train.tsv");
  const ChannelStats stats = compute_corpus_stats(m);
  const ChannelStats reread = read_stats(tmp / "stats.txt");
  for (int c = 0; c < 3; ++c) {
    CHECK(stats.mean[static_cast<size_t>(c)] == reread.mean[static_cast<size_t>(c)]);
    CHECK(stats.stddev[static_cast<size_t>(c)] > 0.0);
  }

  // standardized corpus has ~zero mean, ~unit variance per channel
  std::array<double, 3> sum{}, sumsq{};
  int64_t count = 0;
  for (size_t i = 0; i < m.size(); ++i) {
    Tensor img = to_double(read_png(m.image_file(i)));
    standardize(img, stats);
    const int64_t plane = img.dim(1) * img.dim(2);
    for (int c = 0; c < 3; ++c)
      for (int64_t p = 0; p < plane; ++p) {
        const double v = img.data()[c * plane + p];
        sum[static_cast<size_t>(c)] += v;
        sumsq[static_cast<size_t>(c)] += v * v;
      }
    count += plane;
  }
  for (int c = 0; c < 3; ++c) {
    CHECK(std::fabs(sum[static_cast<size_t>(c)] / static_cast<double>(count)) < 1e-6);
    CHECK(sumsq[static_cast<size_t>(c)] / static_cast<double>(count) == doctest::Approx(1.0).epsilon(1e-3));
  }
}
