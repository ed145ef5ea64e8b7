#include <cmath>
#include <fstream>

#include "patchforge/dataio.hpp"

namespace patchforge::dataio {

namespace {

// separable box blur with reflect borders, radius r (window 2r+1)
void box_blur_inplace(std::vector<double>& field, int64_t h, int64_t w, int r) {
  if (r <= 0) return;
  std::vector<double> tmp(field.size());
  auto reflect = [](int64_t i, int64_t n) {
    if (n == 1) return int64_t{0};
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };
  const double inv = 1.0 / (2 * r + 1);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double s = 0;
      for (int d = -r; d <= r; ++d) s += field[static_cast<size_t>(y * w + reflect(x + d, w))];
      tmp[static_cast<size_t>(y * w + x)] = s * inv;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double s = 0;
      for (int d = -r; d <= r; ++d) s += tmp[static_cast<size_t>(reflect(y + d, h) * w + x)];
      field[static_cast<size_t>(y * w + x)] = s * inv;
    }
}

// Classes are told apart mainly by noise statistics (amplitude, correlation
// length, orientation); mean colors stay close on purpose so segmenting the
// corpus requires texture-sensitive filters rather than a color lookup.
struct ClassAppearance {
  std::array<double, 3> base;
  double noise_amp = 0.1;
  int blur_radius = 0;   // isotropic correlation length
  int orientation = 0;   // 0 = isotropic, 1 = horizontal streaks, 2 = vertical streaks
};

// 1-D box blur along one axis with reflect borders
void line_blur_inplace(std::vector<double>& field, int64_t h, int64_t w, int r, bool horizontal) {
  if (r <= 0) return;
  std::vector<double> tmp(field.size());
  auto reflect = [](int64_t i, int64_t n) {
    if (n == 1) return int64_t{0};
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };
  const double inv = 1.0 / (2 * r + 1);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double s = 0;
      for (int d = -r; d <= r; ++d)
        s += horizontal ? field[static_cast<size_t>(y * w + reflect(x + d, w))]
                        : field[static_cast<size_t>(reflect(y + d, h) * w + x)];
      tmp[static_cast<size_t>(y * w + x)] = s * inv;
    }
  field.swap(tmp);
}

void normalize_field(std::vector<double>& field) {
  double sum = 0, sumsq = 0;
  for (double v : field) {
    sum += v;
    sumsq += v * v;
  }
  const double n = static_cast<double>(field.size());
  const double mean = sum / n;
  const double stddev = std::sqrt(std::max(1e-12, sumsq / n - mean * mean));
  for (double& v : field) v = (v - mean) / stddev;
}

}  // namespace

void SyntheticSpec::validate() const {
  check(num_images >= 1, "SyntheticSpec: num_images must be >= 1");
  check(num_classes >= 2 && num_classes <= 255, "SyntheticSpec: num_classes must be in [2, 255]");
  check(image_size >= 8, "SyntheticSpec: image_size must be >= 8");
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                          int val_count) {
  spec.validate();
  if (val_count < 0) val_count = spec.num_images / 5;
  check(val_count <= spec.num_images, "generate_synthetic_corpus: val_count exceeds num_images");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  check(fs::is_directory(out_dir / "images") && fs::is_directory(out_dir / "masks"),
        strfmt("generate_synthetic_corpus: cannot create output directories under '%s'",
               out_dir.string().c_str()));

  Rng rng(spec.texture_seed);
  const int K = spec.num_classes;
  const int64_t S = spec.image_size;

  // Corpus-level class appearance, fixed across all images so classes stay
  // identifiable. Base color and noise amplitude are deliberately near-equal
  // across classes: identity is carried by the correlation structure of the
  // texture (orientation and grain size), which takes tuned spatial filters
  // to separate.
  static constexpr int kPatterns[][2] = {
      // {orientation, blur radius}
      {1, 1}, {2, 1}, {0, 2}, {0, 0}, {1, 3}, {2, 3}, {0, 1}, {1, 2}, {2, 2}, {0, 3},
  };
  constexpr int kNumPatterns = static_cast<int>(sizeof(kPatterns) / sizeof(kPatterns[0]));
  std::vector<ClassAppearance> look(static_cast<size_t>(K));
  for (int c = 0; c < K; ++c) {
    auto& ap = look[static_cast<size_t>(c)];
    const double gray = 0.48 + rng.uniform(-0.03, 0.03);
    for (int ch = 0; ch < 3; ++ch)
      ap.base[static_cast<size_t>(ch)] = std::clamp(gray + rng.uniform(-0.02, 0.02), 0.1, 0.9);
    ap.noise_amp = 0.16 + rng.uniform(-0.005, 0.005);
    ap.orientation = kPatterns[c % kNumPatterns][0];
    ap.blur_radius = kPatterns[c % kNumPatterns][1];
  }

  std::vector<std::string> image_rel, mask_rel;
  std::vector<int> class_map(static_cast<size_t>(S * S));
  std::vector<std::vector<double>> noise(3, std::vector<double>(static_cast<size_t>(S * S)));
  // per-class textured field, one per channel, rebuilt per image
  std::vector<std::vector<std::vector<double>>> fields(
      static_cast<size_t>(K), std::vector<std::vector<double>>(3));

  for (int i = 0; i < spec.num_images; ++i) {
    // layered scene: sky band on top, ground at the bottom, optional middle
    // band, plus a few elliptical blobs of the remaining classes
    const int64_t y1 = static_cast<int64_t>(rng.uniform(0.22, 0.45) * static_cast<double>(S));
    const int64_t y2 = static_cast<int64_t>(rng.uniform(0.55, 0.80) * static_cast<double>(S));
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x) {
        int c = 1;  // ground
        if (y < y1)
          c = 0;  // sky
        else if (K >= 3 && y < y2)
          c = 2;  // middle band
        class_map[static_cast<size_t>(y * S + x)] = c;
      }
    if (K >= 4) {
      const int blobs = static_cast<int>(rng.uniform_int(4));  // 0..3
      for (int b = 0; b < blobs; ++b) {
        const int cls = 3 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(K - 3)));
        const double cx = rng.uniform(0.12, 0.88) * static_cast<double>(S);
        const double cy = rng.uniform(0.35, 0.90) * static_cast<double>(S);
        const double rx = rng.uniform(0.08, 0.22) * static_cast<double>(S);
        const double ry = rng.uniform(0.08, 0.22) * static_cast<double>(S);
        for (int64_t y = 0; y < S; ++y)
          for (int64_t x = 0; x < S; ++x) {
            const double dx = (static_cast<double>(x) - cx) / rx;
            const double dy = (static_cast<double>(y) - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) class_map[static_cast<size_t>(y * S + x)] = cls;
          }
      }
    }

    for (int ch = 0; ch < 3; ++ch)
      for (int64_t p = 0; p < S * S; ++p) noise[static_cast<size_t>(ch)][static_cast<size_t>(p)] = rng.normal();
    for (int c = 0; c < K; ++c) {
      const auto& ap = look[static_cast<size_t>(c)];
      for (int ch = 0; ch < 3; ++ch) {
        auto& f = fields[static_cast<size_t>(c)][static_cast<size_t>(ch)];
        f = noise[static_cast<size_t>(ch)];
        if (ap.blur_radius > 0) {
          if (ap.orientation == 0)
            box_blur_inplace(f, S, S, ap.blur_radius);
          else
            line_blur_inplace(f, S, S, ap.blur_radius + 1, ap.orientation == 1);
        }
        normalize_field(f);  // amp controls the final contrast exactly
      }
    }

    // smooth global illumination: random strength, fixed corpus-wide
    // direction, so position relative to the reference patch stays learnable
    const double gv = rng.uniform(0.25, 0.55);
    const double gh = rng.uniform(0.25, 0.55);

    ImageU8 img;
    img.channels = 3;
    img.h = S;
    img.w = S;
    img.pixels.resize(static_cast<size_t>(3 * S * S));
    ImageU8 mask;
    mask.channels = 1;
    mask.h = S;
    mask.w = S;
    mask.pixels.resize(static_cast<size_t>(S * S));

    for (int64_t y = 0; y < S; ++y) {
      const double ly = gv * (static_cast<double>(y) / static_cast<double>(S - 1) - 0.5);
      for (int64_t x = 0; x < S; ++x) {
        const int c = class_map[static_cast<size_t>(y * S + x)];
        const auto& ap = look[static_cast<size_t>(c)];
        const double light = 1.0 + ly + gh * (static_cast<double>(x) / static_cast<double>(S - 1) - 0.5);
        for (int ch = 0; ch < 3; ++ch) {
          const auto& field = fields[static_cast<size_t>(c)][static_cast<size_t>(ch)];
          double v = ap.base[static_cast<size_t>(ch)] + ap.noise_amp * field[static_cast<size_t>(y * S + x)];
          v = std::clamp(v * light, 0.0, 1.0);
          img.at(ch, y, x) = static_cast<uint8_t>(std::lround(v * 255.0));
        }
        mask.pixels[static_cast<size_t>(y * S + x)] = static_cast<uint8_t>(c);
      }
    }

    const std::string stem = strfmt("%04d.png", i);
    write_png(out_dir / "images" / stem, img);
    write_png(out_dir / "masks" / stem, mask);
    image_rel.push_back("images/" + stem);
    mask_rel.push_back("masks/" + stem);
  }

  SyntheticCorpus corpus;
  corpus.num_val = val_count;
  corpus.num_train = spec.num_images - val_count;
  corpus.all_manifest = out_dir / "all.tsv";
  corpus.train_manifest = out_dir / "train.tsv";
  corpus.val_manifest = out_dir / "val.tsv";
  corpus.stats_file = out_dir / "stats.txt";

  auto write_manifest = [&](const std::filesystem::path& file, int from, int to) {
    std::ofstream out(file);
    if (!out) fail(strfmt("cannot write manifest '%s'", file.string().c_str()));
    for (int i = from; i < to; ++i) out << image_rel[static_cast<size_t>(i)] << "\t" << mask_rel[static_cast<size_t>(i)] << "\n";
  };
  write_manifest(corpus.all_manifest, 0, spec.num_images);
  write_manifest(corpus.train_manifest, 0, corpus.num_train);
  write_manifest(corpus.val_manifest, corpus.num_train, spec.num_images);

  if (corpus.num_train > 0)
    write_stats(corpus.stats_file, compute_corpus_stats(load_manifest(corpus.train_manifest)));
  else
    write_stats(corpus.stats_file, compute_corpus_stats(load_manifest(corpus.all_manifest)));
  return corpus;
}

}  // namespace patchforge::dataio
