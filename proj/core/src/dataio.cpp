#include "patchforge/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace patchforge::dataio {

namespace {

// reflect-101 indexing, folds until inside [0, n)
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

Tensor resize_bilinear(const Tensor& src, int64_t out_h, int64_t out_w) {
  const int64_t c = src.dim(0), in_h = src.dim(1), in_w = src.dim(2);
  if (in_h == out_h && in_w == out_w) return src;
  Tensor dst({c, out_h, out_w});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (int64_t y = 0; y < out_h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    int64_t y0 = static_cast<int64_t>(std::floor(fy));
    double wy = fy - static_cast<double>(y0);
    int64_t y1 = std::clamp<int64_t>(y0 + 1, 0, in_h - 1);
    y0 = std::clamp<int64_t>(y0, 0, in_h - 1);
    for (int64_t x = 0; x < out_w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      int64_t x0 = static_cast<int64_t>(std::floor(fx));
      double wx = fx - static_cast<double>(x0);
      int64_t x1 = std::clamp<int64_t>(x0 + 1, 0, in_w - 1);
      x0 = std::clamp<int64_t>(x0, 0, in_w - 1);
      for (int64_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - wx) * src.at(ch, y0, x0) + wx * src.at(ch, y0, x1);
        const double bot = (1.0 - wx) * src.at(ch, y1, x0) + wx * src.at(ch, y1, x1);
        dst.at(ch, y, x) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return dst;
}

Tensor resize_nearest(const Tensor& src, int64_t out_h, int64_t out_w) {
  const int64_t c = src.dim(0), in_h = src.dim(1), in_w = src.dim(2);
  if (in_h == out_h && in_w == out_w) return src;
  Tensor dst({c, out_h, out_w});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (int64_t y = 0; y < out_h; ++y) {
    int64_t yi = std::clamp<int64_t>(static_cast<int64_t>(std::floor((y + 0.5) * sy)), 0, in_h - 1);
    for (int64_t x = 0; x < out_w; ++x) {
      int64_t xi = std::clamp<int64_t>(static_cast<int64_t>(std::floor((x + 0.5) * sx)), 0, in_w - 1);
      for (int64_t ch = 0; ch < c; ++ch) dst.at(ch, y, x) = src.at(ch, yi, xi);
    }
  }
  return dst;
}

Tensor mirror_horizontal(const Tensor& src) {
  const int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  Tensor dst({c, h, w});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) dst.at(ch, y, x) = src.at(ch, y, w - 1 - x);
  return dst;
}

Tensor pad_reflect_to(const Tensor& src, int64_t min_h, int64_t min_w) {
  const int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  if (h >= min_h && w >= min_w) return src;
  const int64_t out_h = std::max(h, min_h), out_w = std::max(w, min_w);
  const int64_t top = (out_h - h) / 2, left = (out_w - w) / 2;
  Tensor dst({c, out_h, out_w});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < out_h; ++y) {
      const int64_t sy = reflect_index(y - top, h);
      for (int64_t x = 0; x < out_w; ++x) dst.at(ch, y, x) = src.at(ch, sy, reflect_index(x - left, w));
    }
  return dst;
}

Tensor crop_at(const Tensor& src, int64_t top, int64_t left, int64_t ch_h, int64_t ch_w) {
  const int64_t c = src.dim(0);
  Tensor dst({c, ch_h, ch_w});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < ch_h; ++y)
      for (int64_t x = 0; x < ch_w; ++x) dst.at(ch, y, x) = src.at(ch, top + y, left + x);
  return dst;
}

}  // namespace

std::filesystem::path DatasetManifest::image_file(size_t i) const {
  std::filesystem::path p = entries.at(i).image_path;
  return p.is_absolute() ? p : base_dir / p;
}

std::filesystem::path DatasetManifest::mask_file(size_t i) const {
  std::filesystem::path p = entries.at(i).mask_path;
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(strfmt("manifest: cannot open '%s'", file.string().c_str()));
  DatasetManifest m;
  m.base_dir = file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        cols.push_back(line.substr(start));
        break;
      }
      cols.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (cols.size() > 2)
      fail(strfmt("manifest %s:%d: expected 'image_path[\\tmask_path]', got %zu columns",
                  file.string().c_str(), lineno, cols.size()));
    ManifestEntry e;
    e.image_path = cols[0];
    if (cols.size() == 2) e.mask_path = cols[1];
    if (e.image_path.empty()) fail(strfmt("manifest %s:%d: empty image path", file.string().c_str(), lineno));
    m.entries.push_back(std::move(e));
  }
  // validate referenced files; masks must match their image spatially
  for (size_t i = 0; i < m.size(); ++i) {
    if (!std::filesystem::exists(m.image_file(i)))
      fail(strfmt("manifest %s: entry %zu references missing image '%s'", file.string().c_str(), i + 1,
                  m.image_file(i).string().c_str()));
    if (m.entries[i].has_mask()) {
      if (!std::filesystem::exists(m.mask_file(i)))
        fail(strfmt("manifest %s: entry %zu references missing mask '%s'", file.string().c_str(), i + 1,
                    m.mask_file(i).string().c_str()));
      const auto [ih, iw] = png_dimensions(m.image_file(i));
      const auto [mh, mw] = png_dimensions(m.mask_file(i));
      if (ih != mh || iw != mw)
        fail(strfmt("manifest %s: entry %zu mask is %lldx%lld but image is %lldx%lld",
                    file.string().c_str(), i + 1, static_cast<long long>(mh), static_cast<long long>(mw),
                    static_cast<long long>(ih), static_cast<long long>(iw)));
    }
  }
  return m;
}

void AugmentConfig::validate() const {
  check(mirror_prob >= 0.0 && mirror_prob <= 1.0, "AugmentConfig: mirror_prob must be in [0,1]");
  check(scale_low > 0.0 && scale_low <= scale_high, "AugmentConfig: need 0 < scale_low <= scale_high");
  check(crop_h >= 1 && crop_w >= 1, "AugmentConfig: crop size must be positive");
}

Crop sample_training_crop(const ImageU8& image, const ImageU8* mask, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (mask) {
    check(mask->channels == 1, "sample_training_crop: masks must be single-channel");
    check(mask->h == image.h && mask->w == image.w, "sample_training_crop: mask dims differ from image");
  }

  // fixed draw order: scale, mirror, crop offsets
  const double u = rng.uniform(cfg.scale_low, cfg.scale_high);
  const bool mirrored = rng.bernoulli(cfg.mirror_prob);

  const int64_t sh = std::max<int64_t>(1, std::llround(static_cast<double>(image.h) * u));
  const int64_t sw = std::max<int64_t>(1, std::llround(static_cast<double>(image.w) * u));

  Tensor img = resize_bilinear(to_double(image), sh, sw);
  if (mirrored) img = mirror_horizontal(img);
  img = pad_reflect_to(img, cfg.crop_h, cfg.crop_w);

  const int64_t oy = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(img.dim(1) - cfg.crop_h + 1)));
  const int64_t ox = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(img.dim(2) - cfg.crop_w + 1)));

  Crop out;
  out.image = crop_at(img, oy, ox, cfg.crop_h, cfg.crop_w);
  if (mask) {
    Tensor mk({1, mask->h, mask->w});
    for (int64_t i = 0; i < mk.numel(); ++i) mk[i] = static_cast<double>(mask->pixels[static_cast<size_t>(i)]);
    mk = resize_nearest(mk, sh, sw);
    if (mirrored) mk = mirror_horizontal(mk);
    mk = pad_reflect_to(mk, cfg.crop_h, cfg.crop_w);
    out.mask = crop_at(mk, oy, ox, cfg.crop_h, cfg.crop_w);
  }
  return out;
}

ChannelStats compute_corpus_stats(const DatasetManifest& manifest) {
  check(manifest.size() > 0, "compute_corpus_stats: empty manifest");
  std::array<double, 3> sum{0, 0, 0}, sumsq{0, 0, 0};
  std::array<int64_t, 3> count{0, 0, 0};
  for (size_t i = 0; i < manifest.size(); ++i) {
    const ImageU8 img = read_png(manifest.image_file(i));
    for (int c = 0; c < 3; ++c) {
      const int src_c = std::min(c, img.channels - 1);
      for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) {
          const double v = static_cast<double>(img.at(src_c, y, x)) / 255.0;
          sum[static_cast<size_t>(c)] += v;
          sumsq[static_cast<size_t>(c)] += v * v;
          ++count[static_cast<size_t>(c)];
        }
    }
  }
  ChannelStats stats;
  for (size_t c = 0; c < 3; ++c) {
    const double n = static_cast<double>(count[c]);
    stats.mean[c] = sum[c] / n;
    const double var = std::max(0.0, sumsq[c] / n - stats.mean[c] * stats.mean[c]);
    stats.stddev[c] = std::max(std::sqrt(var), 1e-8);
  }
  return stats;
}

void write_stats(const std::filesystem::path& file, const ChannelStats& stats) {
  std::ofstream out(file);
  if (!out) fail(strfmt("cannot write stats file '%s'", file.string().c_str()));
  out << strfmt("mean %.17g %.17g %.17g\n", stats.mean[0], stats.mean[1], stats.mean[2]);
  out << strfmt("stddev %.17g %.17g %.17g\n", stats.stddev[0], stats.stddev[1], stats.stddev[2]);
}

ChannelStats read_stats(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(strfmt("cannot open stats file '%s'", file.string().c_str()));
  ChannelStats stats;
  std::string tag;
  in >> tag >> stats.mean[0] >> stats.mean[1] >> stats.mean[2];
  check(tag == "mean" && !in.fail(), strfmt("malformed stats file '%s'", file.string().c_str()));
  in >> tag >> stats.stddev[0] >> stats.stddev[1] >> stats.stddev[2];
  check(tag == "stddev" && !in.fail(), strfmt("malformed stats file '%s'", file.string().c_str()));
  return stats;
}

void standardize(Tensor& image, const ChannelStats& stats) {
  check(image.rank() == 3 && image.dim(0) == 3, "standardize: expected 3 x H x W");
  const int64_t plane = image.dim(1) * image.dim(2);
  for (int c = 0; c < 3; ++c) {
    double* p = image.data() + c * plane;
    const double mean = stats.mean[static_cast<size_t>(c)];
    const double inv = 1.0 / stats.stddev[static_cast<size_t>(c)];
    for (int64_t i = 0; i < plane; ++i) p[i] = (p[i] - mean) * inv;
  }
}

}  // namespace patchforge::dataio
