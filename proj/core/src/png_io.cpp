#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "patchforge/dataio.hpp"

namespace patchforge::dataio {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::filesystem::path& file) {
  FilePtr fp(std::fopen(file.string().c_str(), "rb"));
  if (!fp) fail(strfmt("cannot open image '%s'", file.string().c_str()));

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "libpng: read struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("libpng: info struct allocation failed");
  }
  std::vector<png_bytep> rows;
  std::vector<uint8_t> interleaved;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(strfmt("failed to decode PNG '%s'", file.string().c_str()));
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  check(channels == 1 || channels == 3, strfmt("unsupported channel count %d in '%s'", channels,
                                               file.string().c_str()));
  interleaved.assign(static_cast<size_t>(w) * h * static_cast<size_t>(channels), 0);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = interleaved.data() + static_cast<size_t>(y) * w * static_cast<size_t>(channels);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageU8 out;
  out.channels = channels;
  out.h = h;
  out.w = w;
  out.pixels.resize(interleaved.size());
  for (int c = 0; c < channels; ++c)
    for (png_uint_32 y = 0; y < h; ++y)
      for (png_uint_32 x = 0; x < w; ++x)
        out.at(c, y, x) = interleaved[(static_cast<size_t>(y) * w + x) * static_cast<size_t>(channels) +
                                      static_cast<size_t>(c)];
  return out;
}

void write_png(const std::filesystem::path& file, const ImageU8& img) {
  check(img.channels == 1 || img.channels == 3, "write_png: 1 or 3 channels only");
  check(img.h > 0 && img.w > 0, "write_png: empty image");
  FilePtr fp(std::fopen(file.string().c_str(), "wb"));
  if (!fp) fail(strfmt("cannot write image '%s'", file.string().c_str()));

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "libpng: write struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("libpng: info struct allocation failed");
  }
  std::vector<uint8_t> interleaved(static_cast<size_t>(img.h) * static_cast<size_t>(img.w) *
                                   static_cast<size_t>(img.channels));
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(strfmt("failed to encode PNG '%s'", file.string().c_str()));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (int64_t y = 0; y < img.h; ++y) {
    for (int64_t x = 0; x < img.w; ++x)
      for (int c = 0; c < img.channels; ++c)
        interleaved[static_cast<size_t>((y * img.w + x) * img.channels + c)] =
            img.at(c, y, x);
    rows[static_cast<size_t>(y)] = interleaved.data() + static_cast<size_t>(y * img.w * img.channels);
  }
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::pair<int64_t, int64_t> png_dimensions(const std::filesystem::path& file) {
  FilePtr fp(std::fopen(file.string().c_str(), "rb"));
  if (!fp) fail(strfmt("cannot open image '%s'", file.string().c_str()));
  // signature (8) + IHDR length/type (8) + width (4) + height (4)
  unsigned char head[24];
  if (std::fread(head, 1, sizeof head, fp.get()) != sizeof head)
    fail(strfmt("'%s' is too short to be a PNG", file.string().c_str()));
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (std::memcmp(head, sig, 8) != 0 || std::memcmp(head + 12, "IHDR", 4) != 0)
    fail(strfmt("'%s' is not a PNG file", file.string().c_str()));
  auto be32 = [&](int off) {
    return (static_cast<int64_t>(head[off]) << 24) | (static_cast<int64_t>(head[off + 1]) << 16) |
           (static_cast<int64_t>(head[off + 2]) << 8) | static_cast<int64_t>(head[off + 3]);
  };
  return {be32(20), be32(16)};  // height, width
}

Tensor to_double(const ImageU8& img) {
  Tensor t({img.channels, img.h, img.w});
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) t[i] = static_cast<double>(img.pixels[static_cast<size_t>(i)]) / 255.0;
  return t;
}

ImageU8 to_u8(const Tensor& chw) {
  check(chw.rank() == 3, "to_u8: tensor must be C x H x W");
  check(chw.dim(0) == 1 || chw.dim(0) == 3, "to_u8: 1 or 3 channels only");
  double lo = chw[0], hi = chw[0];
  for (int64_t i = 0; i < chw.numel(); ++i) {
    lo = std::min(lo, chw[i]);
    hi = std::max(hi, chw[i]);
  }
  // leave [0,1] data untouched; rescale anything else (e.g. standardized crops)
  const bool rescale = lo < 0.0 || hi > 1.0;
  const double scale = rescale ? (hi > lo ? 1.0 / (hi - lo) : 1.0) : 1.0;
  const double shift = rescale ? lo : 0.0;
  ImageU8 out;
  out.channels = static_cast<int>(chw.dim(0));
  out.h = chw.dim(1);
  out.w = chw.dim(2);
  out.pixels.resize(static_cast<size_t>(chw.numel()));
  for (int64_t i = 0; i < chw.numel(); ++i) {
    double v = (chw[i] - shift) * scale;
    v = std::clamp(v, 0.0, 1.0);
    out.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

}  // namespace patchforge::dataio
