#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchforge/rng.hpp"
#include "patchforge/tensor.hpp"

namespace patchforge::dataio {

// 8-bit image, channel-major (C,H,W), 1 or 3 channels.
struct ImageU8 {
  int channels = 0;
  int64_t h = 0, w = 0;
  std::vector<uint8_t> pixels;

  uint8_t at(int c, int64_t y, int64_t x) const {
    return pixels[static_cast<size_t>((c * h + y) * w + x)];
  }
  uint8_t& at(int c, int64_t y, int64_t x) {
    return pixels[static_cast<size_t>((c * h + y) * w + x)];
  }
};

ImageU8 read_png(const std::filesystem::path& file);
void write_png(const std::filesystem::path& file, const ImageU8& img);

// (height, width) from the PNG header without decoding the image data
std::pair<int64_t, int64_t> png_dimensions(const std::filesystem::path& file);

// [0,1] doubles <-> 8 bits; to_u8 rescales by min/max when values leave [0,1]
Tensor to_double(const ImageU8& img);
ImageU8 to_u8(const Tensor& chw);

struct ManifestEntry {
  std::string image_path;
  std::string mask_path;  // empty when absent

  bool has_mask() const { return !mask_path.empty(); }
};

// Tab-separated file, one `image_path[\tmask_path]` per line. Relative paths
// resolve against the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::filesystem::path image_file(size_t i) const;
  std::filesystem::path mask_file(size_t i) const;
  size_t size() const { return entries.size(); }
};

DatasetManifest load_manifest(const std::filesystem::path& file);

struct AugmentConfig {
  double mirror_prob = 0.5;
  double scale_low = 0.5, scale_high = 2.0;
  int64_t crop_h = 0, crop_w = 0;

  void validate() const;
};

struct Crop {
  Tensor image;                 // 3 x crop_h x crop_w, values in [0,1] (pre-standardization)
  std::optional<Tensor> mask;   // 1 x crop_h x crop_w, class ids stored as doubles
};

// Random scale, then mirror, then random crop; reflect-pads when the scaled
// image is smaller than the crop. Masks get the identical geometry with
// nearest-neighbor resampling. Deterministic given the rng state.
Crop sample_training_crop(const ImageU8& image, const ImageU8* mask, const AugmentConfig& cfg, Rng& rng);

// Per-channel corpus statistics used to standardize inputs.
struct ChannelStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stddev{1, 1, 1};
};

ChannelStats compute_corpus_stats(const DatasetManifest& manifest);
void write_stats(const std::filesystem::path& file, const ChannelStats& stats);
ChannelStats read_stats(const std::filesystem::path& file);

// standardize a 3xHxW [0,1] image in place
void standardize(Tensor& image, const ChannelStats& stats);

struct SyntheticSpec {
  int num_images = 8;
  int64_t image_size = 96;
  int num_classes = 4;
  uint64_t texture_seed = 1;

  void validate() const;
};

// Writes `images/NNNN.png`, `masks/NNNN.png`, `all.tsv`, `train.tsv`,
// `val.tsv` and `stats.txt` under out_dir. Images are landscape-like layered
// scenes: per-class noise textures plus smooth global illumination gradients,
// so patch location is learnable from content. val_count < 0 picks
// num_images/5.
struct SyntheticCorpus {
  std::filesystem::path all_manifest, train_manifest, val_manifest, stats_file;
  int num_train = 0, num_val = 0;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                          int val_count = -1);

}  // namespace patchforge::dataio
