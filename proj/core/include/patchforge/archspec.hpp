#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "patchforge/common.hpp"
#include "patchforge/puzzle.hpp"

namespace patchforge::archspec {

enum class LayerKind { conv, pool };

// One convolution or pooling layer of a sequential chain. Pool layers carry
// no trainable parameters and keep their input channel count.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int out_channels = 0;  // conv only

  void validate() const;
};

// A CNN described as an ordered layer chain, optionally partitioned into
// resolution blocks. A block starts at a stride>1 layer (the resolution
// change); the first block starts at layer 0.
struct ArchSpec {
  std::vector<LayerSpec> layers;
  std::vector<int> block_starts;  // empty = unblocked chain
  int input_channels = 3;

  void validate() const;
  int num_blocks() const { return static_cast<int>(block_starts.size()); }
  int block_of_layer(int layer_index) const;

  // channel count entering layer `i`
  int in_channels_of(int layer_index) const;
  int out_channels() const;

  std::string canonical_text() const;
  uint64_t fingerprint() const;  // FNV-1a over canonical_text
};

bool operator==(const LayerSpec& a, const LayerSpec& b);
bool operator==(const ArchSpec& a, const ArchSpec& b);

// Line-oriented architecture file:
//   name kind kernel stride padding [out_channels]
// Blank lines and `#` comments are ignored; a line consisting of the single
// word `block` marks the start of a resolution block. An optional line
// `input_channels N` overrides the default of 3.
ArchSpec parse_arch(const std::string& text, const std::string& origin = "<string>");
ArchSpec load_arch(const std::filesystem::path& file);

struct RFProfile {
  int64_t rf = 1;                // receptive field size r, pixels
  int64_t effective_stride = 1;  // S0 = product of layer strides
  int64_t effective_padding = 0; // P0

  void validate() const;
};

// Exact coordinate in half-pixel units: value() = twice / 2. RF centers are
// integers for odd r and exact halves for even r; rounding happens only at
// cell-assignment time (half-down, i.e. floor).
struct HalfUnit {
  int64_t twice = 0;

  double value() const { return 0.5 * static_cast<double>(twice); }
  bool is_integer() const { return (twice % 2) == 0; }
  int64_t round_half_down() const;  // floor(value())
  bool operator==(const HalfUnit&) const = default;
};

//   r  = sum_l (k_l - 1) * prod_{i<l} s_i + 1
//   S0 = prod_l s_l
//   P0 = sum_l p_l * prod_{i<l} s_i
RFProfile compute_rf_profile(const ArchSpec& arch);

// Center of the receptive field of feature pixel (i, j):
//   h = -P0 + (r-1)/2 + i*S0, v likewise with j.
std::pair<HalfUnit, HalfUnit> rf_center(const RFProfile& profile, int64_t i, int64_t j);

// Measured receptive-field geometry, obtained by propagating the dependency
// interval of output pixels backward through the chain (layer by layer,
// independent of the closed-form profile above). Both image axes behave
// identically for square kernels, so results are 1-D.
struct BruteForceResult {
  int64_t out_size = 0;
  int64_t rf = 0;                 // extent of input influencing the central output pixel
  std::vector<HalfUnit> centers;  // measured RF center per output index
  std::vector<std::pair<int64_t, int64_t>> extents;  // [first, last] input pixel per output index
};

BruteForceResult brute_force_rf(const ArchSpec& arch, int64_t input_size);

// Output spatial size of the whole chain for a given input size, composing
// floor((n + 2p - k)/s) + 1 per layer. Throws if any stage collapses.
int64_t chain_output_size(const ArchSpec& arch, int64_t input_size);

// Assignment of feature pixels to puzzle grid cells: each feature pixel goes
// to the cell containing its RF center (clamped into the image, rounded
// half-down). Requires H and W divisible by the grid side.
struct CellAssignment {
  int grid_side = 0;
  int64_t feature_h = 0, feature_w = 0;
  std::vector<int> cell_of;                      // feature_h*feature_w entries, row-major
  std::vector<std::vector<int64_t>> cell_pixels; // cell -> flat feature indices

  int num_cells() const { return grid_side * grid_side; }
};

CellAssignment cell_assignment(const RFProfile& profile, int64_t input_h, int64_t input_w,
                               const puzzle::GridSpec& grid);

// Built-in presets: "alexnet", "vgg16", "resnet101", "tinyfcn",
// "mobilenetv2_075". Text is in the architecture-file format above.
std::vector<std::string> preset_names();
bool is_preset(const std::string& name);
const std::string& preset_text(const std::string& name);
ArchSpec preset(const std::string& name);

}  // namespace patchforge::archspec
