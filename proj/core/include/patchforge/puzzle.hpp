#pragma once

#include <filesystem>
#include <vector>

#include "patchforge/rng.hpp"
#include "patchforge/tensor.hpp"

namespace patchforge::puzzle {

// Square puzzle grid with an odd side so a center cell exists. Cells are
// indexed row-major, 0-based.
struct GridSpec {
  int side = 3;

  explicit GridSpec(int g) : side(g) {
    check(g >= 1 && g % 2 == 1, "GridSpec: grid side must be a positive odd integer");
  }

  int num_cells() const { return side * side; }
  int center_index() const { return (num_cells() - 1) / 2; }
};

// sigma[p] = original cell index of the patch placed at position p.
struct Permutation {
  std::vector<int> sigma;

  void validate(const GridSpec& grid) const;
  bool is_identity() const;
};

Permutation identity_permutation(const GridSpec& grid);

// Uniform over the (N-1)! permutations that keep the center patch at the
// center position.
Permutation sample_permutation(Rng& rng, const GridSpec& grid);

Permutation invert(const Permutation& p);

// Center-crops `image` (C,H,W) to (g*floor(H/g), g*floor(W/g)) and splits it
// into g*g equal non-overlapping patches, row-major.
std::vector<Tensor> divide(const Tensor& image, const GridSpec& grid);

struct PuzzleSample {
  Tensor image;             // shuffled image, C x H' x W'
  std::vector<int> labels;  // labels[p] = sigma[p] = original location of patch at p
  Permutation permutation;
  int64_t cell_h = 0, cell_w = 0;
};

PuzzleSample assemble(const std::vector<Tensor>& patches, const Permutation& perm, const GridSpec& grid);

// Debug dump: PNG of the shuffled image (values linearly mapped to 8 bits)
// plus a sidecar text file with one `p:label` line per cell.
void dump_sample(const PuzzleSample& sample, const std::filesystem::path& image_file,
                 const std::filesystem::path& label_file);

}  // namespace patchforge::puzzle
