#include "patchforge/puzzle.hpp"

#include <algorithm>
#include <fstream>

#include "patchforge/dataio.hpp"

namespace patchforge::puzzle {

void Permutation::validate(const GridSpec& grid) const {
  const int n = grid.num_cells();
  check(static_cast<int>(sigma.size()) == n, "Permutation: wrong length");
  std::vector<char> seen(static_cast<size_t>(n), 0);
  for (int v : sigma) {
    check(v >= 0 && v < n, "Permutation: cell index out of range");
    check(!seen[static_cast<size_t>(v)], "Permutation: not a bijection");
    seen[static_cast<size_t>(v)] = 1;
  }
  check(sigma[static_cast<size_t>(grid.center_index())] == grid.center_index(),
        "Permutation: center patch must stay at the center position");
}

bool Permutation::is_identity() const {
  for (size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] != static_cast<int>(i)) return false;
  return true;
}

Permutation identity_permutation(const GridSpec& grid) {
  Permutation p;
  p.sigma.resize(static_cast<size_t>(grid.num_cells()));
  for (size_t i = 0; i < p.sigma.size(); ++i) p.sigma[i] = static_cast<int>(i);
  return p;
}

Permutation sample_permutation(Rng& rng, const GridSpec& grid) {
  const int n = grid.num_cells();
  const int center = grid.center_index();
  std::vector<int> cells;
  cells.reserve(static_cast<size_t>(n - 1));
  for (int i = 0; i < n; ++i)
    if (i != center) cells.push_back(i);
  // Fisher-Yates over the non-center cells
  for (size_t i = cells.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(i));
    std::swap(cells[i - 1], cells[j]);
  }
  Permutation p;
  p.sigma.reserve(static_cast<size_t>(n));
  size_t k = 0;
  for (int pos = 0; pos < n; ++pos) p.sigma.push_back(pos == center ? center : cells[k++]);
  p.validate(grid);
  return p;
}

Permutation invert(const Permutation& p) {
  Permutation inv;
  inv.sigma.assign(p.sigma.size(), 0);
  for (size_t pos = 0; pos < p.sigma.size(); ++pos)
    inv.sigma[static_cast<size_t>(p.sigma[pos])] = static_cast<int>(pos);
  return inv;
}

std::vector<Tensor> divide(const Tensor& image, const GridSpec& grid) {
  check(image.rank() == 3, "divide: image must be C x H x W");
  const int g = grid.side;
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h < g || w < g)
    fail(strfmt("divide: image %lldx%lld smaller than %dx%d grid", static_cast<long long>(h),
                static_cast<long long>(w), g, g));
  const int64_t ch = h / g, cw = w / g;
  const int64_t crop_h = ch * g, crop_w = cw * g;
  const int64_t top = (h - crop_h) / 2, left = (w - crop_w) / 2;

  std::vector<Tensor> patches;
  patches.reserve(static_cast<size_t>(grid.num_cells()));
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      Tensor patch({c, ch, cw});
      for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t y = 0; y < ch; ++y)
          for (int64_t x = 0; x < cw; ++x)
            patch.at(cc, y, x) = image.at(cc, top + gy * ch + y, left + gx * cw + x);
      patches.push_back(std::move(patch));
    }
  }
  return patches;
}

PuzzleSample assemble(const std::vector<Tensor>& patches, const Permutation& perm, const GridSpec& grid) {
  const int g = grid.side;
  const int n = grid.num_cells();
  if (static_cast<int>(patches.size()) != n)
    fail(strfmt("assemble: expected %d patches, got %zu", n, patches.size()));
  perm.validate(grid);
  const Tensor& first = patches.front();
  check(first.rank() == 3, "assemble: patches must be C x h x w");
  for (const Tensor& p : patches)
    if (!p.same_shape(first)) fail("assemble: patches have mismatched shapes");

  const int64_t c = first.dim(0), ch = first.dim(1), cw = first.dim(2);
  PuzzleSample out;
  out.permutation = perm;
  out.labels = perm.sigma;
  out.cell_h = ch;
  out.cell_w = cw;
  out.image = Tensor({c, ch * g, cw * g});
  for (int pos = 0; pos < n; ++pos) {
    const Tensor& src = patches[static_cast<size_t>(perm.sigma[static_cast<size_t>(pos)])];
    const int gy = pos / g, gx = pos % g;
    for (int64_t cc = 0; cc < c; ++cc)
      for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x)
          out.image.at(cc, gy * ch + y, gx * cw + x) = src.at(cc, y, x);
  }
  return out;
}

void dump_sample(const PuzzleSample& sample, const std::filesystem::path& image_file,
                 const std::filesystem::path& label_file) {
  dataio::write_png(image_file, dataio::to_u8(sample.image));
  std::ofstream out(label_file);
  if (!out) fail(strfmt("dump_sample: cannot write '%s'", label_file.string().c_str()));
  for (size_t p = 0; p < sample.labels.size(); ++p) out << p << ":" << sample.labels[p] << "\n";
}

}  // namespace patchforge::puzzle
