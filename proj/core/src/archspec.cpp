#include "patchforge/archspec.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace patchforge::archspec {

namespace {

int64_t floor_div(int64_t a, int64_t b) {
  // b > 0
  return (a >= 0) ? a / b : -((-a + b - 1) / b);
}

const char* kind_name(LayerKind k) { return k == LayerKind::conv ? "conv" : "pool"; }

}  // namespace

void LayerSpec::validate() const {
  check(!name.empty(), "LayerSpec: layer name must be non-empty");
  check(kernel >= 1, strfmt("layer '%s': kernel must be >= 1", name.c_str()));
  check(stride >= 1, strfmt("layer '%s': stride must be >= 1", name.c_str()));
  check(padding >= 0, strfmt("layer '%s': padding must be >= 0", name.c_str()));
  if (kind == LayerKind::conv)
    check(out_channels >= 1, strfmt("conv layer '%s': out_channels must be >= 1", name.c_str()));
}

void ArchSpec::validate() const {
  check(!layers.empty(), "invalid architecture: empty layer list");
  check(input_channels >= 1, "invalid architecture: input_channels must be >= 1");
  for (const auto& l : layers) l.validate();
  if (block_starts.empty()) return;
  check(block_starts.front() == 0, "invalid architecture: first block must start at layer 0");
  for (size_t b = 1; b < block_starts.size(); ++b) {
    const int at = block_starts[b];
    check(at > block_starts[b - 1], "invalid architecture: block starts must be strictly increasing");
    check(at < static_cast<int>(layers.size()), "invalid architecture: block start beyond layer list");
    check(layers[static_cast<size_t>(at)].stride > 1,
          strfmt("invalid architecture: block %zu must begin at a stride>1 layer (layer '%s' has stride %d)",
                 b + 1, layers[static_cast<size_t>(at)].name.c_str(), layers[static_cast<size_t>(at)].stride));
  }
}

int ArchSpec::block_of_layer(int layer_index) const {
  check(layer_index >= 0 && layer_index < static_cast<int>(layers.size()), "block_of_layer: index out of range");
  check(!block_starts.empty(), "block_of_layer: architecture has no block annotations");
  int b = 0;
  for (size_t i = 1; i < block_starts.size(); ++i)
    if (layer_index >= block_starts[i]) b = static_cast<int>(i);
  return b;
}

int ArchSpec::in_channels_of(int layer_index) const {
  int ch = input_channels;
  for (int i = 0; i < layer_index; ++i)
    if (layers[static_cast<size_t>(i)].kind == LayerKind::conv) ch = layers[static_cast<size_t>(i)].out_channels;
  return ch;
}

int ArchSpec::out_channels() const {
  return in_channels_of(static_cast<int>(layers.size()));
}

std::string ArchSpec::canonical_text() const {
  std::ostringstream os;
  os << "input_channels " << input_channels << "\n";
  size_t next_block = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (next_block < block_starts.size() && block_starts[next_block] == static_cast<int>(i)) {
      os << "block\n";
      ++next_block;
    }
    const auto& l = layers[i];
    os << l.name << ' ' << kind_name(l.kind) << ' ' << l.kernel << ' ' << l.stride << ' ' << l.padding;
    if (l.kind == LayerKind::conv) os << ' ' << l.out_channels;
    os << "\n";
  }
  return os.str();
}

uint64_t ArchSpec::fingerprint() const {
  // FNV-1a
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical_text()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

bool operator==(const LayerSpec& a, const LayerSpec& b) {
  return a.name == b.name && a.kind == b.kind && a.kernel == b.kernel && a.stride == b.stride &&
         a.padding == b.padding && (a.kind == LayerKind::pool || a.out_channels == b.out_channels);
}

bool operator==(const ArchSpec& a, const ArchSpec& b) {
  return a.layers == b.layers && a.block_starts == b.block_starts && a.input_channels == b.input_channels;
}

ArchSpec parse_arch(const std::string& text, const std::string& origin) {
  ArchSpec arch;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool pending_block = false;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;  // blank
    if (first == "block") {
      std::string extra;
      if (ls >> extra) fail(strfmt("%s:%d: 'block' takes no arguments", origin.c_str(), lineno));
      pending_block = true;
      continue;
    }
    if (first == "input_channels") {
      if (!(ls >> arch.input_channels))
        fail(strfmt("%s:%d: input_channels needs an integer", origin.c_str(), lineno));
      continue;
    }
    LayerSpec l;
    l.name = first;
    std::string kind;
    if (!(ls >> kind >> l.kernel >> l.stride >> l.padding))
      fail(strfmt("%s:%d: expected 'name kind kernel stride padding [out_channels]'", origin.c_str(), lineno));
    if (kind == "conv") {
      l.kind = LayerKind::conv;
      if (!(ls >> l.out_channels))
        fail(strfmt("%s:%d: conv layer '%s' needs out_channels", origin.c_str(), lineno, l.name.c_str()));
    } else if (kind == "pool") {
      l.kind = LayerKind::pool;
    } else {
      fail(strfmt("%s:%d: unknown layer kind '%s'", origin.c_str(), lineno, kind.c_str()));
    }
    std::string extra;
    if (ls >> extra) fail(strfmt("%s:%d: trailing tokens after layer '%s'", origin.c_str(), lineno, l.name.c_str()));
    arch.layers.push_back(l);
    if (pending_block) {
      arch.block_starts.push_back(static_cast<int>(arch.layers.size()) - 1);
      pending_block = false;
    }
  }
  if (pending_block) fail(strfmt("%s: trailing 'block' directive with no layer after it", origin.c_str()));
  arch.validate();
  return arch;
}

ArchSpec load_arch(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(strfmt("cannot open architecture file '%s'", file.string().c_str()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_arch(buf.str(), file.string());
}

void RFProfile::validate() const {
  check(rf >= 1, "RFProfile: rf must be >= 1");
  check(effective_stride >= 1, "RFProfile: effective stride must be >= 1");
  check(effective_padding >= 0, "RFProfile: effective padding must be >= 0");
}

int64_t HalfUnit::round_half_down() const { return floor_div(twice, 2); }

RFProfile compute_rf_profile(const ArchSpec& arch) {
  check(!arch.layers.empty(), "invalid architecture: empty layer list");
  for (const auto& l : arch.layers) l.validate();
  RFProfile p;
  int64_t stride_prod = 1;  // prod_{i<l} s_i
  int64_t rf = 1;
  int64_t pad = 0;
  for (const auto& l : arch.layers) {
    rf += static_cast<int64_t>(l.kernel - 1) * stride_prod;
    pad += static_cast<int64_t>(l.padding) * stride_prod;
    stride_prod *= l.stride;
  }
  p.rf = rf;
  p.effective_stride = stride_prod;
  p.effective_padding = pad;
  p.validate();
  return p;
}

std::pair<HalfUnit, HalfUnit> rf_center(const RFProfile& profile, int64_t i, int64_t j) {
  const int64_t base = -2 * profile.effective_padding + (profile.rf - 1);
  HalfUnit h{base + 2 * i * profile.effective_stride};
  HalfUnit v{base + 2 * j * profile.effective_stride};
  return {h, v};
}

int64_t chain_output_size(const ArchSpec& arch, int64_t input_size) {
  int64_t n = input_size;
  for (const auto& l : arch.layers) {
    n = floor_div(n + 2 * l.padding - l.kernel, l.stride) + 1;
    if (n < 1)
      fail(strfmt("input size %lld collapses at layer '%s'", static_cast<long long>(input_size), l.name.c_str()));
  }
  return n;
}

BruteForceResult brute_force_rf(const ArchSpec& arch, int64_t input_size) {
  arch.validate();
  // per-layer output sizes
  std::vector<int64_t> sizes;  // sizes[0] = input, sizes[l+1] = output of layer l
  sizes.push_back(input_size);
  for (const auto& l : arch.layers) {
    int64_t n = floor_div(sizes.back() + 2 * l.padding - l.kernel, l.stride) + 1;
    if (n < 1)
      fail(strfmt("insufficient input: size %lld collapses at layer '%s'", static_cast<long long>(input_size),
                  l.name.c_str()));
    sizes.push_back(n);
  }
  BruteForceResult res;
  res.out_size = sizes.back();

  // map output pixel index -> input dependency interval [a, b]
  auto input_extent = [&](int64_t out_idx) {
    int64_t a = out_idx, b = out_idx;
    for (size_t li = arch.layers.size(); li-- > 0;) {
      const auto& l = arch.layers[li];
      a = a * l.stride - l.padding;
      b = b * l.stride - l.padding + l.kernel - 1;
    }
    return std::pair<int64_t, int64_t>{a, b};
  };

  res.extents.reserve(static_cast<size_t>(res.out_size));
  for (int64_t i = 0; i < res.out_size; ++i) {
    auto [a, b] = input_extent(i);
    res.extents.emplace_back(a, b);
    res.centers.push_back(HalfUnit{a + b});  // midpoint (a+b)/2 in half-units
  }

  const int64_t mid = (res.out_size - 1) / 2;
  auto [a, b] = res.extents[static_cast<size_t>(mid)];
  if (a < 0 || b > input_size - 1)
    fail(strfmt("insufficient input: central output pixel %lld needs input rows [%lld, %lld] of %lld",
                static_cast<long long>(mid), static_cast<long long>(a), static_cast<long long>(b),
                static_cast<long long>(input_size)));
  res.rf = b - a + 1;
  return res;
}

CellAssignment cell_assignment(const RFProfile& profile, int64_t input_h, int64_t input_w,
                               const puzzle::GridSpec& grid) {
  profile.validate();
  const int g = grid.side;
  check(input_h >= g && input_w >= g, "cell_assignment: input smaller than grid");
  check(input_h % g == 0 && input_w % g == 0,
        strfmt("cell_assignment: input %lldx%lld not divisible by grid side %d (crop first)",
               static_cast<long long>(input_h), static_cast<long long>(input_w), g));

  CellAssignment asg;
  asg.grid_side = g;
  asg.feature_h = floor_div(input_h + 2 * profile.effective_padding - profile.rf, profile.effective_stride) + 1;
  asg.feature_w = floor_div(input_w + 2 * profile.effective_padding - profile.rf, profile.effective_stride) + 1;
  check(asg.feature_h >= g && asg.feature_w >= g,
        strfmt("cell_assignment: feature map %lldx%lld smaller than grid side %d",
               static_cast<long long>(asg.feature_h), static_cast<long long>(asg.feature_w), g));

  const int64_t cell_h = input_h / g, cell_w = input_w / g;
  auto cell_index_1d = [](HalfUnit center, int64_t limit, int64_t cell_size, int g_side) {
    int64_t twice = std::clamp<int64_t>(center.twice, 0, 2 * (limit - 1));
    int64_t px = HalfUnit{twice}.round_half_down();
    return static_cast<int>(std::min<int64_t>(px / cell_size, g_side - 1));
  };

  asg.cell_of.assign(static_cast<size_t>(asg.feature_h * asg.feature_w), -1);
  asg.cell_pixels.assign(static_cast<size_t>(asg.num_cells()), {});
  for (int64_t i = 0; i < asg.feature_h; ++i) {
    for (int64_t j = 0; j < asg.feature_w; ++j) {
      auto [h, v] = rf_center(profile, i, j);
      const int row = cell_index_1d(h, input_h, cell_h, g);
      const int col = cell_index_1d(v, input_w, cell_w, g);
      const int cell = row * g + col;
      const int64_t flat = i * asg.feature_w + j;
      asg.cell_of[static_cast<size_t>(flat)] = cell;
      asg.cell_pixels[static_cast<size_t>(cell)].push_back(flat);
    }
  }
  for (int c = 0; c < asg.num_cells(); ++c) {
    if (asg.cell_pixels[static_cast<size_t>(c)].empty())
      fail(strfmt("resolution mismatch: grid cell %d (row %d, col %d) receives no feature pixels", c, c / g,
                  c % g));
  }
  return asg;
}

}  // namespace patchforge::archspec
