#include <map>
#include <sstream>

#include "patchforge/archspec.hpp"

namespace patchforge::archspec {

namespace {

// AlexNet features. Four resolution blocks: conv1 takes two halvings at
// once, so a five-way split by resolution does not exist for this chain.
std::string alexnet_text() {
  return
      "# AlexNet feature extractor as a sequential chain\n"
      "input_channels 3\n"
      "block\n"
      "conv1 conv 11 4 2 96\n"
      "block\n"
      "pool1 pool 3 2 0\n"
      "conv2 conv 5 1 2 256\n"
      "block\n"
      "pool2 pool 3 2 0\n"
      "conv3 conv 3 1 1 384\n"
      "conv4 conv 3 1 1 384\n"
      "conv5 conv 3 1 1 256\n"
      "block\n"
      "pool5 pool 3 2 0\n";
}

// VGG16 features. Six resolution blocks: the first two convs run at full
// input resolution before pool1.
std::string vgg16_text() {
  std::ostringstream os;
  os << "# VGG16 feature extractor\n";
  os << "input_channels 3\n";
  const int widths[5] = {64, 128, 256, 512, 512};
  const int convs[5] = {2, 2, 3, 3, 3};
  os << "block\n";
  for (int s = 0; s < 5; ++s) {
    if (s > 0) os << "block\n";
    if (s > 0) os << "pool" << s << " pool 2 2 0\n";
    for (int c = 0; c < convs[s]; ++c)
      os << "conv" << (s + 1) << "_" << (c + 1) << " conv 3 1 1 " << widths[s] << "\n";
  }
  os << "block\n";
  os << "pool5 pool 2 2 0\n";
  return os.str();
}

// ResNet101 modeled as its deepest sequential conv chain; shortcut branches
// are ignored. Downsampling bottlenecks carry the stride in their first 1x1.
std::string resnet101_text() {
  std::ostringstream os;
  os << "# ResNet101 deepest sequential chain (shortcuts ignored)\n";
  os << "input_channels 3\n";
  os << "block\n";
  os << "conv1 conv 7 2 3 64\n";
  os << "block\n";
  os << "pool1 pool 3 2 1\n";
  const int blocks[4] = {3, 4, 23, 3};
  const int width[4] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    const int w = width[stage];
    for (int b = 0; b < blocks[stage]; ++b) {
      const bool down = (stage > 0 && b == 0);
      if (down) os << "block\n";
      const std::string tag = "s" + std::to_string(stage + 2) + "b" + std::to_string(b + 1);
      os << tag << "_r conv 1 " << (down ? 2 : 1) << " 0 " << w << "\n";
      os << tag << "_c conv 3 1 1 " << w << "\n";
      os << tag << "_e conv 1 1 0 " << (4 * w) << "\n";
    }
  }
  return os.str();
}

// Ten plain convolutions in five stride-2 blocks, widths 8/16/32/64/64.
// Small enough to train on a laptop CPU; rf=187, S0=32, P0=93.
std::string tinyfcn_text() {
  std::ostringstream os;
  os << "# TinyFCN: five blocks of (conv3 s2 + conv3 s1)\n";
  os << "input_channels 3\n";
  const int widths[5] = {8, 16, 32, 64, 64};
  for (int b = 0; b < 5; ++b) {
    os << "block\n";
    os << "b" << (b + 1) << "c1 conv 3 2 1 " << widths[b] << "\n";
    os << "b" << (b + 1) << "c2 conv 3 1 1 " << widths[b] << "\n";
  }
  return os.str();
}

// MobileNetV2 at width multiplier 0.75 with the last layer narrowed to 512,
// written as a sequential chain. Depthwise convolutions appear as plain conv
// lines (same kernel/stride/padding, so identical RF geometry); inverted
// residual shortcuts are ignored, as for ResNet101.
std::string mobilenetv2_075_text() {
  std::ostringstream os;
  os << "# MobileNetV2 x0.75 chain, last width 512, stride 32\n";
  os << "input_channels 3\n";
  os << "block\n";
  os << "conv1 conv 3 2 1 24\n";
  struct Stage {
    int expansion, out, repeats, stride;
  };
  // width-multiplied channels of the standard stage table
  const Stage stages[] = {
      {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 24, 3, 2}, {6, 48, 4, 2},
      {6, 72, 3, 1}, {6, 120, 3, 2}, {6, 240, 1, 1},
  };
  int in_ch = 24;
  int stage_no = 0;
  for (const auto& st : stages) {
    ++stage_no;
    for (int b = 0; b < st.repeats; ++b) {
      const int s = (b == 0) ? st.stride : 1;
      const int expanded = in_ch * st.expansion;
      const std::string tag = "s" + std::to_string(stage_no) + "b" + std::to_string(b + 1);
      if (st.expansion != 1) os << tag << "_ex conv 1 1 0 " << expanded << "\n";
      if (s > 1) os << "block\n";
      os << tag << "_dw conv 3 " << s << " 1 " << expanded << "\n";
      os << tag << "_pj conv 1 1 0 " << st.out << "\n";
      in_ch = st.out;
    }
  }
  os << "conv_last conv 1 1 0 512\n";
  return os.str();
}

const std::map<std::string, std::string>& preset_map() {
  static const std::map<std::string, std::string> m = {
      {"alexnet", alexnet_text()},
      {"vgg16", vgg16_text()},
      {"resnet101", resnet101_text()},
      {"tinyfcn", tinyfcn_text()},
      {"mobilenetv2_075", mobilenetv2_075_text()},
  };
  return m;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : preset_map()) out.push_back(k);
  return out;
}

bool is_preset(const std::string& name) { return preset_map().count(name) > 0; }

const std::string& preset_text(const std::string& name) {
  auto it = preset_map().find(name);
  if (it == preset_map().end()) fail(strfmt("unknown architecture preset '%s'", name.c_str()));
  return it->second;
}

ArchSpec preset(const std::string& name) { return parse_arch(preset_text(name), "preset:" + name); }

}  // namespace patchforge::archspec
