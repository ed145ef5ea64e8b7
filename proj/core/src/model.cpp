#include "patchforge/model.hpp"

#include <algorithm>

namespace patchforge::model {

using archspec::ArchSpec;
using archspec::LayerKind;

Backbone Backbone::build(const ArchSpec& arch, bool batch_norm, uint64_t init_seed) {
  arch.validate();
  Backbone bb;
  bb.arch_ = arch;
  bb.batch_norm_ = batch_norm;
  bb.profile_ = archspec::compute_rf_profile(arch);
  const int nblocks = std::max(1, arch.num_blocks());
  bb.block_layers_.assign(static_cast<size_t>(nblocks), {});
  Rng rng(init_seed);
  for (size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const int block = arch.block_starts.empty() ? 0 : arch.block_of_layer(static_cast<int>(i));
    auto note = [&](const std::string& layer_name) {
      bb.prefix_block_[layer_name] = block;
      bb.block_layers_[static_cast<size_t>(block)].push_back(bb.seq_.size() - 1);
    };
    if (l.kind == LayerKind::conv) {
      const int in_ch = arch.in_channels_of(static_cast<int>(i));
      // bias is redundant under batch norm
      bb.seq_.add(std::make_unique<nn::Conv2d>(l.name, in_ch, l.out_channels, l.kernel, l.stride, l.padding,
                                               /*with_bias=*/!batch_norm, rng));
      note(l.name);
      if (batch_norm) {
        bb.seq_.add(std::make_unique<nn::BatchNorm2d>(l.name + ".bn", l.out_channels));
        note(l.name + ".bn");
      }
      bb.seq_.add(std::make_unique<nn::ReLU>(l.name + ".relu"));
      note(l.name + ".relu");
    } else {
      bb.seq_.add(std::make_unique<nn::MaxPool2d>(l.name, l.kernel, l.stride, l.padding));
      note(l.name);
    }
  }
  return bb;
}

Tensor Backbone::forward(const Tensor& x, bool training) {
  check(x.rank() == 4, "backbone: input must be N,C,H,W");
  check(x.dim(1) == arch_.input_channels,
        strfmt("backbone: expected %d input channels, got %lld", arch_.input_channels,
               static_cast<long long>(x.dim(1))));
  return seq_.forward(x, training);
}

Tensor Backbone::backward(const Tensor& grad_out) { return seq_.backward(grad_out); }

void Backbone::zero_grad() { seq_.zero_grad(); }

uint64_t Backbone::fingerprint() const {
  uint64_t h = arch_.fingerprint();
  h ^= batch_norm_ ? 0x9e3779b97f4a7c15ull : 0x517cc1b727220a95ull;
  h *= 1099511628211ull;
  return h;
}

int Backbone::block_of(const std::string& tensor_name) const {
  // tensor names are "<layer>.<suffix>"; layer names may contain dots (".bn")
  std::string name = tensor_name;
  while (true) {
    auto it = prefix_block_.find(name);
    if (it != prefix_block_.end()) return it->second;
    const size_t dot = name.rfind('.');
    if (dot == std::string::npos) return -1;
    name = name.substr(0, dot);
  }
}

void Backbone::set_block_frozen(int block, bool frozen) {
  check(block >= 0 && block < static_cast<int>(block_layers_.size()),
        strfmt("set_block_frozen: no block %d", block));
  for (size_t idx : block_layers_[static_cast<size_t>(block)]) seq_.layer(idx).set_frozen(frozen);
}

FeatureMap backbone_forward(Backbone& backbone, const Tensor& image, bool training) {
  FeatureMap fm;
  fm.values = backbone.forward(image, training);
  fm.profile = backbone.profile();
  return fm;
}

Tensor pool_cells(const Tensor& features, const archspec::CellAssignment& assignment) {
  check(features.rank() == 4, "pool_cells: features must be N,C,Hf,Wf");
  const int64_t n = features.dim(0), c = features.dim(1), fh = features.dim(2), fw = features.dim(3);
  check(fh == assignment.feature_h && fw == assignment.feature_w,
        strfmt("pool_cells: feature map %lldx%lld does not match assignment %lldx%lld",
               static_cast<long long>(fh), static_cast<long long>(fw),
               static_cast<long long>(assignment.feature_h), static_cast<long long>(assignment.feature_w)));
  const int cells = assignment.num_cells();
  Tensor out({n, cells, c});
  for (int64_t s = 0; s < n; ++s)
    for (int cell = 0; cell < cells; ++cell) {
      const auto& px = assignment.cell_pixels[static_cast<size_t>(cell)];
      check(!px.empty(), strfmt("pool_cells: cell %d has no feature pixels", cell));
      const double inv = 1.0 / static_cast<double>(px.size());
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* plane = features.data() + (s * c + ch) * fh * fw;
        double sum = 0.0;
        for (int64_t flat : px) sum += plane[flat];
        out.at(s, cell, ch) = sum * inv;
      }
    }
  return out;
}

Tensor pool_cells_backward(const Tensor& grad_cells, const archspec::CellAssignment& assignment,
                           const std::vector<int64_t>& feature_shape) {
  check(feature_shape.size() == 4, "pool_cells_backward: feature shape must be rank 4");
  const int64_t n = feature_shape[0], c = feature_shape[1], fh = feature_shape[2], fw = feature_shape[3];
  Tensor gx({n, c, fh, fw});
  const int cells = assignment.num_cells();
  for (int64_t s = 0; s < n; ++s)
    for (int cell = 0; cell < cells; ++cell) {
      const auto& px = assignment.cell_pixels[static_cast<size_t>(cell)];
      const double inv = 1.0 / static_cast<double>(px.size());
      for (int64_t ch = 0; ch < c; ++ch) {
        double* plane = gx.data() + (s * c + ch) * fh * fw;
        const double g = grad_cells.at(s, cell, ch) * inv;
        for (int64_t flat : px) plane[flat] += g;
      }
    }
  return gx;
}

JigsawHead::JigsawHead(int in_channels, int num_cells, int center_index, uint64_t init_seed, int hidden)
    : in_channels_(in_channels), num_cells_(num_cells), center_index_(center_index), hidden_(hidden) {
  check(in_channels >= 1 && num_cells >= 1 && hidden >= 1, "JigsawHead: invalid sizes");
  check(center_index >= 0 && center_index < num_cells, "JigsawHead: center index out of range");
  Rng rng(init_seed);
  reduce_ = std::make_unique<nn::Linear>("head.reduce", 2 * in_channels, hidden, rng);
  relu_ = std::make_unique<nn::ReLU>("head.relu");
  classify_ = std::make_unique<nn::Linear>("head.classify", hidden, num_cells, rng);
}

Tensor JigsawHead::forward(const Tensor& cell_features) {
  check(cell_features.rank() == 3, "jigsaw head: input must be (N, cells, C)");
  check(cell_features.dim(1) == num_cells_ && cell_features.dim(2) == in_channels_,
        strfmt("jigsaw head: expected (*, %d, %d), got (*, %lld, %lld)", num_cells_, in_channels_,
               static_cast<long long>(cell_features.dim(1)), static_cast<long long>(cell_features.dim(2))));
  const int64_t n = cell_features.dim(0);
  feats_shape_ = cell_features.shape();
  Tensor concat({n * num_cells_, 2 * in_channels_});
  for (int64_t s = 0; s < n; ++s) {
    const double* center = cell_features.data() + (s * num_cells_ + center_index_) * in_channels_;
    for (int p = 0; p < num_cells_; ++p) {
      const double* feat = cell_features.data() + (s * num_cells_ + p) * in_channels_;
      double* row = concat.data() + (s * num_cells_ + p) * 2 * in_channels_;
      std::copy(feat, feat + in_channels_, row);
      std::copy(center, center + in_channels_, row + in_channels_);
    }
  }
  Tensor h = reduce_->forward(concat, true);
  h = relu_->forward(h, true);
  Tensor logits2d = classify_->forward(h, true);
  Tensor logits({n, num_cells_, num_cells_});
  std::copy(logits2d.data(), logits2d.data() + logits2d.numel(), logits.data());
  return logits;
}

Tensor JigsawHead::backward(const Tensor& grad_logits) {
  check(!feats_shape_.empty(), "jigsaw head: backward before forward");
  const int64_t n = feats_shape_[0];
  Tensor g2d({n * num_cells_, num_cells_});
  std::copy(grad_logits.data(), grad_logits.data() + grad_logits.numel(), g2d.data());
  Tensor g = classify_->backward(g2d);
  g = relu_->backward(g);
  g = reduce_->backward(g);  // (n*cells, 2C)
  Tensor gfeats({n, num_cells_, in_channels_});
  for (int64_t s = 0; s < n; ++s) {
    double* gcenter = gfeats.data() + (s * num_cells_ + center_index_) * in_channels_;
    for (int p = 0; p < num_cells_; ++p) {
      const double* row = g.data() + (s * num_cells_ + p) * 2 * in_channels_;
      double* gfeat = gfeats.data() + (s * num_cells_ + p) * in_channels_;
      for (int c = 0; c < in_channels_; ++c) gfeat[c] += row[c];
      for (int c = 0; c < in_channels_; ++c) gcenter[c] += row[in_channels_ + c];
    }
  }
  return gfeats;
}

void JigsawHead::zero_grad() {
  reduce_->zero_grad();
  classify_->zero_grad();
}

std::vector<nn::NamedTensor> JigsawHead::params() {
  std::vector<nn::NamedTensor> out;
  reduce_->params(out);
  classify_->params(out);
  return out;
}

std::vector<nn::NamedTensor> JigsawHead::grads() {
  std::vector<nn::NamedTensor> out;
  reduce_->grads(out);
  classify_->grads(out);
  return out;
}

int64_t JigsawHead::trainable_param_count() const {
  return static_cast<int64_t>(2 * in_channels_) * hidden_ + hidden_  // reduce weight + bias
         + static_cast<int64_t>(hidden_) * num_cells_ + num_cells_;  // classifier weight + bias
}

int64_t JigsawHead::reduce_weight_count() const {
  return static_cast<int64_t>(2 * in_channels_) * hidden_;
}

int64_t head_param_count(int64_t channels, int64_t num_patches, ConcatMode mode) {
  check(channels >= 1 && num_patches >= 1, "head_param_count: sizes must be >= 1");
  constexpr int64_t kHidden = 512;
  switch (mode) {
    case ConcatMode::permutation_concat:
      return num_patches * channels * kHidden;
    case ConcatMode::reference_concat:
      return 2 * channels * kHidden;
  }
  fail("head_param_count: unknown mode");
}

SegHead::SegHead(int in_channels, int num_classes, int upsample_factor, uint64_t init_seed)
    : num_classes_(num_classes), factor_(upsample_factor) {
  check(num_classes >= 2, "SegHead: need at least two classes");
  Rng rng(init_seed);
  classifier_ = std::make_unique<nn::Conv2d>("seg.classifier", in_channels, num_classes, 1, 1, 0,
                                             /*with_bias=*/true, rng);
  upsample_ = std::make_unique<nn::BilinearUpsample>("seg.upsample", upsample_factor);
}

Tensor SegHead::forward(const Tensor& features, bool training) {
  Tensor scores = classifier_->forward(features, training);
  return upsample_->forward(scores, training);
}

Tensor SegHead::backward(const Tensor& grad_out) {
  Tensor g = upsample_->backward(grad_out);
  return classifier_->backward(g);
}

void SegHead::zero_grad() { classifier_->zero_grad(); }

std::vector<nn::NamedTensor> SegHead::params() {
  std::vector<nn::NamedTensor> out;
  classifier_->params(out);
  return out;
}

std::vector<nn::NamedTensor> SegHead::grads() {
  std::vector<nn::NamedTensor> out;
  classifier_->grads(out);
  return out;
}

Tensor seg_forward(Backbone& backbone, SegHead& head, const Tensor& image, bool training) {
  Tensor features = backbone.forward(image, training);
  Tensor scores = head.forward(features, training);
  check(scores.dim(2) == image.dim(2) && scores.dim(3) == image.dim(3),
        strfmt("seg_forward: upsampled scores %lldx%lld do not match input %lldx%lld; "
               "input size must be divisible by the effective stride",
               static_cast<long long>(scores.dim(2)), static_cast<long long>(scores.dim(3)),
               static_cast<long long>(image.dim(2)), static_cast<long long>(image.dim(3))));
  return scores;
}

}  // namespace patchforge::model
