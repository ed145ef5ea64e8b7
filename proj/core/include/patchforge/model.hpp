#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "patchforge/archspec.hpp"
#include "patchforge/nn.hpp"

namespace patchforge::model {

struct FeatureMap {
  Tensor values;  // N x C x Hf x Wf
  archspec::RFProfile profile;
};

// FCN backbone built from an ArchSpec: conv layers become Conv2d
// [+ BatchNorm] + ReLU, pool layers become MaxPool2d. Freezing operates on
// resolution blocks; a frozen block keeps its tensors bit-identical through
// any amount of training (batch norm switches to running statistics).
class Backbone {
public:
  Backbone() = default;
  static Backbone build(const archspec::ArchSpec& arch, bool batch_norm, uint64_t init_seed);

  Tensor forward(const Tensor& x, bool training);  // x: N x C x H x W
  Tensor backward(const Tensor& grad_out);
  void zero_grad();

  const archspec::ArchSpec& arch() const { return arch_; }
  const archspec::RFProfile& profile() const { return profile_; }
  int out_channels() const { return arch_.out_channels(); }
  bool batch_norm() const { return batch_norm_; }

  // covers the layer chain plus construction options that change the
  // parameter set, so checkpoints can reject mismatched models
  uint64_t fingerprint() const;

  std::vector<nn::NamedTensor> params() { return seq_.params(); }
  std::vector<nn::NamedTensor> grads() { return seq_.grads(); }
  std::vector<nn::NamedTensor> state() { return seq_.state(); }

  // block id of a parameter/state tensor name; -1 if unknown
  int block_of(const std::string& tensor_name) const;
  void set_block_frozen(int block, bool frozen);

private:
  archspec::ArchSpec arch_;
  bool batch_norm_ = false;
  archspec::RFProfile profile_;
  nn::Sequential seq_;
  std::map<std::string, int> prefix_block_;   // layer name -> block
  std::vector<std::vector<size_t>> block_layers_;  // block -> seq indices
};

FeatureMap backbone_forward(Backbone& backbone, const Tensor& image, bool training);

// Mean of the feature pixels assigned to each grid cell:
// (N, C, Hf, Wf) -> (N, num_cells, C), cells in row-major position order.
Tensor pool_cells(const Tensor& features, const archspec::CellAssignment& assignment);
Tensor pool_cells_backward(const Tensor& grad_cells, const archspec::CellAssignment& assignment,
                           const std::vector<int64_t>& feature_shape);

// Center-referenced location head: every position's feature is concatenated
// with the center cell's feature, reduced to a hidden width, rectified and
// classified over the N absolute locations. Weights are shared across
// positions.
class JigsawHead {
public:
  JigsawHead() = default;
  JigsawHead(int in_channels, int num_cells, int center_index, uint64_t init_seed, int hidden = 512);

  Tensor forward(const Tensor& cell_features);            // (N, cells, C) -> (N, cells, cells)
  Tensor backward(const Tensor& grad_logits);             // -> grad w.r.t. cell features
  void zero_grad();

  std::vector<nn::NamedTensor> params();
  std::vector<nn::NamedTensor> grads();

  int num_cells() const { return num_cells_; }
  int center_index() const { return center_index_; }
  int hidden() const { return hidden_; }
  int64_t trainable_param_count() const;
  int64_t reduce_weight_count() const;  // weights of the first reduction layer only

private:
  int in_channels_ = 0, num_cells_ = 0, center_index_ = 0, hidden_ = 0;
  std::unique_ptr<nn::Linear> reduce_;
  std::unique_ptr<nn::ReLU> relu_;
  std::unique_ptr<nn::Linear> classify_;
  std::vector<int64_t> feats_shape_;
};

enum class ConcatMode { reference_concat, permutation_concat };

// Weight count of the first reduction layer (to a 512-wide hidden) under the
// two concatenation schemes; biases and the classifier are excluded.
int64_t head_param_count(int64_t channels, int64_t num_patches, ConcatMode mode);

// 1x1 classification of each feature pixel followed by bilinear upsampling
// back to input resolution.
class SegHead {
public:
  SegHead() = default;
  SegHead(int in_channels, int num_classes, int upsample_factor, uint64_t init_seed);

  Tensor forward(const Tensor& features, bool training);  // (N,C,h,w) -> (N,K,h*f,w*f)
  Tensor backward(const Tensor& grad_out);
  void zero_grad();

  std::vector<nn::NamedTensor> params();
  std::vector<nn::NamedTensor> grads();
  int num_classes() const { return num_classes_; }
  int upsample_factor() const { return factor_; }

private:
  int num_classes_ = 0, factor_ = 1;
  std::unique_ptr<nn::Conv2d> classifier_;
  std::unique_ptr<nn::BilinearUpsample> upsample_;
};

// Per-pixel class scores at input resolution.
Tensor seg_forward(Backbone& backbone, SegHead& head, const Tensor& image, bool training);

}  // namespace patchforge::model
