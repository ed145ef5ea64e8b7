#pragma once

#include <set>
#include <string>
#include <vector>

#include "patchforge/config.hpp"
#include "patchforge/dataio.hpp"
#include "patchforge/model.hpp"
#include "patchforge/train.hpp"

namespace patchforge::transfer {

enum class InitSource { random, checkpoint };

struct BlockPlan {
  InitSource init = InitSource::random;
  bool trainable = true;
};

// Per-block initialization and freezing choices for a fine-tune run. The
// final classifier is always randomly initialized and trainable. Freezing a
// randomly initialized block is rejected unless explicitly flagged as a
// control experiment.
struct TransferPlan {
  std::vector<BlockPlan> blocks;
  bool allow_frozen_random = false;

  void validate() const;
};

// keys: blockN.init = random|checkpoint, blockN.trainable = true|false,
// allow_frozen_random = true|false
TransferPlan parse_transfer_plan(KeyValueConfig& cfg, int num_blocks);

struct TransferSetup {
  std::set<std::string> frozen;  // tensor names (params and state) of frozen blocks
  int copied = 0;                // tensors taken from the checkpoint
};

// Applies the plan to a freshly initialized backbone: copies checkpoint
// tensors into checkpoint-initialized blocks, marks frozen blocks, and
// switches their layers to evaluation behavior.
TransferSetup build_transfer(const TransferPlan& plan, const train::Checkpoint& ckpt,
                             model::Backbone& backbone);

struct MIoUReport {
  std::vector<double> per_class_iou;       // NaN where the union is empty
  std::vector<int64_t> intersection, unions;
  double mean_iou = 0.0;                   // mean over classes with nonempty union

  std::string to_csv() const;
};

// pred/truth: (H,W) or (1,H,W) integer class ids stored as doubles; ids equal
// to ignore_id (when >= 0) are excluded from both counts.
MIoUReport miou(const Tensor& pred, const Tensor& truth, int num_classes, int ignore_id = -1);
MIoUReport accumulate_miou(const std::vector<MIoUReport>& parts);

struct SegTrainConfig {
  int64_t steps = 300;
  int batch_size = 4;
  int64_t crop = 96;
  int num_classes = 4;
  int ignore_id = -1;
  train::OptimizerConfig optim;
  dataio::AugmentConfig augment;
  uint64_t seed = 1;
  std::filesystem::path out_dir;
  int64_t eval_every = 0;   // 0 = evaluate only at the end
  int64_t train_limit = 0;  // use only the first N training entries (0 = all)

  void validate() const;
};

SegTrainConfig seg_config_from(KeyValueConfig& cfg);

struct SegTrainResult {
  std::vector<train::StepMetrics> metrics;  // patch_acc column holds pixel accuracy
  std::filesystem::path metrics_csv;
  MIoUReport final_miou;
  std::filesystem::path checkpoint;
};

// Fine-tunes the segmentation head (and every non-frozen backbone block)
// with per-pixel cross-entropy; frozen tensors stay bit-identical.
SegTrainResult finetune_seg(model::Backbone& backbone, model::SegHead& head,
                            const std::set<std::string>& frozen, const SegTrainConfig& cfg,
                            const dataio::DatasetManifest& train_data,
                            const dataio::DatasetManifest& val_data, const dataio::ChannelStats& stats);

// mIoU of the model over a manifest with masks (evaluation mode, whole
// images center-cropped to the effective stride grid).
MIoUReport evaluate_seg(model::Backbone& backbone, model::SegHead& head,
                        const dataio::DatasetManifest& data, const dataio::ChannelStats& stats,
                        int num_classes, int ignore_id = -1);

struct PuzzleEvalResult {
  int64_t total_cells = 0;
  int64_t correct_cells = 0;
  double accuracy = 0.0;
  std::vector<std::pair<std::string, double>> per_image;  // image path, accuracy
};

// One seeded puzzle per image; each cell's predicted location is the
// row-argmax of the head logits (ties toward the smallest index).
PuzzleEvalResult puzzle_accuracy(model::Backbone& backbone, model::JigsawHead& head,
                                 const dataio::DatasetManifest& data, const puzzle::GridSpec& grid,
                                 uint64_t seed, const dataio::ChannelStats& stats);

}  // namespace patchforge::transfer
