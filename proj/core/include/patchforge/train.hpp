#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "patchforge/config.hpp"
#include "patchforge/dataio.hpp"
#include "patchforge/model.hpp"
#include "patchforge/nn.hpp"
#include "patchforge/puzzle.hpp"

namespace patchforge::train {

struct ScheduleEntry {
  int64_t step = 0;
  double factor = 1.0;
};

struct OptimizerConfig {
  double base_lr = 0.1;
  double momentum = 0.9;
  std::vector<ScheduleEntry> schedule;  // strictly increasing steps, factors > 0

  void validate() const;
};

// base_lr times the product of factors whose step <= the current step
double lr_at(const OptimizerConfig& cfg, int64_t step);

// "10000:0.2,20000:0.1" -> entries; empty string -> empty schedule
std::vector<ScheduleEntry> parse_schedule(const std::string& text);

// classical momentum: v <- momentum*v + g; p <- p - lr*v
void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum);

// Momentum state keyed by parameter name, lazily zero-initialized. Frozen
// names are skipped entirely (no update, no velocity change).
class SgdState {
public:
  void step(const std::vector<nn::NamedTensor>& params, const std::vector<nn::NamedTensor>& grads,
            double lr, double momentum, const std::set<std::string>* frozen = nullptr);

  std::map<std::string, Tensor>& velocity() { return velocity_; }
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }

private:
  std::map<std::string, Tensor> velocity_;
};

// Mean over all patch positions (center included) of the cross-entropy
// between each row of logits and the true absolute location. Accepts
// (cells, cells) or (N, cells, cells); labels are row-major across the
// batch. Optionally emits the gradient w.r.t. logits and the number of
// correct row argmaxes (ties broken toward the smallest index).
double jigsaw_loss(const Tensor& logits, const std::vector<int>& labels, Tensor* grad_logits = nullptr,
                   int64_t* correct = nullptr);

// Per-pixel softmax cross-entropy for segmentation. scores: (N,K,H,W),
// mask: (N,1,H,W) integer class ids stored as doubles. Pixels whose id
// equals ignore_id (when >= 0) are excluded.
double seg_cross_entropy(const Tensor& scores, const Tensor& mask, int ignore_id = -1,
                         Tensor* grad_scores = nullptr, int64_t* correct = nullptr,
                         int64_t* counted = nullptr);

struct Checkpoint {
  int64_t step = 0;
  uint64_t arch_fingerprint = 0;
  std::vector<std::pair<std::string, Tensor>> params;     // trainable + persistent state
  std::vector<std::pair<std::string, Tensor>> opt_state;  // momentum velocities
  std::string rng_state;
  // self-description (architecture text, head sizes, ...) so tools can
  // rebuild the exact model from the file alone
  std::vector<std::pair<std::string, std::string>> meta;

  const Tensor* find(const std::string& name) const;
  std::string meta_value(const std::string& key) const;  // "" when absent
};

// Binary format with header/footer magics; loads reject truncated or
// otherwise malformed files. Fingerprint checks happen at use time (or pass
// expected_fingerprint to check at load).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file, uint64_t expected_fingerprint);

// gather/scatter between live model tensors and checkpoint records
Checkpoint snapshot(model::Backbone& backbone, model::JigsawHead* jigsaw_head, model::SegHead* seg_head,
                    const SgdState& sgd, int64_t step, const std::string& rng_state);
void restore_backbone(const Checkpoint& ckpt, model::Backbone& backbone);

// rebuild the models a checkpoint was saved from, using its metadata
model::Backbone backbone_from_checkpoint(const Checkpoint& ckpt);
model::JigsawHead jigsaw_head_from_checkpoint(const Checkpoint& ckpt, const model::Backbone& backbone);
model::SegHead seg_head_from_checkpoint(const Checkpoint& ckpt, const model::Backbone& backbone);

struct JigsawTrainConfig {
  std::string backbone = "tinyfcn";  // preset name or architecture file path
  bool batch_norm = true;
  int grid_side = 3;
  int64_t crop = 96;
  int batch_size = 8;
  int64_t steps = 2000;
  OptimizerConfig optim;
  dataio::AugmentConfig augment;  // crop_h/crop_w follow `crop`
  uint64_t seed = 1;
  int head_hidden = 512;
  std::vector<int64_t> checkpoint_steps;
  std::filesystem::path out_dir;
  std::filesystem::path resume;  // optional checkpoint to resume from

  void validate() const;
};

// shared between the CLI and tests; consumes the recognized keys
JigsawTrainConfig jigsaw_config_from(KeyValueConfig& cfg);

struct StepMetrics {
  int64_t step = 0;
  double lr = 0, loss = 0, patch_acc = 0;
};

struct JigsawTrainResult {
  std::vector<StepMetrics> metrics;
  std::filesystem::path metrics_csv;
  std::map<int64_t, std::filesystem::path> checkpoints;  // step -> param-at-N.ckpt
};

// The pretraining loop: sample crops, build puzzles, forward, loss,
// backward, SGD; deterministic given the seed (single worker).
JigsawTrainResult train_jigsaw(const JigsawTrainConfig& cfg, const dataio::DatasetManifest& data,
                               const dataio::ChannelStats& stats);

std::string format_metrics_row(const StepMetrics& m);

}  // namespace patchforge::train
