#include "patchforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace patchforge::train {

void OptimizerConfig::validate() const {
  check(base_lr > 0.0, "OptimizerConfig: base_lr must be positive");
  check(momentum >= 0.0 && momentum < 1.0, "OptimizerConfig: momentum must be in [0,1)");
  int64_t prev = -1;
  for (const auto& e : schedule) {
    check(e.factor > 0.0, "OptimizerConfig: schedule factors must be positive");
    check(e.step > prev, "OptimizerConfig: schedule steps must be strictly increasing");
    prev = e.step;
  }
}

double lr_at(const OptimizerConfig& cfg, int64_t step) {
  double lr = cfg.base_lr;
  for (const auto& e : cfg.schedule)
    if (e.step <= step) lr *= e.factor;
  return lr;
}

std::vector<ScheduleEntry> parse_schedule(const std::string& text) {
  std::vector<ScheduleEntry> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    const size_t colon = item.find(':');
    if (colon == std::string::npos)
      fail(strfmt("schedule: expected 'step:factor', got '%s'", item.c_str()));
    try {
      ScheduleEntry e;
      e.step = std::stoll(item.substr(0, colon));
      e.factor = std::stod(item.substr(colon + 1));
      out.push_back(e);
    } catch (const std::exception&) {
      fail(strfmt("schedule: malformed entry '%s'", item.c_str()));
    }
  }
  return out;
}

void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum) {
  check(param.same_shape(grad), "sgd_update: param/grad shape mismatch");
  check(param.same_shape(velocity), "sgd_update: param/velocity shape mismatch");
  double* p = param.data();
  const double* g = grad.data();
  double* v = velocity.data();
  const int64_t n = param.numel();
  for (int64_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

void SgdState::step(const std::vector<nn::NamedTensor>& params, const std::vector<nn::NamedTensor>& grads,
                    double lr, double momentum, const std::set<std::string>* frozen) {
  check(params.size() == grads.size(), "SgdState::step: param/grad list mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    check(params[i].name == grads[i].name, "SgdState::step: param/grad name mismatch");
    if (frozen && frozen->count(params[i].name)) continue;
    auto it = velocity_.find(params[i].name);
    if (it == velocity_.end())
      it = velocity_.emplace(params[i].name, Tensor(params[i].tensor->shape())).first;
    sgd_update(*params[i].tensor, *grads[i].tensor, it->second, lr, momentum);
  }
}

namespace {

// stable log-sum-exp cross-entropy over one row; returns loss, fills softmax
double row_cross_entropy(const double* logits, int64_t n, int label, std::vector<double>& softmax) {
  double m = logits[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    softmax[static_cast<size_t>(i)] = std::exp(logits[i] - m);
    sum += softmax[static_cast<size_t>(i)];
  }
  const double inv = 1.0 / sum;
  for (int64_t i = 0; i < n; ++i) softmax[static_cast<size_t>(i)] *= inv;
  return std::log(sum) + m - logits[label];
}

int64_t argmax_row(const double* v, int64_t n) {
  int64_t best = 0;
  for (int64_t i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;  // ties keep the smallest index
  return best;
}

}  // namespace

double jigsaw_loss(const Tensor& logits, const std::vector<int>& labels, Tensor* grad_logits,
                   int64_t* correct) {
  check(logits.rank() == 2 || logits.rank() == 3, "jigsaw_loss: logits must be (cells,cells) or (N,cells,cells)");
  const int64_t cells = logits.dim(logits.rank() - 1);
  check(logits.dim(logits.rank() - 2) == cells, "jigsaw_loss: logits rows/cols mismatch");
  const int64_t rows = logits.numel() / cells;
  check(static_cast<int64_t>(labels.size()) == rows,
        strfmt("jigsaw_loss: expected %lld labels, got %zu", static_cast<long long>(rows), labels.size()));
  for (int v : labels)
    check(v >= 0 && v < cells, strfmt("jigsaw_loss: label %d out of range [0, %lld)", v,
                                      static_cast<long long>(cells)));
  if (grad_logits) {
    *grad_logits = Tensor(logits.shape());
  }
  std::vector<double> softmax(static_cast<size_t>(cells));
  double total = 0.0;
  int64_t hits = 0;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = logits.data() + r * cells;
    const int label = labels[static_cast<size_t>(r)];
    total += row_cross_entropy(row, cells, label, softmax);
    if (argmax_row(row, cells) == label) ++hits;
    if (grad_logits) {
      double* g = grad_logits->data() + r * cells;
      for (int64_t i = 0; i < cells; ++i) g[i] = softmax[static_cast<size_t>(i)] * inv_rows;
      g[label] -= inv_rows;
    }
  }
  if (correct) *correct = hits;
  return total * inv_rows;
}

double seg_cross_entropy(const Tensor& scores, const Tensor& mask, int ignore_id, Tensor* grad_scores,
                         int64_t* correct, int64_t* counted) {
  check(scores.rank() == 4, "seg_cross_entropy: scores must be (N,K,H,W)");
  check(mask.rank() == 4 && mask.dim(1) == 1, "seg_cross_entropy: mask must be (N,1,H,W)");
  const int64_t n = scores.dim(0), k = scores.dim(1), h = scores.dim(2), w = scores.dim(3);
  check(mask.dim(0) == n && mask.dim(2) == h && mask.dim(3) == w,
        "seg_cross_entropy: scores/mask shape mismatch");
  if (grad_scores) *grad_scores = Tensor(scores.shape());
  std::vector<double> logits(static_cast<size_t>(k)), softmax(static_cast<size_t>(k));
  double total = 0.0;
  int64_t used = 0, hits = 0;
  for (int64_t s = 0; s < n; ++s)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double idd = mask.at(s, 0, y, x);
        const int id = static_cast<int>(idd);
        if (ignore_id >= 0 && id == ignore_id) continue;
        check(id >= 0 && id < k, strfmt("seg_cross_entropy: mask id %d out of range [0, %lld)", id,
                                        static_cast<long long>(k)));
        for (int64_t c = 0; c < k; ++c) logits[static_cast<size_t>(c)] = scores.at(s, c, y, x);
        total += row_cross_entropy(logits.data(), k, id, softmax);
        if (argmax_row(logits.data(), k) == id) ++hits;
        ++used;
        if (grad_scores)
          for (int64_t c = 0; c < k; ++c) grad_scores->at(s, c, y, x) = softmax[static_cast<size_t>(c)];
        if (grad_scores) grad_scores->at(s, id, y, x) -= 1.0;
      }
  check(used > 0, "seg_cross_entropy: no pixels to train on (all ignored)");
  const double inv = 1.0 / static_cast<double>(used);
  if (grad_scores)
    for (int64_t i = 0; i < grad_scores->numel(); ++i) (*grad_scores)[i] *= inv;
  if (correct) *correct = hits;
  if (counted) *counted = used;
  return total * inv;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

std::string Checkpoint::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  return "";
}

Checkpoint snapshot(model::Backbone& backbone, model::JigsawHead* jigsaw_head, model::SegHead* seg_head,
                    const SgdState& sgd, int64_t step, const std::string& rng_state) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.arch_fingerprint = backbone.fingerprint();
  ckpt.rng_state = rng_state;
  auto grab = [&](const std::vector<nn::NamedTensor>& list) {
    for (const auto& nt : list) ckpt.params.emplace_back(nt.name, *nt.tensor);
  };
  grab(backbone.params());
  grab(backbone.state());
  if (jigsaw_head) grab(jigsaw_head->params());
  if (seg_head) grab(seg_head->params());
  for (const auto& [name, vel] : sgd.velocity()) ckpt.opt_state.emplace_back(name, vel);
  return ckpt;
}

model::Backbone backbone_from_checkpoint(const Checkpoint& ckpt) {
  const std::string arch_text = ckpt.meta_value("arch");
  check(!arch_text.empty(), "checkpoint: no architecture metadata; cannot rebuild the model");
  const archspec::ArchSpec arch = archspec::parse_arch(arch_text, "checkpoint");
  const bool bn = ckpt.meta_value("batch_norm") == "1";
  model::Backbone backbone = model::Backbone::build(arch, bn, /*init_seed=*/0);
  restore_backbone(ckpt, backbone);
  return backbone;
}

model::JigsawHead jigsaw_head_from_checkpoint(const Checkpoint& ckpt, const model::Backbone& backbone) {
  const std::string grid_s = ckpt.meta_value("grid");
  const std::string hidden_s = ckpt.meta_value("head_hidden");
  check(!grid_s.empty() && !hidden_s.empty(), "checkpoint: no jigsaw head metadata");
  const puzzle::GridSpec grid(std::stoi(grid_s));
  model::JigsawHead head(backbone.arch().out_channels(), grid.num_cells(), grid.center_index(), 0,
                         std::stoi(hidden_s));
  for (auto& nt : head.params()) {
    const Tensor* src = ckpt.find(nt.name);
    check(src != nullptr, strfmt("checkpoint: missing tensor '%s'", nt.name.c_str()));
    check(src->same_shape(*nt.tensor), strfmt("checkpoint: tensor '%s' has wrong shape", nt.name.c_str()));
    *nt.tensor = *src;
  }
  return head;
}

model::SegHead seg_head_from_checkpoint(const Checkpoint& ckpt, const model::Backbone& backbone) {
  const std::string classes_s = ckpt.meta_value("seg_classes");
  check(!classes_s.empty(), "checkpoint: no segmentation head metadata");
  model::SegHead head(backbone.arch().out_channels(), std::stoi(classes_s),
                      static_cast<int>(backbone.profile().effective_stride), 0);
  for (auto& nt : head.params()) {
    const Tensor* src = ckpt.find(nt.name);
    check(src != nullptr, strfmt("checkpoint: missing tensor '%s'", nt.name.c_str()));
    check(src->same_shape(*nt.tensor), strfmt("checkpoint: tensor '%s' has wrong shape", nt.name.c_str()));
    *nt.tensor = *src;
  }
  return head;
}

void restore_backbone(const Checkpoint& ckpt, model::Backbone& backbone) {
  check(ckpt.arch_fingerprint == backbone.fingerprint(),
        "checkpoint: architecture fingerprint mismatch (checkpoint was saved for a different backbone)");
  auto restore = [&](std::vector<nn::NamedTensor> list) {
    for (auto& nt : list) {
      const Tensor* src = ckpt.find(nt.name);
      check(src != nullptr, strfmt("checkpoint: missing tensor '%s'", nt.name.c_str()));
      check(src->same_shape(*nt.tensor), strfmt("checkpoint: tensor '%s' has wrong shape", nt.name.c_str()));
      *nt.tensor = *src;
    }
  };
  restore(backbone.params());
  restore(backbone.state());
}

void JigsawTrainConfig::validate() const {
  check(grid_side >= 1 && grid_side % 2 == 1, "JigsawTrainConfig: grid side must be odd");
  check(crop >= grid_side, "JigsawTrainConfig: crop smaller than grid");
  check(batch_size >= 1, "JigsawTrainConfig: batch_size must be >= 1");
  check(steps >= 0, "JigsawTrainConfig: steps must be >= 0");
  check(!out_dir.empty(), "JigsawTrainConfig: out_dir required");
  optim.validate();
}

JigsawTrainConfig jigsaw_config_from(KeyValueConfig& cfg) {
  JigsawTrainConfig out;
  out.backbone = cfg.get_string("backbone", "tinyfcn");
  out.batch_norm = cfg.get_bool("batch_norm", true);
  out.grid_side = static_cast<int>(cfg.get_int("grid", 3));
  out.crop = cfg.get_int("crop", 96);
  out.batch_size = static_cast<int>(cfg.get_int("batch", 8));
  out.steps = cfg.get_int("steps", 2000);
  out.optim.base_lr = cfg.get_double("base_lr", 0.1);
  out.optim.momentum = cfg.get_double("momentum", 0.9);
  out.optim.schedule = parse_schedule(cfg.get_string("schedule", ""));
  out.augment.mirror_prob = cfg.get_double("mirror_prob", 0.5);
  out.augment.scale_low = cfg.get_double("scale_low", 0.5);
  out.augment.scale_high = cfg.get_double("scale_high", 2.0);
  out.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
  out.head_hidden = static_cast<int>(cfg.get_int("head_hidden", 512));
  out.checkpoint_steps = cfg.get_int_list("checkpoint_steps", "");
  if (cfg.has("resume")) out.resume = cfg.get_string("resume");
  out.augment.crop_h = out.crop;
  out.augment.crop_w = out.crop;
  return out;
}

std::string format_metrics_row(const StepMetrics& m) {
  return strfmt("%lld,%.17g,%.17g,%.17g", static_cast<long long>(m.step), m.lr, m.loss, m.patch_acc);
}

JigsawTrainResult train_jigsaw(const JigsawTrainConfig& cfg, const dataio::DatasetManifest& data,
                               const dataio::ChannelStats& stats) {
  cfg.validate();
  check(data.size() > 0, "train_jigsaw: empty dataset");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);

  const archspec::ArchSpec arch =
      archspec::is_preset(cfg.backbone) ? archspec::preset(cfg.backbone) : archspec::load_arch(cfg.backbone);

  Rng rng(cfg.seed);
  const uint64_t backbone_seed = rng.next_u64();
  const uint64_t head_seed = rng.next_u64();

  model::Backbone backbone = model::Backbone::build(arch, cfg.batch_norm, backbone_seed);
  const puzzle::GridSpec grid(cfg.grid_side);
  model::JigsawHead head(backbone.out_channels(), grid.num_cells(), grid.center_index(), head_seed,
                         cfg.head_hidden);

  // fails fast if the crop/grid/backbone combination cannot feed every cell
  const archspec::CellAssignment assignment =
      archspec::cell_assignment(backbone.profile(), cfg.crop, cfg.crop, grid);

  SgdState sgd;
  int64_t start_step = 0;
  if (!cfg.resume.empty()) {
    Checkpoint ckpt = load_checkpoint(cfg.resume, backbone.fingerprint());
    restore_backbone(ckpt, backbone);
    for (auto& nt : head.params()) {
      const Tensor* src = ckpt.find(nt.name);
      check(src != nullptr, strfmt("checkpoint: missing tensor '%s'", nt.name.c_str()));
      *nt.tensor = *src;
    }
    for (const auto& [name, vel] : ckpt.opt_state) sgd.velocity()[name] = vel;
    rng.restore_state(ckpt.rng_state);
    start_step = ckpt.step;
    check(start_step <= cfg.steps, "train_jigsaw: resume checkpoint is beyond the configured steps");
  }

  // decode the whole corpus once; per-crop conversion happens on the fly
  std::vector<dataio::ImageU8> images;
  images.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i) images.push_back(dataio::read_png(data.image_file(i)));

  JigsawTrainResult result;
  result.metrics_csv = cfg.out_dir / "metrics.csv";
  std::ofstream csv(result.metrics_csv);
  if (!csv) fail(strfmt("train_jigsaw: cannot write '%s'", result.metrics_csv.string().c_str()));
  csv << "step,lr,loss,patch_acc\n";

  auto save_at = [&](int64_t step) {
    Checkpoint ckpt = snapshot(backbone, &head, nullptr, sgd, step, rng.save_state());
    ckpt.meta.emplace_back("kind", "jigsaw");
    ckpt.meta.emplace_back("arch", arch.canonical_text());
    ckpt.meta.emplace_back("batch_norm", cfg.batch_norm ? "1" : "0");
    ckpt.meta.emplace_back("grid", std::to_string(cfg.grid_side));
    ckpt.meta.emplace_back("head_hidden", std::to_string(cfg.head_hidden));
    const fs::path file = cfg.out_dir / strfmt("param-at-%lld.ckpt", static_cast<long long>(step));
    save_checkpoint(ckpt, file);
    result.checkpoints[step] = file;
  };

  std::set<int64_t> wanted(cfg.checkpoint_steps.begin(), cfg.checkpoint_steps.end());
  wanted.insert(cfg.steps);  // final state is always kept
  if (wanted.count(start_step) && start_step == 0 && cfg.resume.empty()) save_at(0);

  const int cells = grid.num_cells();
  Tensor batch({cfg.batch_size, 3, cfg.crop, cfg.crop});
  std::vector<int> labels(static_cast<size_t>(cfg.batch_size) * cells);

  for (int64_t step = start_step; step < cfg.steps; ++step) {
    // assemble the batch: crop, standardize, shuffle into a puzzle
    for (int b = 0; b < cfg.batch_size; ++b) {
      const size_t idx = static_cast<size_t>(rng.uniform_int(data.size()));
      dataio::Crop crop = dataio::sample_training_crop(images[idx], nullptr, cfg.augment, rng);
      dataio::standardize(crop.image, stats);
      puzzle::Permutation perm = puzzle::sample_permutation(rng, grid);
      puzzle::PuzzleSample sample = puzzle::assemble(puzzle::divide(crop.image, grid), perm, grid);
      check(sample.image.dim(1) == cfg.crop && sample.image.dim(2) == cfg.crop,
            "train_jigsaw: crop size must be divisible by the grid side");
      std::copy(sample.image.data(), sample.image.data() + sample.image.numel(),
                batch.data() + static_cast<int64_t>(b) * sample.image.numel());
      for (int p = 0; p < cells; ++p) labels[static_cast<size_t>(b * cells + p)] = sample.labels[static_cast<size_t>(p)];
    }

    backbone.zero_grad();
    head.zero_grad();
    Tensor features = backbone.forward(batch, true);
    Tensor cell_feats = model::pool_cells(features, assignment);
    Tensor logits = head.forward(cell_feats);

    Tensor grad_logits;
    int64_t correct = 0;
    const double loss = jigsaw_loss(logits, labels, &grad_logits, &correct);
    if (!std::isfinite(loss))
      fail(strfmt("train_jigsaw: non-finite loss %g at step %lld; lower the learning rate", loss,
                  static_cast<long long>(step + 1)));

    Tensor grad_cells = head.backward(grad_logits);
    Tensor grad_features = model::pool_cells_backward(grad_cells, assignment, features.shape());
    backbone.backward(grad_features);

    const double lr = lr_at(cfg.optim, step);
    auto bparams = backbone.params();
    auto bgrads = backbone.grads();
    auto hparams = head.params();
    auto hgrads = head.grads();
    bparams.insert(bparams.end(), hparams.begin(), hparams.end());
    bgrads.insert(bgrads.end(), hgrads.begin(), hgrads.end());
    sgd.step(bparams, bgrads, lr, cfg.optim.momentum);

    StepMetrics m;
    m.step = step + 1;
    m.lr = lr;
    m.loss = loss;
    m.patch_acc = static_cast<double>(correct) / static_cast<double>(cfg.batch_size * cells);
    result.metrics.push_back(m);
    csv << format_metrics_row(m) << "\n";

    if (wanted.count(step + 1)) save_at(step + 1);
  }
  if (cfg.steps == 0 && !result.checkpoints.count(0)) save_at(0);
  csv.flush();
  return result;
}

}  // namespace patchforge::train
