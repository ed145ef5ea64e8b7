#include "patchforge/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace patchforge::transfer {

void TransferPlan::validate() const {
  check(!blocks.empty(), "TransferPlan: no blocks");
  for (size_t b = 0; b < blocks.size(); ++b) {
    if (!blocks[b].trainable && blocks[b].init == InitSource::random && !allow_frozen_random)
      fail(strfmt("TransferPlan: block%zu freezes randomly initialized weights; set "
                  "allow_frozen_random = true if this is an intentional control run",
                  b + 1));
  }
}

TransferPlan parse_transfer_plan(KeyValueConfig& cfg, int num_blocks) {
  check(num_blocks >= 1, "parse_transfer_plan: need at least one block");
  TransferPlan plan;
  plan.blocks.resize(static_cast<size_t>(num_blocks));
  for (int b = 0; b < num_blocks; ++b) {
    const std::string prefix = strfmt("block%d.", b + 1);
    const std::string init = cfg.get_string(prefix + "init", "random");
    if (init == "random")
      plan.blocks[static_cast<size_t>(b)].init = InitSource::random;
    else if (init == "checkpoint")
      plan.blocks[static_cast<size_t>(b)].init = InitSource::checkpoint;
    else
      fail(strfmt("transfer plan: %sinit must be 'random' or 'checkpoint', got '%s'", prefix.c_str(),
                  init.c_str()));
    plan.blocks[static_cast<size_t>(b)].trainable = cfg.get_bool(prefix + "trainable", true);
  }
  plan.allow_frozen_random = cfg.get_bool("allow_frozen_random", false);
  // reject plans that reference blocks beyond the architecture
  for (const std::string& key : cfg.unread_keys()) {
    if (key.rfind("block", 0) == 0)
      fail(strfmt("transfer plan: key '%s' references an unknown block (architecture has %d)", key.c_str(),
                  num_blocks));
  }
  plan.validate();
  return plan;
}

TransferSetup build_transfer(const TransferPlan& plan, const train::Checkpoint& ckpt,
                             model::Backbone& backbone) {
  plan.validate();
  const int nblocks = std::max(1, backbone.arch().num_blocks());
  check(static_cast<int>(plan.blocks.size()) == nblocks,
        strfmt("build_transfer: plan has %zu blocks, backbone has %d", plan.blocks.size(), nblocks));
  check(ckpt.arch_fingerprint == backbone.fingerprint(),
        "build_transfer: checkpoint fingerprint does not match the backbone");

  TransferSetup setup;
  auto visit = [&](std::vector<nn::NamedTensor> list) {
    for (auto& nt : list) {
      const int block = backbone.block_of(nt.name);
      check(block >= 0, strfmt("build_transfer: tensor '%s' has no block", nt.name.c_str()));
      const BlockPlan& bp = plan.blocks[static_cast<size_t>(block)];
      if (bp.init == InitSource::checkpoint) {
        const Tensor* src = ckpt.find(nt.name);
        check(src != nullptr, strfmt("build_transfer: checkpoint lacks tensor '%s'", nt.name.c_str()));
        check(src->same_shape(*nt.tensor),
              strfmt("build_transfer: checkpoint tensor '%s' has wrong shape", nt.name.c_str()));
        *nt.tensor = *src;
        ++setup.copied;
      }
      if (!bp.trainable) setup.frozen.insert(nt.name);
    }
  };
  visit(backbone.params());
  visit(backbone.state());
  for (int b = 0; b < nblocks; ++b)
    backbone.set_block_frozen(b, !plan.blocks[static_cast<size_t>(b)].trainable);
  return setup;
}

MIoUReport miou(const Tensor& pred, const Tensor& truth, int num_classes, int ignore_id) {
  check(pred.same_shape(truth), "miou: prediction/truth shape mismatch");
  check(num_classes >= 1, "miou: need at least one class");
  std::vector<MIoUReport> one(1);
  MIoUReport& r = one[0];
  r.intersection.assign(static_cast<size_t>(num_classes), 0);
  r.unions.assign(static_cast<size_t>(num_classes), 0);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const int p = static_cast<int>(pred[i]);
    const int t = static_cast<int>(truth[i]);
    if (ignore_id >= 0 && t == ignore_id) continue;
    check(p >= 0 && p < num_classes && t >= 0 && t < num_classes,
          strfmt("miou: class id out of range (pred %d, truth %d, classes %d)", p, t, num_classes));
    if (p == t) {
      ++r.intersection[static_cast<size_t>(p)];
      ++r.unions[static_cast<size_t>(p)];
    } else {
      ++r.unions[static_cast<size_t>(p)];
      ++r.unions[static_cast<size_t>(t)];
    }
  }
  return accumulate_miou(one);
}

MIoUReport accumulate_miou(const std::vector<MIoUReport>& parts) {
  check(!parts.empty(), "accumulate_miou: nothing to accumulate");
  const size_t k = parts.front().unions.size();
  MIoUReport out;
  out.intersection.assign(k, 0);
  out.unions.assign(k, 0);
  for (const auto& p : parts) {
    check(p.unions.size() == k, "accumulate_miou: class count mismatch");
    for (size_t c = 0; c < k; ++c) {
      out.intersection[c] += p.intersection[c];
      out.unions[c] += p.unions[c];
    }
  }
  out.per_class_iou.assign(k, std::nan(""));
  double sum = 0.0;
  int counted = 0;
  for (size_t c = 0; c < k; ++c) {
    if (out.unions[c] > 0) {
      out.per_class_iou[c] = static_cast<double>(out.intersection[c]) / static_cast<double>(out.unions[c]);
      sum += out.per_class_iou[c];
      ++counted;
    }
  }
  out.mean_iou = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
  return out;
}

std::string MIoUReport::to_csv() const {
  std::string s = "class,iou,intersection,union\n";
  for (size_t c = 0; c < per_class_iou.size(); ++c) {
    if (unions[c] > 0)
      s += strfmt("%zu,%.17g,%lld,%lld\n", c, per_class_iou[c], static_cast<long long>(intersection[c]),
                  static_cast<long long>(unions[c]));
    else
      s += strfmt("%zu,,%lld,%lld\n", c, static_cast<long long>(intersection[c]),
                  static_cast<long long>(unions[c]));
  }
  s += strfmt("mean,%.17g,,\n", mean_iou);
  return s;
}

void SegTrainConfig::validate() const {
  check(steps >= 0, "SegTrainConfig: steps must be >= 0");
  check(batch_size >= 1, "SegTrainConfig: batch_size must be >= 1");
  check(num_classes >= 2, "SegTrainConfig: need at least two classes");
  check(!out_dir.empty(), "SegTrainConfig: out_dir required");
  optim.validate();
}

SegTrainConfig seg_config_from(KeyValueConfig& cfg) {
  SegTrainConfig out;
  out.steps = cfg.get_int("steps", 300);
  out.batch_size = static_cast<int>(cfg.get_int("batch", 4));
  out.crop = cfg.get_int("crop", 96);
  out.num_classes = static_cast<int>(cfg.get_int("classes", 4));
  out.ignore_id = static_cast<int>(cfg.get_int("ignore_id", -1));
  out.optim.base_lr = cfg.get_double("base_lr", 0.02);
  out.optim.momentum = cfg.get_double("momentum", 0.9);
  out.optim.schedule = train::parse_schedule(cfg.get_string("schedule", ""));
  out.augment.mirror_prob = cfg.get_double("mirror_prob", 0.5);
  out.augment.scale_low = cfg.get_double("scale_low", 0.75);
  out.augment.scale_high = cfg.get_double("scale_high", 1.25);
  out.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
  out.eval_every = cfg.get_int("eval_every", 0);
  out.train_limit = cfg.get_int("train_limit", 0);
  out.augment.crop_h = out.crop;
  out.augment.crop_w = out.crop;
  return out;
}

namespace {

Tensor argmax_classes(const Tensor& scores) {
  // (N,K,H,W) -> (N,1,H,W); ties toward the smallest class index
  const int64_t n = scores.dim(0), k = scores.dim(1), h = scores.dim(2), w = scores.dim(3);
  Tensor out({n, 1, h, w});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int best = 0;
        double bv = scores.at(s, 0, y, x);
        for (int64_t c = 1; c < k; ++c) {
          const double v = scores.at(s, c, y, x);
          if (v > bv) {
            bv = v;
            best = static_cast<int>(c);
          }
        }
        out.at(s, 0, y, x) = static_cast<double>(best);
      }
  return out;
}

// center-crop an image tensor so both sides are divisible by `multiple`
Tensor crop_to_multiple(const Tensor& img, int64_t multiple) {
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int64_t ch = (h / multiple) * multiple, cw = (w / multiple) * multiple;
  check(ch > 0 && cw > 0, strfmt("image %lldx%lld smaller than the stride grid %lld",
                                 static_cast<long long>(h), static_cast<long long>(w),
                                 static_cast<long long>(multiple)));
  const int64_t top = (h - ch) / 2, left = (w - cw) / 2;
  Tensor out({c, ch, cw});
  for (int64_t ic = 0; ic < c; ++ic)
    for (int64_t y = 0; y < ch; ++y)
      for (int64_t x = 0; x < cw; ++x) out.at(ic, y, x) = img.at(ic, top + y, left + x);
  return out;
}

}  // namespace

MIoUReport evaluate_seg(model::Backbone& backbone, model::SegHead& head,
                        const dataio::DatasetManifest& data, const dataio::ChannelStats& stats,
                        int num_classes, int ignore_id) {
  check(data.size() > 0, "evaluate_seg: empty manifest");
  const int64_t stride = backbone.profile().effective_stride;
  std::vector<MIoUReport> parts;
  for (size_t i = 0; i < data.size(); ++i) {
    check(data.entries[i].has_mask(), strfmt("evaluate_seg: entry %zu has no mask", i + 1));
    Tensor img = dataio::to_double(dataio::read_png(data.image_file(i)));
    const dataio::ImageU8 mask_u8 = dataio::read_png(data.mask_file(i));
    check(mask_u8.channels == 1, strfmt("evaluate_seg: mask for entry %zu must be single-channel", i + 1));
    Tensor mask({1, mask_u8.h, mask_u8.w});
    for (int64_t p = 0; p < mask.numel(); ++p) mask[p] = static_cast<double>(mask_u8.pixels[static_cast<size_t>(p)]);
    img = crop_to_multiple(img, stride);
    mask = crop_to_multiple(mask, stride);
    dataio::standardize(img, stats);

    Tensor batch({1, 3, img.dim(1), img.dim(2)});
    std::copy(img.data(), img.data() + img.numel(), batch.data());
    Tensor scores = model::seg_forward(backbone, head, batch, false);
    Tensor pred = argmax_classes(scores);
    Tensor truth({1, 1, mask.dim(1), mask.dim(2)});
    std::copy(mask.data(), mask.data() + mask.numel(), truth.data());
    parts.push_back(miou(pred, truth, num_classes, ignore_id));
  }
  return accumulate_miou(parts);
}

SegTrainResult finetune_seg(model::Backbone& backbone, model::SegHead& head,
                            const std::set<std::string>& frozen, const SegTrainConfig& cfg,
                            const dataio::DatasetManifest& train_data,
                            const dataio::DatasetManifest& val_data, const dataio::ChannelStats& stats) {
  cfg.validate();
  dataio::DatasetManifest seg_train = train_data;
  if (cfg.train_limit > 0 && static_cast<size_t>(cfg.train_limit) < seg_train.entries.size())
    seg_train.entries.resize(static_cast<size_t>(cfg.train_limit));
  check(seg_train.size() > 0, "finetune_seg: empty training manifest");
  for (size_t i = 0; i < seg_train.size(); ++i)
    check(seg_train.entries[i].has_mask(),
          strfmt("finetune_seg: training entry %zu has no mask", i + 1));

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);

  Rng rng(cfg.seed);
  // decode once
  std::vector<dataio::ImageU8> images, masks;
  for (size_t i = 0; i < seg_train.size(); ++i) {
    images.push_back(dataio::read_png(seg_train.image_file(i)));
    masks.push_back(dataio::read_png(seg_train.mask_file(i)));
  }

  SegTrainResult result;
  result.metrics_csv = cfg.out_dir / "seg-metrics.csv";
  std::ofstream csv(result.metrics_csv);
  if (!csv) fail(strfmt("finetune_seg: cannot write '%s'", result.metrics_csv.string().c_str()));
  csv << "step,lr,loss,pixel_acc\n";
  std::ofstream miou_csv(cfg.out_dir / "seg-val-miou.csv");
  miou_csv << "step,mean_iou\n";

  train::SgdState sgd;
  Tensor batch({cfg.batch_size, 3, cfg.crop, cfg.crop});
  Tensor batch_mask({cfg.batch_size, 1, cfg.crop, cfg.crop});

  for (int64_t step = 0; step < cfg.steps; ++step) {
    for (int b = 0; b < cfg.batch_size; ++b) {
      const size_t idx = static_cast<size_t>(rng.uniform_int(seg_train.size()));
      dataio::Crop crop = dataio::sample_training_crop(images[idx], &masks[idx], cfg.augment, rng);
      dataio::standardize(crop.image, stats);
      std::copy(crop.image.data(), crop.image.data() + crop.image.numel(),
                batch.data() + static_cast<int64_t>(b) * crop.image.numel());
      const Tensor& mk = *crop.mask;
      std::copy(mk.data(), mk.data() + mk.numel(),
                batch_mask.data() + static_cast<int64_t>(b) * mk.numel());
    }

    backbone.zero_grad();
    head.zero_grad();
    Tensor scores = model::seg_forward(backbone, head, batch, true);
    Tensor grad_scores;
    int64_t correct = 0, counted = 0;
    const double loss = train::seg_cross_entropy(scores, batch_mask, cfg.ignore_id, &grad_scores, &correct,
                                                 &counted);
    if (!std::isfinite(loss))
      fail(strfmt("finetune_seg: non-finite loss at step %lld", static_cast<long long>(step + 1)));
    Tensor grad_features = head.backward(grad_scores);
    backbone.backward(grad_features);

    const double lr = train::lr_at(cfg.optim, step);
    auto params = backbone.params();
    auto grads = backbone.grads();
    auto hp = head.params();
    auto hg = head.grads();
    params.insert(params.end(), hp.begin(), hp.end());
    grads.insert(grads.end(), hg.begin(), hg.end());
    sgd.step(params, grads, lr, cfg.optim.momentum, &frozen);

    train::StepMetrics m;
    m.step = step + 1;
    m.lr = lr;
    m.loss = loss;
    m.patch_acc = static_cast<double>(correct) / static_cast<double>(std::max<int64_t>(1, counted));
    result.metrics.push_back(m);
    csv << train::format_metrics_row(m) << "\n";

    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && val_data.size() > 0) {
      const MIoUReport r = evaluate_seg(backbone, head, val_data, stats, cfg.num_classes, cfg.ignore_id);
      miou_csv << strfmt("%lld,%.17g\n", static_cast<long long>(step + 1), r.mean_iou);
    }
  }

  if (val_data.size() > 0) {
    result.final_miou = evaluate_seg(backbone, head, val_data, stats, cfg.num_classes, cfg.ignore_id);
    miou_csv << strfmt("%lld,%.17g\n", static_cast<long long>(cfg.steps), result.final_miou.mean_iou);
  }

  train::Checkpoint ckpt = train::snapshot(backbone, nullptr, &head, sgd, cfg.steps, rng.save_state());
  ckpt.meta.emplace_back("kind", "seg");
  ckpt.meta.emplace_back("arch", backbone.arch().canonical_text());
  ckpt.meta.emplace_back("batch_norm", backbone.batch_norm() ? "1" : "0");
  ckpt.meta.emplace_back("seg_classes", std::to_string(cfg.num_classes));
  result.checkpoint = cfg.out_dir / "seg-final.ckpt";
  train::save_checkpoint(ckpt, result.checkpoint);
  return result;
}

PuzzleEvalResult puzzle_accuracy(model::Backbone& backbone, model::JigsawHead& head,
                                 const dataio::DatasetManifest& data, const puzzle::GridSpec& grid,
                                 uint64_t seed, const dataio::ChannelStats& stats) {
  check(data.size() > 0, "puzzle_accuracy: empty manifest");
  Rng rng(seed);
  PuzzleEvalResult result;
  const int cells = grid.num_cells();
  std::map<std::pair<int64_t, int64_t>, archspec::CellAssignment> assignments;

  for (size_t i = 0; i < data.size(); ++i) {
    Tensor img = dataio::to_double(dataio::read_png(data.image_file(i)));
    dataio::standardize(img, stats);
    // exactly one seeded puzzle per image
    puzzle::Permutation perm = puzzle::sample_permutation(rng, grid);
    puzzle::PuzzleSample sample = puzzle::assemble(puzzle::divide(img, grid), perm, grid);

    const std::pair<int64_t, int64_t> size{sample.image.dim(1), sample.image.dim(2)};
    auto it = assignments.find(size);
    if (it == assignments.end())
      it = assignments.emplace(size, archspec::cell_assignment(backbone.profile(), size.first, size.second,
                                                               grid)).first;

    Tensor batch({1, 3, size.first, size.second});
    std::copy(sample.image.data(), sample.image.data() + sample.image.numel(), batch.data());
    Tensor features = backbone.forward(batch, false);
    Tensor cell_feats = model::pool_cells(features, it->second);
    Tensor logits = head.forward(cell_feats);

    int64_t hits = 0;
    for (int p = 0; p < cells; ++p) {
      const double* row = logits.data() + p * cells;
      int best = 0;
      for (int c = 1; c < cells; ++c)
        if (row[c] > row[best]) best = c;
      if (best == sample.labels[static_cast<size_t>(p)]) ++hits;
    }
    result.correct_cells += hits;
    result.total_cells += cells;
    result.per_image.emplace_back(data.entries[i].image_path,
                                  static_cast<double>(hits) / static_cast<double>(cells));
  }
  result.accuracy = static_cast<double>(result.correct_cells) / static_cast<double>(result.total_cells);
  return result;
}

}  // namespace patchforge::transfer
