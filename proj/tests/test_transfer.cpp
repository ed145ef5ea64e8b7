#include <doctest.h>

#include <fstream>

#include "patchforge/transfer.hpp"
#include "test_util.hpp"

using namespace patchforge;
using namespace patchforge::transfer;

namespace {

dataio::SyntheticCorpus make_corpus(const std::filesystem::path& dir, int images, int val, uint64_t seed) {
  dataio::SyntheticSpec spec;
  spec.num_images = images;
  spec.image_size = 96;
  spec.num_classes = 4;
  spec.texture_seed = seed;
  return dataio::generate_synthetic_corpus(spec, dir, val);
}

train::Checkpoint quick_pretrain(const std::filesystem::path& dir, const dataio::DatasetManifest& data,
                                 const dataio::ChannelStats& stats, int64_t steps) {
  train::JigsawTrainConfig cfg;
  cfg.backbone = "tinyfcn";
  cfg.batch_norm = true;
  cfg.grid_side = 3;
  cfg.crop = 96;
  cfg.batch_size = 2;
  cfg.steps = steps;
  cfg.optim.base_lr = 0.02;
  cfg.augment.mirror_prob = 0.0;
  cfg.augment.scale_low = cfg.augment.scale_high = 1.0;
  cfg.augment.crop_h = cfg.augment.crop_w = 96;
  cfg.seed = 77;
  cfg.out_dir = dir;
  const auto result = train::train_jigsaw(cfg, data, stats);
  return train::load_checkpoint(result.checkpoints.at(steps));
}

}  // namespace

TEST_CASE("transfer plan parsing and the frozen-random guard") {
  auto cfg = KeyValueConfig::from_string(
      "block1.init = checkpoint\nblock1.trainable = false\nblock3.init = checkpoint\n");
  const TransferPlan plan = parse_transfer_plan(cfg, 5);
  CHECK(plan.blocks[0].init == InitSource::checkpoint);
  CHECK_FALSE(plan.blocks[0].trainable);
  CHECK(plan.blocks[1].init == InitSource::random);
  CHECK(plan.blocks[1].trainable);
  CHECK(plan.blocks[2].init == InitSource::checkpoint);

  auto frozen_random = KeyValueConfig::from_string("block2.trainable = false\n");
  CHECK_THROWS_WITH_AS((void)parse_transfer_plan(frozen_random, 5), doctest::Contains("allow_frozen_random"),
                       Error);
  auto control = KeyValueConfig::from_string("block2.trainable = false\nallow_frozen_random = true\n");
  CHECK_NOTHROW((void)parse_transfer_plan(control, 5));

  auto unknown = KeyValueConfig::from_string("block7.init = random\n");
  CHECK_THROWS_WITH_AS((void)parse_transfer_plan(unknown, 5), doctest::Contains("unknown block"), Error);

  auto bad_value = KeyValueConfig::from_string("block1.init = maybe\n");
  CHECK_THROWS_AS((void)parse_transfer_plan(bad_value, 5), Error);
}

TEST_CASE("build_transfer copies and freezes by block") {
  testutil::TempDir tmp("bt");
  make_corpus(tmp / "data", 3, 0, 51);
  const auto data = dataio::load_manifest(tmp.path() / "data" / "train.tsv");
  const auto stats = dataio::read_stats(tmp.path() / "data" / "stats.txt");
  const train::Checkpoint ckpt = quick_pretrain(tmp / "pre", data, stats, 2);

  model::Backbone bb = model::Backbone::build(archspec::preset("tinyfcn"), true, 99);

  SUBCASE("all random keeps the fresh initialization") {
    auto cfg = KeyValueConfig::from_string("");
    const TransferPlan plan = parse_transfer_plan(cfg, 5);
    const TransferSetup setup = build_transfer(plan, ckpt, bb);
    CHECK(setup.copied == 0);
    CHECK(setup.frozen.empty());
  }

  SUBCASE("blocks 1-2 frozen from checkpoint") {
    auto cfg = KeyValueConfig::from_string(
        "block1.init = checkpoint\nblock1.trainable = false\n"
        "block2.init = checkpoint\nblock2.trainable = false\n"
        "block3.init = checkpoint\nblock4.init = checkpoint\nblock5.init = checkpoint\n");
    const TransferPlan plan = parse_transfer_plan(cfg, 5);
    const TransferSetup setup = build_transfer(plan, ckpt, bb);
    CHECK(setup.copied > 0);
    CHECK_FALSE(setup.frozen.empty());
    for (const auto& name : setup.frozen) {
      const int block = bb.block_of(name);
      CHECK((block == 0 || block == 1));
    }
    // copied tensors equal the checkpoint values
    for (auto& nt : bb.params()) {
      const Tensor* src = ckpt.find(nt.name);
      REQUIRE(src != nullptr);
      CHECK(*nt.tensor == *src);
    }
  }

  SUBCASE("fingerprint mismatch is rejected") {
    model::Backbone other = model::Backbone::build(archspec::preset("tinyfcn"), false, 1);
    auto cfg = KeyValueConfig::from_string("block1.init = checkpoint\n");
    const TransferPlan plan = parse_transfer_plan(cfg, 5);
    CHECK_THROWS_WITH_AS((void)build_transfer(plan, ckpt, other), doctest::Contains("fingerprint"), Error);
  }
}

TEST_CASE("miou hand-counted cases") {
  Tensor truth({2, 2});
  truth.fill(0.0);
  Tensor pred({2, 2});
  pred[0] = 0;
  pred[1] = 0;
  pred[2] = 1;
  pred[3] = 1;
  const MIoUReport r = miou(pred, truth, 2);
  CHECK(r.per_class_iou[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.per_class_iou[1] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.mean_iou == doctest::Approx(0.25).epsilon(1e-15));

  const MIoUReport perfect = miou(truth, truth, 2);
  CHECK(perfect.mean_iou == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::isnan(perfect.per_class_iou[1]));  // class 1 absent everywhere

  // absent classes are excluded from the mean, not scored 0 or 1
  const MIoUReport with_absent = miou(pred, truth, 3);
  CHECK(with_absent.mean_iou == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("miou is symmetric and bounded") {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor a({6, 6}), b({6, 6});
    for (int64_t i = 0; i < 36; ++i) {
      a[i] = static_cast<double>(rng.uniform_int(4));
      b[i] = static_cast<double>(rng.uniform_int(4));
    }
    const MIoUReport ab = miou(a, b, 4);
    const MIoUReport ba = miou(b, a, 4);
    for (size_t c = 0; c < 4; ++c) {
      if (ab.unions[c] == 0) continue;
      CHECK(ab.per_class_iou[c] == ba.per_class_iou[c]);
      CHECK(ab.per_class_iou[c] >= 0.0);
      CHECK(ab.per_class_iou[c] <= 1.0);
    }
  }
  Tensor bad({2, 2}), small({1, 2});
  CHECK_THROWS_WITH_AS((void)miou(bad, small, 2), doctest::Contains("shape"), Error);
}

TEST_CASE("miou respects the ignore id") {
  Tensor truth({2, 2});
  truth[0] = 0;
  truth[1] = 255;
  truth[2] = 1;
  truth[3] = 255;
  Tensor pred({2, 2});
  pred[0] = 0;
  pred[1] = 1;
  pred[2] = 1;
  pred[3] = 0;
  const MIoUReport r = miou(pred, truth, 2, 255);
  CHECK(r.mean_iou == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("fine-tuning keeps frozen blocks bit-identical") {
  testutil::TempDir tmp("freeze");
  make_corpus(tmp / "data", 6, 2, 52);
  const auto train_data = dataio::load_manifest(tmp.path() / "data" / "train.tsv");
  const auto val_data = dataio::load_manifest(tmp.path() / "data" / "val.tsv");
  const auto stats = dataio::read_stats(tmp.path() / "data" / "stats.txt");
  const train::Checkpoint ckpt = quick_pretrain(tmp / "pre", train_data, stats, 2);

  model::Backbone bb = model::Backbone::build(archspec::preset("tinyfcn"), true, 7);
  auto plan_cfg = KeyValueConfig::from_string(
      "block1.init = checkpoint\nblock1.trainable = false\n"
      "block2.init = checkpoint\nblock2.trainable = false\n"
      "block3.init = checkpoint\nblock4.init = checkpoint\nblock5.init = checkpoint\n");
  const TransferPlan plan = parse_transfer_plan(plan_cfg, 5);
  const TransferSetup setup = build_transfer(plan, ckpt, bb);
  model::SegHead head(bb.out_channels(), 4, 32, 8);

  // record every tensor before training
  std::map<std::string, Tensor> before;
  for (auto& nt : bb.params()) before[nt.name] = *nt.tensor;
  for (auto& nt : bb.state()) before[nt.name] = *nt.tensor;

  SegTrainConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 2;
  cfg.crop = 96;
  cfg.num_classes = 4;
  cfg.optim.base_lr = 0.05;
  cfg.augment.mirror_prob = 0.0;
  cfg.augment.scale_low = cfg.augment.scale_high = 1.0;
  cfg.augment.crop_h = cfg.augment.crop_w = 96;
  cfg.seed = 3;
  cfg.out_dir = tmp / "seg";
  const SegTrainResult result = finetune_seg(bb, head, setup.frozen, cfg, train_data, val_data, stats);
  CHECK(result.metrics.size() == 4);

  int frozen_checked = 0, unfrozen_changed = 0, unfrozen_total = 0;
  auto audit = [&](std::vector<nn::NamedTensor> list) {
    for (auto& nt : list) {
      if (setup.frozen.count(nt.name)) {
        CHECK(*nt.tensor == before[nt.name]);
        ++frozen_checked;
      } else {
        ++unfrozen_total;
        if (!(*nt.tensor == before[nt.name])) ++unfrozen_changed;
      }
    }
  };
  audit(bb.params());
  audit(bb.state());
  CHECK(frozen_checked > 0);
  CHECK(unfrozen_changed == unfrozen_total);  // everything trainable moved
}

TEST_CASE("zero-step fine-tune equals direct evaluation") {
  testutil::TempDir tmp("zerostep");
  make_corpus(tmp / "data", 5, 2, 53);
  const auto train_data = dataio::load_manifest(tmp.path() / "data" / "train.tsv");
  const auto val_data = dataio::load_manifest(tmp.path() / "data" / "val.tsv");
  const auto stats = dataio::read_stats(tmp.path() / "data" / "stats.txt");

  model::Backbone bb = model::Backbone::build(archspec::preset("tinyfcn"), true, 11);
  model::SegHead head(bb.out_channels(), 4, 32, 12);
  const MIoUReport direct = evaluate_seg(bb, head, val_data, stats, 4);

  SegTrainConfig cfg;
  cfg.steps = 0;
  cfg.batch_size = 1;
  cfg.crop = 96;
  cfg.num_classes = 4;
  cfg.optim.base_lr = 0.05;
  cfg.augment.crop_h = cfg.augment.crop_w = 96;
  cfg.out_dir = tmp / "seg";
  const SegTrainResult r = finetune_seg(bb, head, {}, cfg, train_data, val_data, stats);
  CHECK(r.final_miou.mean_iou == doctest::Approx(direct.mean_iou).epsilon(1e-12));
}

TEST_CASE("label-independent models sit at chance accuracy") {
  testutil::TempDir tmp("chance");
  make_corpus(tmp / "data", 36, 36, 54);  // 36 val images = 324 cells
  const auto val_data = dataio::load_manifest(tmp.path() / "data" / "val.tsv");
  const auto stats = dataio::read_stats(tmp.path() / "data" / "stats.txt");

  model::Backbone bb = model::Backbone::build(archspec::preset("tinyfcn"), true, 13);
  model::JigsawHead head(bb.out_channels(), 9, 4, 14);
  for (auto& nt : head.params()) nt.tensor->fill(0.0);  // all-zero logits, argmax -> 0

  const PuzzleEvalResult r = puzzle_accuracy(bb, head, val_data, puzzle::GridSpec(3), 5, stats);
  CHECK(r.total_cells == 324);
  CHECK(std::fabs(r.accuracy - 1.0 / 9.0) < 0.04);  // wider gate than the acceptance run (fewer cells)
}

TEST_CASE("degenerate single-cell grid scores a perfect accuracy") {
  testutil::TempDir tmp("g1");
  make_corpus(tmp / "data", 4, 4, 55);
  const auto val_data = dataio::load_manifest(tmp.path() / "data" / "val.tsv");
  const auto stats = dataio::read_stats(tmp.path() / "data" / "stats.txt");
  model::Backbone bb = model::Backbone::build(archspec::preset("tinyfcn"), true, 15);
  model::JigsawHead head(bb.out_channels(), 1, 0, 16);
  const PuzzleEvalResult r = puzzle_accuracy(bb, head, val_data, puzzle::GridSpec(1), 6, stats);
  CHECK(r.accuracy == 1.0);
}
