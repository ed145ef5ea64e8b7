#include <cstdio>
#include <memory>

#include "commands.hpp"
#include "patchforge/transfer.hpp"

namespace patchforge::cli {

namespace {

struct TransferArgs {
  std::string plan_file;
  std::string ckpt_file;
  std::string data_dir;
  std::string out_dir;
};

void run_transfer(const TransferArgs& args) {
  KeyValueConfig cfg = KeyValueConfig::load(args.plan_file);

  const train::Checkpoint ckpt = train::load_checkpoint(args.ckpt_file);
  check(ckpt.meta_value("kind") == "jigsaw",
        "transfer: checkpoint is not a jigsaw pretraining checkpoint");
  const archspec::ArchSpec arch = archspec::parse_arch(ckpt.meta_value("arch"), "checkpoint");
  const bool batch_norm = ckpt.meta_value("batch_norm") == "1";

  transfer::SegTrainConfig sc = transfer::seg_config_from(cfg);
  const std::string cfg_out = cfg.get_string("out", "transfer-out");
  sc.out_dir = !args.out_dir.empty() ? std::filesystem::path(args.out_dir) : std::filesystem::path(cfg_out);
  const transfer::TransferPlan plan = transfer::parse_transfer_plan(cfg, std::max(1, arch.num_blocks()));
  cfg.require_all_read();

  Rng seed_rng(sc.seed);
  model::Backbone backbone = model::Backbone::build(arch, batch_norm, seed_rng.next_u64());
  const transfer::TransferSetup setup = transfer::build_transfer(plan, ckpt, backbone);
  model::SegHead head(backbone.out_channels(), sc.num_classes,
                      static_cast<int>(backbone.profile().effective_stride), seed_rng.next_u64());

  const std::filesystem::path data(args.data_dir);
  const auto train_data = dataio::load_manifest(data / "train.tsv");
  const auto val_data = dataio::load_manifest(data / "val.tsv");
  const dataio::ChannelStats stats = std::filesystem::exists(data / "stats.txt")
                                         ? dataio::read_stats(data / "stats.txt")
                                         : dataio::compute_corpus_stats(train_data);

  std::filesystem::create_directories(sc.out_dir);
  cfg.write_resolved(sc.out_dir / "resolved-config.txt");

  std::printf("transfer: %d tensors from checkpoint, %zu frozen\n", setup.copied, setup.frozen.size());
  const auto result = transfer::finetune_seg(backbone, head, setup.frozen, sc, train_data, val_data, stats);
  std::printf("transfer: final val mIoU %.4f\n", result.final_miou.mean_iou);
  std::printf("  metrics: %s\n", result.metrics_csv.string().c_str());
  std::printf("  model: %s\n", result.checkpoint.string().c_str());
}

}  // namespace

void register_transfer(CLI::App& app) {
  auto args = std::make_shared<TransferArgs>();
  CLI::App* cmd = app.add_subcommand("transfer", "block-wise transfer to segmentation fine-tuning");
  cmd->add_option("--plan", args->plan_file, "transfer plan + training settings (flat key-value)")->required();
  cmd->add_option("--ckpt", args->ckpt_file, "pretraining checkpoint")->required();
  cmd->add_option("--data", args->data_dir, "corpus directory (train.tsv/val.tsv/stats.txt)")->required();
  cmd->add_option("--out", args->out_dir, "output directory");
  cmd->callback([args] { run_transfer(*args); });
}

}  // namespace patchforge::cli
