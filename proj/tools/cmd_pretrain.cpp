#include <cstdio>
#include <memory>

#include "commands.hpp"
#include "patchforge/train.hpp"

namespace patchforge::cli {

namespace {

struct PretrainArgs {
  std::string config_file;
  std::string out_override;
};

void run_pretrain(const PretrainArgs& args) {
  KeyValueConfig cfg = KeyValueConfig::load(args.config_file);

  train::JigsawTrainConfig tc = train::jigsaw_config_from(cfg);
  const std::string data_dir = cfg.get_string("data", "");
  std::filesystem::path manifest, stats_file;
  if (!data_dir.empty()) {
    manifest = std::filesystem::path(data_dir) / "train.tsv";
    stats_file = std::filesystem::path(data_dir) / "stats.txt";
  } else {
    manifest = cfg.get_string("train_manifest");
    if (cfg.has("stats")) stats_file = cfg.get_string("stats");
  }
  const std::string cfg_out = cfg.get_string("out", "");
  tc.out_dir = !args.out_override.empty() ? args.out_override : cfg_out;
  check(!tc.out_dir.empty(), "pretrain: set `out` in the config or pass --out");
  cfg.require_all_read();

  const dataio::DatasetManifest data = dataio::load_manifest(manifest);
  const dataio::ChannelStats stats = (!stats_file.empty() && std::filesystem::exists(stats_file))
                                         ? dataio::read_stats(stats_file)
                                         : dataio::compute_corpus_stats(data);

  std::filesystem::create_directories(tc.out_dir);
  cfg.write_resolved(tc.out_dir / "resolved-config.txt");

  const auto result = train::train_jigsaw(tc, data, stats);
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    std::printf("pretrain: %lld steps, final loss %.4f, final patch accuracy %.4f\n",
                static_cast<long long>(last.step), last.loss, last.patch_acc);
  } else {
    std::printf("pretrain: 0 steps (initial checkpoint only)\n");
  }
  for (const auto& [step, path] : result.checkpoints)
    std::printf("  checkpoint: %s\n", path.string().c_str());
  std::printf("  metrics: %s\n", result.metrics_csv.string().c_str());
}

}  // namespace

void register_pretrain(CLI::App& app) {
  auto args = std::make_shared<PretrainArgs>();
  CLI::App* cmd = app.add_subcommand("pretrain", "jigsaw-puzzle self-supervised pretraining");
  cmd->add_option("--config", args->config_file, "flat key-value config file")->required();
  cmd->add_option("--out", args->out_override, "output directory (overrides the config's `out`)");
  cmd->callback([args] { run_pretrain(*args); });
}

}  // namespace patchforge::cli
