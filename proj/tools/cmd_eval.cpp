#include <cstdio>
#include <fstream>
#include <memory>

#include "commands.hpp"
#include "patchforge/transfer.hpp"

namespace patchforge::cli {

namespace {

struct EvalArgs {
  std::string task;
  std::string ckpt_file;
  std::string data;
  std::string out_csv;
  int64_t seed = 1;
};

dataio::DatasetManifest manifest_for(const std::string& data, const char* split) {
  const std::filesystem::path p(data);
  if (std::filesystem::is_directory(p)) return dataio::load_manifest(p / split);
  return dataio::load_manifest(p);
}

dataio::ChannelStats stats_for(const std::string& data, const dataio::DatasetManifest& manifest) {
  const std::filesystem::path p(data);
  const std::filesystem::path candidate =
      std::filesystem::is_directory(p) ? p / "stats.txt" : p.parent_path() / "stats.txt";
  if (std::filesystem::exists(candidate)) return dataio::read_stats(candidate);
  return dataio::compute_corpus_stats(manifest);
}

void run_eval(const EvalArgs& args) {
  check(args.task == "puzzle" || args.task == "seg", "eval: --task must be 'puzzle' or 'seg'");
  const train::Checkpoint ckpt = train::load_checkpoint(args.ckpt_file);
  model::Backbone backbone = train::backbone_from_checkpoint(ckpt);

  const dataio::DatasetManifest data = manifest_for(args.data, "val.tsv");
  const dataio::ChannelStats stats = stats_for(args.data, data);

  std::ofstream csv;
  if (!args.out_csv.empty()) {
    csv.open(args.out_csv);
    if (!csv) fail(strfmt("eval: cannot write '%s'", args.out_csv.c_str()));
    KeyValueConfig resolved;
    resolved.set("task", args.task);
    resolved.set("ckpt", args.ckpt_file);
    resolved.set("data", args.data);
    resolved.set("seed", std::to_string(args.seed));
    resolved.write_resolved(args.out_csv + ".resolved-config.txt");
  }

  if (args.task == "puzzle") {
    model::JigsawHead head = train::jigsaw_head_from_checkpoint(ckpt, backbone);
    const puzzle::GridSpec grid(std::stoi(ckpt.meta_value("grid")));
    const auto result = transfer::puzzle_accuracy(backbone, head, data, grid,
                                                  static_cast<uint64_t>(args.seed), stats);
    if (csv.is_open()) {
      csv << "image,accuracy\n";
      for (const auto& [path, acc] : result.per_image) csv << path << "," << strfmt("%.17g", acc) << "\n";
      csv << strfmt("overall,%.17g\n", result.accuracy);
    }
    std::printf("eval puzzle: %lld/%lld cells correct, accuracy %.4f\n",
                static_cast<long long>(result.correct_cells), static_cast<long long>(result.total_cells),
                result.accuracy);
  } else {
    model::SegHead head = train::seg_head_from_checkpoint(ckpt, backbone);
    const int classes = head.num_classes();
    const auto report = transfer::evaluate_seg(backbone, head, data, stats, classes);
    if (csv.is_open()) csv << report.to_csv();
    std::printf("eval seg: mean IoU %.4f over %d classes\n", report.mean_iou, classes);
  }
}

}  // namespace

void register_eval(CLI::App& app) {
  auto args = std::make_shared<EvalArgs>();
  CLI::App* cmd = app.add_subcommand("eval", "evaluate a checkpoint (puzzle accuracy or mIoU)");
  cmd->add_option("--task", args->task, "puzzle | seg")->required();
  cmd->add_option("--ckpt", args->ckpt_file, "checkpoint file")->required();
  cmd->add_option("--data", args->data, "corpus directory or manifest file")->required();
  cmd->add_option("--out", args->out_csv, "CSV report path");
  cmd->add_option("--seed", args->seed, "puzzle sampling seed");
  cmd->callback([args] { run_eval(*args); });
}

}  // namespace patchforge::cli
