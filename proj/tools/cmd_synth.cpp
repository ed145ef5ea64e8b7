#include <cstdio>
#include <memory>

#include "commands.hpp"
#include "patchforge/config.hpp"
#include "patchforge/dataio.hpp"

namespace patchforge::cli {

namespace {

struct SynthArgs {
  std::string out;
  int images = 8;
  int classes = 4;
  int64_t seed = 1;
  int64_t size = 96;
  int val = -1;
};

void run_synth(const SynthArgs& args) {
  check(!args.out.empty(), "synth: --out DIR is required");
  dataio::SyntheticSpec spec;
  spec.num_images = args.images;
  spec.num_classes = args.classes;
  spec.texture_seed = static_cast<uint64_t>(args.seed);
  spec.image_size = args.size;
  const auto corpus = dataio::generate_synthetic_corpus(spec, args.out, args.val);

  KeyValueConfig resolved;
  resolved.set("images", std::to_string(args.images));
  resolved.set("classes", std::to_string(args.classes));
  resolved.set("seed", std::to_string(args.seed));
  resolved.set("size", std::to_string(args.size));
  resolved.set("val", std::to_string(corpus.num_val));
  resolved.write_resolved(std::filesystem::path(args.out) / "resolved-config.txt");

  std::printf("synth: wrote %d train + %d val images (%d classes, %lldpx) under %s\n", corpus.num_train,
              corpus.num_val, args.classes, static_cast<long long>(args.size), args.out.c_str());
}

}  // namespace

void register_synth(CLI::App& app) {
  auto args = std::make_shared<SynthArgs>();
  CLI::App* cmd = app.add_subcommand("synth", "generate a synthetic segmentation corpus");
  cmd->add_option("--out", args->out, "output directory")->required();
  cmd->add_option("--images", args->images, "number of images");
  cmd->add_option("--classes", args->classes, "number of classes");
  cmd->add_option("--seed", args->seed, "texture seed");
  cmd->add_option("--size", args->size, "image side in pixels");
  cmd->add_option("--val", args->val, "validation image count (default: images/5)");
  cmd->callback([args] { run_synth(*args); });
}

}  // namespace patchforge::cli
