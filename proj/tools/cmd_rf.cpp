#include <cstdio>
#include <memory>

#include "commands.hpp"
#include "patchforge/archspec.hpp"

namespace patchforge::cli {

namespace {

struct RfArgs {
  std::string arch_file;
  std::string preset;
  std::vector<int64_t> input;  // H W
  int grid = 0;
  bool oracle = false;
};

void run_rf(const RfArgs& args) {
  using namespace patchforge::archspec;
  check(!args.arch_file.empty() || !args.preset.empty(), "rf: pass --arch FILE or --preset NAME");
  const ArchSpec arch = !args.preset.empty() ? preset(args.preset) : load_arch(args.arch_file);
  const RFProfile profile = compute_rf_profile(arch);

  const std::string label = !args.preset.empty() ? args.preset : args.arch_file;
  std::printf("# %s: %zu layers, %d blocks\n", label.c_str(), arch.layers.size(), arch.num_blocks());
  std::printf("rf S0 P0\n");
  std::printf("%lld %lld %lld\n", static_cast<long long>(profile.rf),
              static_cast<long long>(profile.effective_stride),
              static_cast<long long>(profile.effective_padding));

  if (!args.input.empty()) {
    check(args.input.size() == 2, "rf: --input takes H W");
    const int64_t h = args.input[0], w = args.input[1];
    std::printf("input %lldx%lld -> feature map %lldx%lld\n", static_cast<long long>(h),
                static_cast<long long>(w), static_cast<long long>(chain_output_size(arch, h)),
                static_cast<long long>(chain_output_size(arch, w)));
    if (args.grid > 0) {
      const puzzle::GridSpec grid(args.grid);
      const CellAssignment asg = cell_assignment(profile, h, w, grid);
      std::printf("feature pixels per cell (grid %dx%d):\n", args.grid, args.grid);
      for (int r = 0; r < args.grid; ++r) {
        for (int c = 0; c < args.grid; ++c)
          std::printf("%6zu", asg.cell_pixels[static_cast<size_t>(r * args.grid + c)].size());
        std::printf("\n");
      }
    }
  } else if (args.grid > 0) {
    fail("rf: --grid requires --input H W");
  }

  if (args.oracle) {
    // grow the input until the central output pixel's RF is interior
    int64_t input = args.input.empty() ? profile.rf : std::max(profile.rf, args.input[0]);
    BruteForceResult bf;
    for (int attempt = 0;; ++attempt) {
      check(attempt < 16, "rf: could not find an input size large enough for the oracle");
      try {
        bf = brute_force_rf(arch, input);
        break;
      } catch (const Error&) {
        input *= 2;
      }
    }
    bool centers_ok = true;
    for (int64_t i = 0; i < bf.out_size && centers_ok; ++i)
      centers_ok = rf_center(profile, i, 0).first == bf.centers[static_cast<size_t>(i)];
    std::printf("oracle (input %lld): rf=%lld %s, centers %s over %lld output pixels\n",
                static_cast<long long>(input), static_cast<long long>(bf.rf),
                bf.rf == profile.rf ? "MATCH" : "MISMATCH", centers_ok ? "MATCH" : "MISMATCH",
                static_cast<long long>(bf.out_size));
    check(bf.rf == profile.rf && centers_ok, "rf: oracle disagrees with the closed-form profile");
  }
}

}  // namespace

void register_rf(CLI::App& app) {
  auto args = std::make_shared<RfArgs>();
  CLI::App* cmd = app.add_subcommand("rf", "receptive-field geometry of an architecture");
  cmd->add_option("--arch", args->arch_file, "architecture file");
  cmd->add_option("--preset", args->preset, "built-in preset name");
  cmd->add_option("--input", args->input, "input size H W")->expected(2);
  cmd->add_option("--grid", args->grid, "puzzle grid side for per-cell counts");
  cmd->add_flag("--oracle", args->oracle, "cross-check with the dependency-interval oracle");
  cmd->callback([args] { run_rf(*args); });
}

}  // namespace patchforge::cli
