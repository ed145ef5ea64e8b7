#include <cstdio>
#include <exception>

#include "commands.hpp"
#include "patchforge/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"patchforge: jigsaw-puzzle self-supervised pretraining for FCNs"};
  app.require_subcommand(1);

  patchforge::cli::register_rf(app);
  patchforge::cli::register_synth(app);
  patchforge::cli::register_pretrain(app);
  patchforge::cli::register_transfer(app);
  patchforge::cli::register_eval(app);
  patchforge::cli::register_report(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const patchforge::Error& e) {
    std::fprintf(stderr, "patchforge: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "patchforge: unexpected error: %s\n", e.what());
    return 2;
  }
  return 0;
}
