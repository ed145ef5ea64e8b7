#pragma once

#include <CLI11.hpp>

namespace patchforge::cli {

void register_rf(CLI::App& app);
void register_synth(CLI::App& app);
void register_pretrain(CLI::App& app);
void register_transfer(CLI::App& app);
void register_eval(CLI::App& app);
void register_report(CLI::App& app);

}  // namespace patchforge::cli
