#pragma once

#include <string>
#include <vector>

#include "somnus/run/config.hpp"

namespace somnus::run {

std::vector<std::string> command_names();

// Executes one named subcommand against the configuration. Commands write
// their outputs under cfg.out_dir() and fail with missing_dependency when an
// upstream artifact is absent.
void run_command(RunConfig& cfg, const std::string& command);

}  // namespace somnus::run
