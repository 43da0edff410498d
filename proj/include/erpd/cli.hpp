#pragma once

#include <string>
#include <vector>

namespace erpd {

/// Entry point of the `erpd` command line tool. Subcommands: rollout,
/// train-teacher, distill, pipeline, online, eval.
/// Returns 0 on success, 1 on configuration errors, 2 on numerical divergence.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace erpd
