#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cfaan {

/// Exit codes of the command-line tool.
enum ExitCode : int { exit_ok = 0, exit_invalid = 1, exit_internal = 2 };

/// Runs the `cfaan` command line on `args` (without the program name).
/// Returns exit_ok on success, exit_invalid for rejected input or a failed
/// check and exit_internal for unexpected errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfaan
