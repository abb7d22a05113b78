#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tensegrity::cli {

/// Runs the command line `args` (program name excluded). Returns the process
/// exit code: 0 on success, the ErrorKind value for toolkit errors, the CLI
/// parser's code for usage errors, 1 otherwise.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tensegrity::cli
