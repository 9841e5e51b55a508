#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fsdiff {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUser = 2;

// Runs one command line (args excludes the program name). Reports go to out,
// diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fsdiff
