#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace wsseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs the command line in args (args[0] is the program name). Normal output
/// goes to out, diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::FILE* out = stdout, std::FILE* err = stderr);

}  // namespace wsseg::cli
