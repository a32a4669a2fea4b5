#pragma once

#include <string>
#include <vector>

namespace xlkd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Runs one command line (args[0] is the program name). Diagnostics go to
// stderr; the return value is the process exit status.
int run(const std::vector<std::string>& args);

}  // namespace xlkd::cli
