#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cogfuse::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Entry point behind the `cogfuse` executable. `args` excludes the program
// name. Returns 0 on success, 1 on I/O or data failures, 2 on usage errors.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cogfuse::cli
