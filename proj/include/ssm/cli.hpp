#pragma once

#include <string>
#include <vector>

namespace ssm::cli {

enum ExitCode : int { kOk = 0, kUserError = 1, kInternalError = 2 };

// Entry point of the `ssm` tool; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace ssm::cli
