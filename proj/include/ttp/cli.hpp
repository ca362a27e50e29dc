#pragma once

#include <string>
#include <vector>

namespace ttp {

// Exit codes: 0 success (including --help), 1 usage or configuration error,
// 2 runtime failure. Failures print one JSON line {"error", "message"} to stderr.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace ttp
