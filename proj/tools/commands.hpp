#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sca::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3 };

// Parses and runs one subcommand; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace sca::cli
