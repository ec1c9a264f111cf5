#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rockres::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

/// Runs one command. `args` excludes the program name. Output that makes up
/// the command's result goes to `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rockres::cli
