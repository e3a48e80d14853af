#pragma once

#include <iosfwd>

namespace agpi::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

// Runs the agpi command line; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace agpi::cli
