#pragma once

#include <iosfwd>

namespace ecm {

/// Exit status of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,  // I/O failures, numeric breakdown, failed checks
  kExitUsage = 2,    // bad flags or configuration values
};

/// Entry point of the `ecmnet` tool, with its streams injectable for tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ecm
