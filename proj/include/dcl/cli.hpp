#pragma once

#include <iosfwd>

namespace dcl {

// Exit codes of the `dcl` command.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,       // failed checks, other errors
  kExitBadInput = 2,      // bad magic, truncated or missing files
  kExitUnknownPreset = 3,
  kExitSchema = 4,        // config / argument schema violation
  kExitDivergence = 5,
  kExitMismatch = 6,      // checkpoint architecture does not fit the data
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dcl
