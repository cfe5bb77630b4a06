#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace desimpl {

/// Exit status contract of the command-line tool.
/// Command-line mistakes count as validation errors.
enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitIo = 3 };

/// Entry point behind the `desimpl` binary. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace desimpl
