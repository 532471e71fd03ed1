#pragma once

#include <iosfwd>

namespace cvg {

// Exit codes of the command-line entry point.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitMissingPrerequisite = 4,
  kExitIncompatibleCheckpoint = 5,
};

// Runs one subcommand: make-data, featnet, train, sample, eval, psd,
// memreport.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cvg
