#pragma once

#include <iosfwd>

namespace fiqa {

// Exit codes of the fiqa binary.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 2,
  kExitDataError = 3,
  kExitTrainingDiverged = 4,
  kExitInternalError = 5,
};

// Entry point of the `fiqa` binary: train | predict | evaluate | ablate |
// audit | synth. Failures print one line `error: CATEGORY: message` to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fiqa
