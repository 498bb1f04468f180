#pragma once

#include "motionlab/error.hpp"

#include <iosfwd>

namespace motionlab::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitData = 4;  // I/O, schema, mismatched shapes

int exit_code_for(ErrorCode code);

/// `motionlab {synth|train|eval|predict|ablate} [flags]`. Reports go to the
/// files named by the flags, progress to `err`, summaries to `out`.
int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace motionlab::cli
