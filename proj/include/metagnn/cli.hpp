#pragma once

#include <iosfwd>

namespace metagnn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;  // validation, contract or failed check
inline constexpr int kExitDivergence = 2;
inline constexpr int kExitIo = 3;

/// Entry point of the `metagnn` command. Never throws; returns the exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace metagnn
