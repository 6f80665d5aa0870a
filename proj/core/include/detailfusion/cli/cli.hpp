#pragma once

#include <iosfwd>

namespace dfusion {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `dfusion` tool. Outputs land under $DFUSION_OUTPUT_ROOT
// (default ./runs) unless paths are given explicitly.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dfusion
