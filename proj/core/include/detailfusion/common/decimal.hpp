#pragma once

#include <string>

namespace dfusion {

// Formats `value` with exactly `places` decimals, rounding half away from zero
// on the shortest round-trip decimal representation of the double. This makes
// 82.855 print as "82.86" even though the nearest double is slightly below.
std::string format_fixed(double value, int places);

}  // namespace dfusion
