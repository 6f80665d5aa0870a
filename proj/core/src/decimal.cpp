#include "detailfusion/common/decimal.hpp"

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

#include "detailfusion/common/errors.hpp"

namespace dfusion {

std::string format_fixed(double value, int places) {
  if (!std::isfinite(value)) throw NumericError("cannot format non-finite value");
  if (places < 0) throw UsageError("negative decimal places");

  // 12 significant digits absorb binary representation error (82.855 is
  // stored as 82.85499999...), then the decimal string is rounded half away
  // from zero.
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::scientific, 11);
  if (res.ec != std::errc{}) throw NumericError("to_chars failed");
  std::string sci(buf, res.ptr);
  const auto e = sci.find('e');
  const int exponent = std::stoi(sci.substr(e + 1));
  std::string mantissa = sci.substr(0, e);
  const bool neg = mantissa.front() == '-';
  if (neg) mantissa.erase(mantissa.begin());
  mantissa.erase(mantissa.find('.'), 1);  // 12 digits, point after the first
  std::string text;
  if (exponent >= 0) {
    const auto int_len = static_cast<std::size_t>(exponent) + 1;
    if (mantissa.size() < int_len) mantissa.append(int_len - mantissa.size(), '0');
    text = mantissa.substr(0, int_len) + "." + mantissa.substr(int_len);
  } else {
    text = "0." + std::string(static_cast<std::size_t>(-exponent - 1), '0') + mantissa;
  }
  if (neg) text.insert(text.begin(), '-');

  bool negative = false;
  if (!text.empty() && text.front() == '-') {
    negative = true;
    text.erase(text.begin());
  }
  auto dot = text.find('.');
  std::string int_part = dot == std::string::npos ? text : text.substr(0, dot);
  std::string frac_part = dot == std::string::npos ? std::string{} : text.substr(dot + 1);

  const auto keep = static_cast<std::size_t>(places);
  bool round_up = frac_part.size() > keep && frac_part[keep] >= '5';
  frac_part.resize(keep, '0');

  std::string digits = int_part + frac_part;
  if (round_up) {
    int i = static_cast<int>(digits.size()) - 1;
    while (i >= 0) {
      if (digits[i] == '9') {
        digits[i] = '0';
        --i;
      } else {
        ++digits[i];
        break;
      }
    }
    if (i < 0) digits.insert(digits.begin(), '1');
  }
  std::string out = digits.substr(0, digits.size() - keep);
  if (keep > 0) out += "." + digits.substr(digits.size() - keep);
  bool all_zero = out.find_first_not_of("0.") == std::string::npos;
  if (negative && !all_zero) out.insert(out.begin(), '-');
  return out;
}

}  // namespace dfusion
