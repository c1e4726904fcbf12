#include "metagnn/format.hpp"

#include <cstdio>
#include <cstdlib>

namespace metagnn {

std::string format_exact(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string format_sci3(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2e", value);
  // printf pads the exponent to two digits ("e-01"); drop the padding.
  std::string s(buf);
  const auto e = s.find('e');
  if (e == std::string::npos || e + 2 >= s.size()) return s;
  std::string mantissa = s.substr(0, e);
  const char sign = s[e + 1];
  const int exponent = std::atoi(s.c_str() + e + 2);
  return mantissa + 'e' + sign + std::to_string(exponent);
}

}  // namespace metagnn
