#pragma once

#include <string>

namespace metagnn {

/// 17 significant digits; parses back to the identical double.
std::string format_exact(double value);

/// Three significant digits in compact scientific form: 3.82e-1, 2.42e+0.
std::string format_sci3(double value);

}  // namespace metagnn
