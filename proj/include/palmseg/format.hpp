#pragma once

// Locale-independent number formatting for emitted files (CSV, sidecars).

#include <locale>
#include <sstream>
#include <string>

namespace palmseg {

inline std::string format_number(double v, int precision = 17) {
    std::ostringstream ss;
    ss.imbue(std::locale::classic());
    ss.precision(precision);
    ss << v;
    return ss.str();
}

} // namespace palmseg
