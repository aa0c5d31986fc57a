#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace sivcav {

/// Shortest round-trip decimal representation; "nan"/"inf" for non-finite values.
inline std::string format_double(double value)
{
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buffer[64];
    const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    if (ec != std::errc{}) return std::to_string(value);
    return std::string(buffer, end);
}

} // namespace sivcav
