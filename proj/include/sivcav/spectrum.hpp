#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "sivcav/error.hpp"
#include "sivcav/format.hpp"

namespace sivcav {

/// Sampled 1-D trace. `unit` tags the abscissa ("Hz", "s", "W", ...).
struct Spectrum {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> sigma; // empty, or one positive value per point
    std::string unit;

    std::size_t size() const { return x.size(); }

    void validate() const
    {
        require(x.size() == y.size(), "spectrum: x and y lengths differ");
        require(sigma.empty() || sigma.size() == x.size(), "spectrum: sigma length differs from x");
        for (std::size_t i = 0; i < x.size(); ++i) {
            require(std::isfinite(x[i]) && std::isfinite(y[i]), "spectrum: non-finite sample");
            if (!sigma.empty()) require(std::isfinite(sigma[i]) && sigma[i] > 0.0, "spectrum: sigma must be > 0");
        }
        if (x.size() >= 2) {
            const bool increasing = x[1] > x[0];
            for (std::size_t i = 1; i < x.size(); ++i)
                require(increasing ? x[i] > x[i - 1] : x[i] < x[i - 1], "spectrum: x must be strictly monotone");
        }
    }
};

inline std::vector<double> linspace(double start, double stop, std::size_t points)
{
    require(points >= 1, "linspace: at least one point required");
    std::vector<double> out(points);
    if (points == 1) {
        out[0] = start;
        return out;
    }
    const double step = (stop - start) / static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) out[i] = start + step * static_cast<double>(i);
    out.back() = stop;
    return out;
}

/// CSV with header `x,value[,<extra>...]`.
inline std::string to_csv(const Spectrum& s, const std::vector<std::string>& extra_names = {},
                          const std::vector<std::vector<double>>& extra_columns = {})
{
    std::ostringstream out;
    out << "x,value";
    for (const auto& n : extra_names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
        out << format_double(s.x[i]) << ',' << format_double(s.y[i]);
        for (const auto& col : extra_columns) out << ',' << format_double(col[i]);
        out << '\n';
    }
    return out.str();
}

} // namespace sivcav
