#pragma once

// Closed-form field of uniformly magnetised cuboids (magnetic surface-charge
// model). Coordinates: z = chip normal, x = cavity TE dipole axis.

#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sivcav/constants.hpp"
#include "sivcav/error.hpp"
#include "sivcav/format.hpp"

namespace sivcav::magnetics {

using Vec3 = Eigen::Vector3d;

/// Points closer than this to a magnet surface are rejected.
inline constexpr double surface_exclusion = 1e-9; // m

struct CuboidMagnet {
    Vec3 center = Vec3::Zero();        // m
    Vec3 dimensions = Vec3::Ones();    // m, full edge lengths
    Vec3 magnetization = Vec3::Zero(); // tesla (remanence mu0 M)

    void validate() const
    {
        require(center.allFinite(), "magnet.center must be finite");
        require(dimensions.allFinite() && (dimensions.array() > 0.0).all(), "magnet.dimensions must be > 0");
        require(magnetization.allFinite(), "magnet.magnetization must be finite");
    }

    double volume() const { return dimensions.prod(); }

    /// Euclidean distance from `point` to the cuboid; 0 inside.
    double exterior_distance(const Vec3& point) const
    {
        const Vec3 local = (point - center).cwiseAbs() - 0.5 * dimensions;
        return local.cwiseMax(0.0).norm();
    }

    bool excludes(const Vec3& point) const { return exterior_distance(point) <= surface_exclusion; }
};

struct FieldSample {
    Vec3 point = Vec3::Zero();
    Vec3 b = Vec3::Zero();
    bool masked = false;
};

namespace detail {

// ln(v1 + r1) - ln(v2 + r2) for two corners sharing rho2 = u^2 + w^2.
// Negative v uses ln(v + r) = ln(rho2) - ln(r - v), so the rho2 terms cancel
// when both corners lie on the negative side.
inline double log_difference(double v1, double r1, double v2, double r2, double rho2)
{
    if (v1 >= 0.0 && v2 >= 0.0) return std::log((v1 + r1) / (v2 + r2));
    if (v1 < 0.0 && v2 < 0.0) return std::log((r2 - v2) / (r1 - v1));
    auto term = [rho2](double v, double r) { return v >= 0.0 ? std::log(v + r) : std::log(rho2) - std::log(r - v); };
    return term(v1, r1) - term(v2, r2);
}

// Integral over a rectangle u' in [u_lo,u_hi], v' in [v_lo,v_hi] at normal offset w
// of (r - r') / |r - r'|^3, returned as (u, v, normal) components.
inline Vec3 rectangle_integral(double u, double v, double w, double u_lo, double u_hi, double v_lo, double v_hi)
{
    const std::array<double, 2> us{u - u_lo, u - u_hi};
    const std::array<double, 2> vs{v - v_lo, v - v_hi};
    Vec3 g = Vec3::Zero();
    for (int i = 0; i < 2; ++i) {
        const double rho2 = us[i] * us[i] + w * w;
        const double r1 = std::sqrt(rho2 + vs[0] * vs[0]);
        const double r2 = std::sqrt(rho2 + vs[1] * vs[1]);
        const double sign = i == 0 ? 1.0 : -1.0;
        g[0] -= sign * log_difference(vs[0], r1, vs[1], r2, rho2);
    }
    for (int j = 0; j < 2; ++j) {
        const double rho2 = vs[j] * vs[j] + w * w;
        const double r1 = std::sqrt(rho2 + us[0] * us[0]);
        const double r2 = std::sqrt(rho2 + us[1] * us[1]);
        const double sign = j == 0 ? 1.0 : -1.0;
        g[1] -= sign * log_difference(us[0], r1, us[1], r2, rho2);
    }
    if (w != 0.0) {
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const double r = std::sqrt(us[i] * us[i] + vs[j] * vs[j] + w * w);
                const double sign = (i + j) % 2 == 0 ? 1.0 : -1.0;
                g[2] += sign * std::atan(us[i] * vs[j] / (w * r));
            }
    }
    return g;
}

} // namespace detail

inline Vec3 cuboid_field(const CuboidMagnet& magnet, const Vec3& point)
{
    magnet.validate();
    if (!point.allFinite()) throw InvalidParameter("cuboid_field: non-finite point");
    if (magnet.excludes(point)) throw DomainError("cuboid_field: point inside or on the surface of the magnet");

    const Vec3 p = point - magnet.center;
    const Vec3 half = 0.5 * magnet.dimensions;
    // (u, v, n) axis triples, cyclic so each face normal gets its own in-plane pair.
    constexpr std::array<std::array<int, 3>, 3> frames{{{1, 2, 0}, {2, 0, 1}, {0, 1, 2}}};

    Vec3 b = Vec3::Zero();
    for (const auto& axes : frames) {
        const int iu = axes[0], iv = axes[1], in = axes[2];
        const double charge = magnet.magnetization[in];
        if (charge == 0.0) continue;
        for (const double side : {1.0, -1.0}) {
            const double w = p[in] - side * half[in];
            const Vec3 g = detail::rectangle_integral(p[iu], p[iv], w, -half[iu], half[iu], -half[iv], half[iv]);
            const double scale = side * charge / (4.0 * constants::pi);
            b[iu] += scale * g[0];
            b[iv] += scale * g[1];
            b[in] += scale * g[2];
        }
    }
    return b;
}

inline Vec3 assembly_field(const std::vector<CuboidMagnet>& magnets, const Vec3& point)
{
    Vec3 b = Vec3::Zero();
    for (const auto& m : magnets) b += cuboid_field(m, point);
    return b;
}

/// Point-dipole field of a magnet with moment M V.
inline Vec3 dipole_field(const CuboidMagnet& magnet, const Vec3& point)
{
    const Vec3 r = point - magnet.center;
    const double d = r.norm();
    if (d == 0.0) throw DomainError("dipole_field: evaluation at the dipole");
    const Vec3 n = r / d;
    const Vec3& j = magnet.magnetization;
    return magnet.volume() / (4.0 * constants::pi * d * d * d) * (3.0 * j.dot(n) * n - j);
}

/// Signed angle between `b` and `axis` in degrees, in (-180, 180]. The sign is
/// that of the component of `b` along `normal` (default: chip normal z).
inline double field_angle(const Vec3& b, const Vec3& axis, const Vec3& normal = Vec3::UnitZ())
{
    if (b.norm() == 0.0 || axis.norm() == 0.0) throw DomainError("field_angle: zero vector");
    const Vec3 a = axis.normalized();
    const double along = a.dot(b);
    double across = a.cross(b).norm();
    if (b.dot(normal) < 0.0) across = -across;
    if (across == 0.0) across = 0.0; // no negative zero
    return std::atan2(across, along) * 180.0 / constants::pi;
}

struct GridAxis {
    double min = 0.0;
    double max = 0.0;
    std::size_t points = 1;

    double at(std::size_t i) const
    {
        if (points == 1) return min;
        return min + (max - min) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
};

struct GridSpec {
    GridAxis x, y, z;
    std::size_t size() const { return x.points * y.points * z.points; }
};

/// Samples in row-major (x, y, z) order, z fastest. Points inside or on a
/// magnet are masked with zero field.
inline std::vector<FieldSample> field_map_grid(const std::vector<CuboidMagnet>& magnets, const GridSpec& grid)
{
    if (grid.size() == 0) throw InvalidParameter("field_map_grid: empty grid");
    for (const GridAxis* a : {&grid.x, &grid.y, &grid.z})
        require(std::isfinite(a->min) && std::isfinite(a->max), "field_map_grid: non-finite grid bounds");

    std::vector<FieldSample> out;
    out.reserve(grid.size());
    for (std::size_t ix = 0; ix < grid.x.points; ++ix)
        for (std::size_t iy = 0; iy < grid.y.points; ++iy)
            for (std::size_t iz = 0; iz < grid.z.points; ++iz) {
                FieldSample s;
                s.point = Vec3(grid.x.at(ix), grid.y.at(iy), grid.z.at(iz));
                bool inside = false;
                for (const auto& m : magnets) inside = inside || m.excludes(s.point);
                if (inside)
                    s.masked = true;
                else
                    s.b = assembly_field(magnets, s.point);
                out.push_back(s);
            }
    return out;
}

inline std::string to_csv(const std::vector<FieldSample>& samples)
{
    std::ostringstream out;
    out << "x_m,y_m,z_m,bx_t,by_t,bz_t,masked\n";
    for (const auto& s : samples) {
        for (int k = 0; k < 3; ++k) out << format_double(s.point[k]) << ',';
        for (int k = 0; k < 3; ++k) out << format_double(s.b[k]) << ',';
        out << (s.masked ? 1 : 0) << '\n';
    }
    return out.str();
}

} // namespace sivcav::magnetics
