#pragma once

#include <numbers>

namespace sivcav::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// CODATA 2018
inline constexpr double bohr_magneton = 9.2740100783e-24; // J/T
inline constexpr double planck = 6.62607015e-34;          // J s
inline constexpr double speed_of_light = 299792458.0;     // m/s

/// Bohr magneton in frequency units, about 13.996 GHz/T.
inline constexpr double bohr_magneton_hz_per_t = bohr_magneton / planck;

} // namespace sivcav::constants
