#pragma once

// Cavity-QED parameter algebra in the bad-cavity regime. All rates and
// linewidths are FWHM in ordinary frequency (Hz).

#include <cmath>

#include "sivcav/error.hpp"

namespace sivcav::cqed {

struct CavityParams {
    double g = 0.0;     // single-photon Rabi frequency
    double kappa = 0.0; // cavity linewidth
    double gamma0 = 0.0; // bare emitter linewidth
    double detuning = 0.0;
    double resonance_freq = 0.0;

    void validate() const
    {
        require(std::isfinite(kappa) && kappa > 0.0, "cavity.kappa must be > 0");
        require(std::isfinite(gamma0) && gamma0 > 0.0, "cavity.gamma0 must be > 0");
        require(std::isfinite(g) && g >= 0.0, "cavity.g must be >= 0");
        require(std::isfinite(detuning), "cavity.detuning must be finite");
    }

    double cooperativity() const { return 4.0 * g * g / (kappa * gamma0); }
    double purcell_linewidth() const;
};

struct SaturationModel {
    double gamma0 = 0.0;
    double p_sat = 0.0;

    void validate() const
    {
        require(std::isfinite(gamma0) && gamma0 > 0.0, "saturation.gamma0 must be > 0");
        require(std::isfinite(p_sat) && p_sat > 0.0, "saturation.p_sat must be > 0");
    }
};

inline double lorentzian(double nu, double center, double fwhm, double amplitude, double offset)
{
    if (!(fwhm > 0.0)) throw InvalidParameter("lorentzian: fwhm must be > 0");
    const double x = 2.0 * (nu - center) / fwhm;
    return offset + amplitude / (1.0 + x * x);
}

inline double q_factor(double resonance_freq, double fwhm)
{
    if (!(resonance_freq > 0.0) || !(fwhm > 0.0)) throw InvalidParameter("q_factor: inputs must be > 0");
    return resonance_freq / fwhm;
}

/// Cavity filter factor kappa^2 / (kappa^2 + 4 detuning^2).
inline double filter_factor(double detuning, double kappa)
{
    if (!(kappa > 0.0)) throw InvalidParameter("filter_factor: kappa must be > 0");
    const double x = 2.0 * detuning / kappa;
    return 1.0 / (1.0 + x * x);
}

inline double purcell_broadened_linewidth(double cooperativity, double detuning, double kappa, double gamma0)
{
    if (!(gamma0 > 0.0)) throw InvalidParameter("purcell_broadened_linewidth: gamma0 must be > 0");
    if (!(cooperativity >= 0.0)) throw InvalidParameter("purcell_broadened_linewidth: cooperativity must be >= 0");
    return gamma0 * (1.0 + cooperativity * filter_factor(detuning, kappa));
}

inline double CavityParams::purcell_linewidth() const
{
    return purcell_broadened_linewidth(cooperativity(), detuning, kappa, gamma0);
}

struct CooperativityEstimate {
    double value = 0.0;
    bool below_bare_linewidth = false; // gamma_on < gamma0: negative estimate
};

inline CooperativityEstimate cooperativity_from_linewidths(double gamma_on, double gamma0, double detuning, double kappa)
{
    if (!(gamma0 > 0.0) || !(gamma_on > 0.0)) throw InvalidParameter("cooperativity_from_linewidths: linewidths must be > 0");
    const double c = (gamma_on / gamma0 - 1.0) / filter_factor(detuning, kappa);
    return {c, gamma_on < gamma0};
}

inline double g_from_cooperativity(double cooperativity, double kappa, double gamma0)
{
    if (!(cooperativity >= 0.0)) throw DomainError("g_from_cooperativity: cooperativity must be >= 0");
    if (!(kappa > 0.0) || !(gamma0 > 0.0)) throw InvalidParameter("g_from_cooperativity: kappa and gamma0 must be > 0");
    return std::sqrt(cooperativity * kappa * gamma0 / 4.0);
}

inline double power_broadened_linewidth(const SaturationModel& model, double power)
{
    model.validate();
    if (!(power >= 0.0)) throw DomainError("power_broadened_linewidth: power must be >= 0");
    return model.gamma0 * std::sqrt(1.0 + power / model.p_sat);
}

} // namespace sivcav::cqed
