#pragma once

// Forward models of the optical spin-access experiments: pulsed spin pumping,
// spin relaxation recovery, coherent population trapping and PLE scans.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sivcav/constants.hpp"
#include "sivcav/error.hpp"
#include "sivcav/lindblad.hpp"
#include "sivcav/parallel.hpp"
#include "sivcav/siv_levels.hpp"
#include "sivcav/spectrum.hpp"

namespace sivcav::dynamics {

/// Spin relaxation rate (Hz, per direction) that equilibrates two sublevels on timescale t1.
inline double t1_rate(double t1)
{
    if (!std::isfinite(t1)) return 0.0;
    return 1.0 / (4.0 * constants::pi * t1);
}

// ---------------------------------------------------------------------------
// Spin pumping

/// Four-level spin system: ground |down>,|up>, excited |down'>,|up'>.
/// One laser sits near transition 2 (down <-> down'); the same laser drives
/// transition 3 (up <-> up') detuned by `preserving_separation`, and the
/// flipping transitions 1 and 4 with relative Rabi `flip_drive_ratio`.
struct SpinPumpingParams {
    double t1 = 630e-9;                  // s
    double eta = 0.0;                    // flipping / preserving decay ratio
    double optical_linewidth = 160e6;    // Hz, total excited-state decay
    double rabi = 0.0;                   // Hz, on transition 2
    double laser_detuning = 0.0;         // Hz, from transition 2
    double preserving_separation = 0.0;  // Hz, frequency(3) - frequency(2)
    double f_s_ground = 6.8e9;           // Hz
    double flip_drive_ratio = 0.0;

    void validate() const
    {
        require(t1 > 0.0, "spin.t1 must be > 0");
        require(std::isfinite(eta) && eta >= 0.0, "spin.eta must be >= 0");
        require(std::isfinite(optical_linewidth) && optical_linewidth > 0.0, "spin.optical_linewidth must be > 0");
        require(std::isfinite(rabi) && rabi >= 0.0, "spin.rabi must be >= 0");
        require(std::isfinite(laser_detuning), "spin.laser_detuning must be finite");
        require(std::isfinite(preserving_separation), "spin.preserving_separation must be finite");
        require(std::isfinite(f_s_ground) && f_s_ground >= 0.0, "spin.f_s_ground must be >= 0");
        require(std::isfinite(flip_drive_ratio) && flip_drive_ratio >= 0.0, "spin.flip_drive_ratio must be >= 0");
    }
};

namespace levels4 {
inline constexpr std::size_t down = 0, up = 1, down_e = 2, up_e = 3;
}

inline LevelSystem spin_pumping_system(const SpinPumpingParams& p)
{
    p.validate();
    using namespace levels4;
    const double f_g = p.f_s_ground;
    const double f_e = f_g + p.preserving_separation;
    const double nu0 = 406.7e12;
    std::vector<Level> levels{{"down", 0.0}, {"up", f_g}, {"down_e", nu0}, {"up_e", nu0 + f_e}};

    // Transition frequencies relative to transition 2, for a single laser.
    const double laser = p.laser_detuning;
    std::vector<Drive> drives{{down, down_e, p.rabi, laser}, {up, up_e, p.rabi, laser - p.preserving_separation}};
    if (p.flip_drive_ratio > 0.0) {
        const double flip = p.rabi * p.flip_drive_ratio;
        drives.push_back({up, down_e, flip, laser + f_g});           // transition 4
        drives.push_back({down, up_e, flip, laser - f_e});           // transition 1
    }

    const double keep = p.optical_linewidth / (1.0 + p.eta);
    const double flip = p.optical_linewidth * p.eta / (1.0 + p.eta);
    std::vector<Decay> decays{{down_e, down, keep, true}, {down_e, up, flip, true},
                              {up_e, up, keep, true},     {up_e, down, flip, true}};
    const double relax = t1_rate(p.t1);
    if (relax > 0.0) {
        decays.push_back({up, down, relax, false});
        decays.push_back({down, up, relax, false});
    }
    return LevelSystem(std::move(levels), std::move(drives), std::move(decays));
}

/// Equal ground-sublevel populations, empty excited states.
inline DensityState thermal_spin_state() { return DensityState::diagonal({0.5, 0.5, 0.0, 0.0}); }

struct PulseSequence {
    double pulse_length = 1e-6;   // s
    std::size_t n_pulses = 1;
    double gap = 0.0;             // s, dark time between pulses
    std::size_t samples = 1001;   // per pulse, including both ends

    void validate() const
    {
        require(std::isfinite(pulse_length) && pulse_length > 0.0, "pulse.length must be > 0");
        require(n_pulses >= 1, "pulse.count must be >= 1");
        require(std::isfinite(gap) && gap >= 0.0, "pulse.gap must be >= 0");
        require(samples >= 2, "pulse.samples must be >= 2");
    }
};

/// Fluorescence trace of each laser pulse (time relative to pulse start),
/// starting from the thermal state. Between pulses the drive is off.
inline std::vector<Trace> simulate_spin_pumping(const SpinPumpingParams& params, const PulseSequence& seq,
                                                IntegratorOptions options = {})
{
    seq.validate();
    const LevelSystem lit = spin_pumping_system(params);
    const LevelSystem dark = lit.with_drive_scale(0.0);
    const std::vector<double> times = linspace(0.0, seq.pulse_length, seq.samples);

    std::vector<Trace> out;
    Matrix rho = thermal_spin_state().matrix();
    for (std::size_t k = 0; k < seq.n_pulses; ++k) {
        Trace tr = evolve(lit, DensityState(rho), times, options);
        rho = *tr.final_state;
        out.push_back(std::move(tr));
        if (k + 1 < seq.n_pulses && seq.gap > 0.0) rho = *evolve(dark, DensityState(rho), {seq.gap}, options).final_state;
    }
    return out;
}

struct PumpingFigures {
    double peak = 0.0;
    double peak_time = 0.0;
    double steady = 0.0;
};

/// Peak signal and late-pulse plateau (mean over the last 10% of samples).
/// Throws when the signal still drifts by more than 1% of the peak there.
inline PumpingFigures pumping_figures(const Trace& trace)
{
    require(trace.signal.size() >= 10, "pumping trace needs at least 10 samples");
    const auto it = std::max_element(trace.signal.begin(), trace.signal.end());
    PumpingFigures f;
    f.peak = *it;
    f.peak_time = trace.times[static_cast<std::size_t>(it - trace.signal.begin())];
    if (!(f.peak > 0.0)) throw DomainError("pumping trace has no fluorescence");

    const std::size_t n = trace.signal.size();
    const std::size_t window = std::max<std::size_t>(2, n / 10);
    const std::size_t first = n - window;
    double sum = 0.0;
    for (std::size_t i = first; i < n; ++i) sum += trace.signal[i];
    f.steady = sum / static_cast<double>(window);
    // Compare the two halves of the window so sample noise does not fake a drift.
    const std::size_t mid = first + window / 2;
    double early = 0.0, late = 0.0;
    for (std::size_t i = first; i < mid; ++i) early += trace.signal[i];
    for (std::size_t i = mid; i < n; ++i) late += trace.signal[i];
    early /= static_cast<double>(mid - first);
    late /= static_cast<double>(n - mid);
    if (std::abs(late - early) > 0.01 * f.peak)
        throw DomainError("no fluorescence plateau: pulse too short for the pumping timescale");
    return f;
}

/// F = 1 - S_steady / (2 S_peak) for a pulse started from the thermal state.
inline double extract_initialization_fidelity(const Trace& trace)
{
    const PumpingFigures f = pumping_figures(trace);
    return 1.0 - 0.5 * f.steady / f.peak;
}

struct RecoveryCurve {
    std::vector<double> tau;
    std::vector<double> peak;
};

/// Peak fluorescence of a probe pulse after a dark time tau that follows a
/// pumping pulse of `pulse_length`. Only the first `peak_window` of the probe
/// pulse is simulated (the peak occurs within a few optical lifetimes).
inline RecoveryCurve simulate_t1_recovery(const SpinPumpingParams& params, const std::vector<double>& taus,
                                          double pulse_length, double peak_window, std::size_t samples = 401,
                                          IntegratorOptions options = {})
{
    require(!taus.empty(), "t1 recovery needs at least one tau");
    for (double t : taus) require(std::isfinite(t) && t >= 0.0, "tau values must be >= 0");
    require(pulse_length > 0.0, "pulse length must be > 0");
    require(peak_window > 0.0 && peak_window <= pulse_length, "peak window must lie in (0, pulse length]");

    const LevelSystem lit = spin_pumping_system(params);
    const LevelSystem dark = lit.with_drive_scale(0.0);
    const Matrix pumped = *evolve(lit, thermal_spin_state(), {pulse_length}, options).final_state;
    const std::vector<double> probe_times = linspace(0.0, peak_window, samples);

    RecoveryCurve curve;
    curve.tau = taus;
    curve.peak = parallel_map<double>(taus.size(), [&](std::size_t i) {
        Matrix rho = pumped;
        if (taus[i] > 0.0) rho = *evolve(dark, DensityState(rho), {taus[i]}, options).final_state;
        const Trace tr = evolve(lit, DensityState(rho), probe_times, options);
        return *std::max_element(tr.signal.begin(), tr.signal.end());
    });
    return curve;
}

// ---------------------------------------------------------------------------
// Coherent population trapping

/// Lambda system: ground |down> (probed) and |up> (pumped) split by f_s,
/// one excited level. The pump drives up <-> excited at `pump_detuning`, the
/// probe drives down <-> excited with the scanned detuning.
struct CptParams {
    double f_s = 6.8e9;               // Hz
    double optical_linewidth = 160e6; // Hz
    double branching = 0.5;           // fraction of excited decay into |down>
    double pump_rabi = 1e6;           // Hz
    double probe_rabi = 1e6;          // Hz
    double ground_dephasing = 0.0;    // Hz
    double t1 = std::numeric_limits<double>::infinity(); // s
    double pump_detuning = 0.0;       // Hz

    void validate() const
    {
        require(std::isfinite(f_s) && f_s >= 0.0, "cpt.f_s must be >= 0");
        require(std::isfinite(optical_linewidth) && optical_linewidth > 0.0, "cpt.optical_linewidth must be > 0");
        require(branching > 0.0 && branching < 1.0, "cpt.branching must lie in (0, 1)");
        require(std::isfinite(pump_rabi) && pump_rabi >= 0.0, "cpt.pump_rabi must be >= 0");
        require(std::isfinite(probe_rabi) && probe_rabi >= 0.0, "cpt.probe_rabi must be >= 0");
        require(std::isfinite(ground_dephasing) && ground_dephasing >= 0.0, "cpt.ground_dephasing must be >= 0");
        require(t1 > 0.0, "cpt.t1 must be > 0");
        require(std::isfinite(pump_detuning), "cpt.pump_detuning must be finite");
    }
};

/// Ground dephasing rate (Hz) giving an inhomogeneous coherence time t2_star = 1 / (pi rate).
inline double dephasing_from_t2_star(double t2_star) { return 1.0 / (constants::pi * t2_star); }

inline LevelSystem cpt_system(const CptParams& p, double probe_detuning)
{
    p.validate();
    std::vector<Level> levels{{"down", 0.0}, {"up", p.f_s}, {"excited", 406.7e12}};
    std::vector<Drive> drives{{1, 2, p.pump_rabi, p.pump_detuning}, {0, 2, p.probe_rabi, probe_detuning}};
    std::vector<Decay> decays{{2, 0, p.optical_linewidth * p.branching, true},
                              {2, 1, p.optical_linewidth * (1.0 - p.branching), true}};
    const double relax = t1_rate(p.t1);
    if (relax > 0.0) {
        decays.push_back({1, 0, relax, false});
        decays.push_back({0, 1, relax, false});
    }
    std::vector<Dephasing> dephasings;
    if (p.ground_dephasing > 0.0) dephasings.push_back({0, 1, p.ground_dephasing});
    return LevelSystem(std::move(levels), std::move(drives), std::move(decays), std::move(dephasings));
}

/// Steady-state fluorescence versus probe detuning. With a resonant pump the
/// abscissa equals the two-photon (Raman) detuning.
inline Spectrum simulate_cpt_scan(const CptParams& params, const std::vector<double>& probe_detunings)
{
    params.validate();
    require(!probe_detunings.empty(), "cpt scan needs at least one detuning");
    Spectrum s;
    s.unit = "Hz";
    s.x = probe_detunings;
    s.y = parallel_map<double>(probe_detunings.size(), [&](std::size_t i) {
        const LevelSystem sys = cpt_system(params, probe_detunings[i]);
        return fluorescence(sys, steady_state(sys).matrix());
    });
    return s;
}

// ---------------------------------------------------------------------------
// PLE scans

struct Emitter {
    siv::TransitionTable table;
    double linewidth = 160e6; // Hz, FWHM of each sublevel line
    double amplitude = 1.0;
    double saturation = 0.0;  // s = 2 Omega^2 / Gamma^2 of the scanning laser
};

/// Resonant pump on one sublevel transition of one emitter, plus a scanned probe.
struct PumpProbe {
    std::size_t emitter = 0;
    char parent = 'C';
    int label = 2;          // pumped transition, 2 or 3
    double pump_rabi = 50e6; // Hz
    double probe_rabi = 50e6; // Hz, scaled by sqrt(weight / max weight) per transition
    double eta = -1.0;       // flipping/preserving decay ratio; < 0 takes dipole weights
    double t1 = 630e-9;      // s

    void validate(std::size_t n_emitters) const
    {
        require(emitter < n_emitters, "pump.emitter index out of range");
        require(parent >= 'A' && parent <= 'D', "pump.parent must be one of A-D");
        require(label == 2 || label == 3, "pump.transition must be a spin-preserving transition (2 or 3)");
        require(std::isfinite(pump_rabi) && pump_rabi >= 0.0, "pump.pump_rabi must be >= 0");
        require(std::isfinite(probe_rabi) && probe_rabi >= 0.0, "pump.probe_rabi must be >= 0");
        require(t1 > 0.0, "pump.t1 must be > 0");
    }
};

inline double single_laser_response(const Emitter& e, double nu)
{
    double s = 0.0;
    for (const auto& t : e.table.sublevel) {
        const double x = 2.0 * (nu - t.frequency) / e.linewidth;
        s += t.dipole_weight / (1.0 + e.saturation + x * x);
    }
    return e.amplitude * s;
}

/// Four-level model of one optical line with the pump on `label` and the
/// probe at `probe_freq` on the remaining transitions. Probe transitions
/// out of the pumped ground sublevel are left out; that sublevel is
/// depleted and keeping them would close a two-laser loop.
inline LevelSystem pump_probe_system(const Emitter& e, const PumpProbe& pp, double probe_freq)
{
    using namespace levels4;
    const auto& t1 = e.table.find(pp.parent, 1);
    const auto& t2 = e.table.find(pp.parent, 2);
    const auto& t3 = e.table.find(pp.parent, 3);
    const auto& t4 = e.table.find(pp.parent, 4);
    const std::array<const siv::SublevelTransition*, 4> tr{&t1, &t2, &t3, &t4};
    // label -> (ground, excited) level indices
    const std::array<std::array<std::size_t, 2>, 4> ends{{{down, up_e}, {down, down_e}, {up, up_e}, {up, down_e}}};

    const double f_g = t2.frequency - t4.frequency;
    std::vector<Level> levels{{"down", 0.0}, {"up", f_g}, {"down_e", t2.frequency}, {"up_e", t1.frequency}};

    double w_max = 0.0;
    for (const auto* t : tr) w_max = std::max(w_max, t->dipole_weight);
    const auto& pumped = *tr[static_cast<std::size_t>(pp.label - 1)];
    const std::size_t pumped_ground = ends[static_cast<std::size_t>(pp.label - 1)][0];

    std::vector<Drive> drives{{pumped_ground, ends[static_cast<std::size_t>(pp.label - 1)][1], pp.pump_rabi, 0.0}};
    for (int l = 1; l <= 4; ++l) {
        if (l == pp.label) continue;
        const auto& g_e = ends[static_cast<std::size_t>(l - 1)];
        if (g_e[0] == pumped_ground) continue;
        const auto* t = tr[static_cast<std::size_t>(l - 1)];
        const double rabi = pp.probe_rabi * std::sqrt(t->dipole_weight / w_max);
        drives.push_back({g_e[0], g_e[1], rabi, probe_freq - t->frequency});
    }
    (void)pumped;

    std::vector<Decay> decays;
    for (const std::size_t ex : {down_e, up_e}) {
        // Decay channels from this excited sublevel: preserving and flipping.
        const bool is_down = ex == down_e;
        const double w_keep = is_down ? t2.dipole_weight : t3.dipole_weight;
        const double w_flip = is_down ? t4.dipole_weight : t1.dipole_weight;
        const double ratio = pp.eta >= 0.0 ? pp.eta : (w_keep > 0.0 ? w_flip / w_keep : 0.0);
        const double keep = e.linewidth / (1.0 + ratio);
        const double flip = e.linewidth * ratio / (1.0 + ratio);
        decays.push_back({ex, is_down ? down : up, keep, true});
        decays.push_back({ex, is_down ? up : down, flip, true});
    }
    const double relax = t1_rate(pp.t1);
    if (relax > 0.0) {
        decays.push_back({up, down, relax, false});
        decays.push_back({down, up, relax, false});
    }
    return LevelSystem(std::move(levels), std::move(drives), std::move(decays));
}

/// Single-laser mode: dipole-weighted (optionally saturated) Lorentzians of
/// every emitter. Pump-probe mode: the pumped emitter's response is its
/// steady-state excited population under pump and probe, the others keep
/// their single-laser response to the probe.
inline Spectrum simulate_ple_scan(const std::vector<Emitter>& emitters, const std::vector<double>& laser_freqs,
                                  const std::optional<PumpProbe>& pump = std::nullopt)
{
    require(!laser_freqs.empty(), "ple scan needs at least one laser frequency");
    for (const auto& e : emitters) {
        require(std::isfinite(e.linewidth) && e.linewidth > 0.0, "emitter linewidth must be > 0");
        require(std::isfinite(e.saturation) && e.saturation >= 0.0, "emitter saturation must be >= 0");
    }
    if (pump) pump->validate(emitters.size());

    Spectrum s;
    s.unit = "Hz";
    s.x = laser_freqs;
    s.y = parallel_map<double>(laser_freqs.size(), [&](std::size_t i) {
        const double nu = laser_freqs[i];
        double total = 0.0;
        for (std::size_t k = 0; k < emitters.size(); ++k) {
            if (pump && pump->emitter == k) {
                const LevelSystem sys = pump_probe_system(emitters[k], *pump, nu);
                const Matrix rho = steady_state(sys).matrix();
                total += emitters[k].amplitude * (rho(levels4::down_e, levels4::down_e).real() +
                                                  rho(levels4::up_e, levels4::up_e).real());
            } else {
                total += single_laser_response(emitters[k], nu);
            }
        }
        return total;
    });
    return s;
}

} // namespace sivcav::dynamics
