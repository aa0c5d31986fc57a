#pragma once

// Named experiment protocols: run a validated configuration through the
// physics modules and persist data.csv, fits.json and manifest.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sivcav/config.hpp"
#include "sivcav/cqed.hpp"
#include "sivcav/experiments.hpp"
#include "sivcav/fitting.hpp"
#include "sivcav/format.hpp"
#include "sivcav/magnetics.hpp"
#include "sivcav/siv_levels.hpp"
#include "sivcav/spectrum.hpp"

namespace sivcav::protocols {

inline constexpr const char* version = "1.0.0";

using config::Json;
namespace fs = std::filesystem;

/// A module failed while running a protocol; carries the protocol name.
class RunError : public Error {
public:
    using Error::Error;
};

struct RunManifest {
    std::string config_hash;
    std::string protocol;
    std::vector<std::string> outputs;
    std::string started;
    std::string finished;
    fs::path directory;

    Json to_json() const
    {
        return {{"config_hash", config_hash}, {"version", version},   {"protocol", protocol},
                {"outputs", outputs},         {"started", started}, {"finished", finished}};
    }
};

struct ProtocolOutput {
    std::string data_csv;
    Json fits = Json::object();
};

namespace detail {

inline std::string utc_now()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Seeded Gaussian noise, sigma_i = sqrt((relative |y_i|)^2 + absolute^2).
inline void add_noise(std::vector<double>& y, const config::Noise& noise, std::mt19937_64& rng)
{
    if (!noise.enabled()) return;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : y) {
        const double sigma = std::hypot(noise.relative * std::abs(v), noise.absolute);
        v += sigma * normal(rng);
    }
}

inline Json fit_json(const fitting::FitResult& r) { return fitting::to_json(r); }

inline Json vec_json(const Eigen::Vector3d& v) { return Json::array({v[0], v[1], v[2]}); }

inline Json table_json(const siv::TransitionTable& t, double reference)
{
    Json lines = Json::array();
    for (const auto& l : t.optical) lines.push_back({{"label", std::string(1, l.label)}, {"frequency_offset", l.frequency - reference}});
    Json subs = Json::array();
    for (const auto& s : t.sublevel)
        subs.push_back({{"label", std::string(1, s.parent) + std::to_string(s.label)},
                        {"frequency_offset", s.frequency - reference},
                        {"dipole_weight", s.dipole_weight},
                        {"spin_character", std::string(siv::to_string(s.spin_character))}});
    return {{"delta_gs", t.delta_gs},       {"delta_es", t.delta_es},         {"f_s_ground", t.f_s_ground},
            {"f_s_excited", t.f_s_excited}, {"spin_degenerate", t.spin_degenerate}, {"optical_lines", lines},
            {"transitions", subs}};
}

// Local maxima above the median, with parabolic refinement.
inline Json peaks_json(const Spectrum& s)
{
    Json out = Json::array();
    if (s.size() < 3) return out;
    std::vector<double> sorted = s.y;
    std::sort(sorted.begin(), sorted.end());
    const double base = sorted[sorted.size() / 2];
    const double top = sorted.back();
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        if (!(s.y[i] > s.y[i - 1] && s.y[i] >= s.y[i + 1])) continue;
        if (!(s.y[i] - base > 0.05 * (top - base))) continue;
        const double ym = s.y[i - 1], y0 = s.y[i], yp = s.y[i + 1];
        const double den = ym - 2.0 * y0 + yp;
        const double shift = den != 0.0 ? 0.5 * (ym - yp) / den : 0.0;
        const double step = 0.5 * (s.x[i + 1] - s.x[i - 1]);
        out.push_back({{"x", s.x[i] + shift * step}, {"value", y0}});
    }
    return out;
}

inline std::vector<dynamics::Emitter> emitters_of(const config::PleSetup& p)
{
    std::vector<dynamics::Emitter> out;
    for (const auto& e : p.emitters) out.push_back({siv::transition_table(e.model), e.linewidth, e.amplitude, e.saturation});
    return out;
}

// Location of the largest sample within `halfwidth` of `center`, parabola-refined.
inline double local_peak(const Spectrum& s, double center, double halfwidth)
{
    std::size_t best = s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
        if (std::abs(s.x[i] - center) <= halfwidth && (best == s.size() || s.y[i] > s.y[best])) best = i;
    if (best == s.size()) throw DomainError("no scan samples near the expected line");
    if (best == 0 || best + 1 == s.size()) return s.x[best];
    const double ym = s.y[best - 1], y0 = s.y[best], yp = s.y[best + 1];
    const double den = ym - 2.0 * y0 + yp;
    const double shift = den != 0.0 ? 0.5 * (ym - yp) / den : 0.0;
    return s.x[best] + shift * 0.5 * (s.x[best + 1] - s.x[best - 1]);
}

// Lorentzian-fitted centre of the line nearest `expected`, using samples within
// one linewidth of the local maximum; the raw maximum if the fit is unusable.
inline double line_center(const Spectrum& s, double expected, double linewidth)
{
    const double peak = local_peak(s, expected, 0.5 * linewidth);
    Spectrum window;
    window.unit = s.unit;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (std::abs(s.x[i] - peak) <= linewidth) {
            window.x.push_back(s.x[i]);
            window.y.push_back(s.y[i]);
        }
    if (window.size() < 8) return peak;
    const auto fit = fitting::fit_lorentzian(window);
    if (!fit.converged || fit.flagged() || std::abs(fit.value("center") - peak) > linewidth) return peak;
    return fit.value("center");
}

inline ProtocolOutput run(const config::PleSetup& p, const config::ProtocolConfig& cfg, std::mt19937_64& rng)
{
    const auto emitters = emitters_of(p);
    const std::vector<double> offsets = p.scan.values();
    std::vector<double> freqs;
    for (double o : offsets) freqs.push_back(p.reference + o);

    const Spectrum s = dynamics::simulate_ple_scan(emitters, freqs, p.pump);
    Spectrum shown{offsets, s.y, {}, "Hz"};
    add_noise(shown.y, cfg.noise, rng);

    ProtocolOutput out;
    Json tables = Json::array();
    for (const auto& e : emitters) tables.push_back(table_json(e.table, p.reference));
    out.fits["emitters"] = tables;
    out.fits["peaks"] = peaks_json(shown);

    if (!p.pump) {
        out.data_csv = to_csv(shown);
        return out;
    }
    // Reference trace without the pump, and the spin splitting read off the scan.
    const Spectrum bare = dynamics::simulate_ple_scan(emitters, freqs);
    const auto& pp = *p.pump;
    const auto& table = emitters[pp.emitter].table;
    const auto& pumped = table.find(pp.parent, pp.label);
    const auto& revealed = table.find(pp.parent, pp.label == 2 ? 4 : 1);
    const double expected = revealed.frequency - p.reference;
    const double measured = line_center(shown, expected, emitters[pp.emitter].linewidth);
    const double pumped_offset = pumped.frequency - p.reference;
    out.fits["pump"] = {{"transition", std::string(1, pp.parent) + std::to_string(pp.label)},
                        {"frequency_offset", pumped_offset},
                        {"revealed_transition", std::string(1, pp.parent) + std::to_string(revealed.label)},
                        {"revealed_frequency_offset", expected},
                        {"measured_peak_offset", measured},
                        {"measured_f_s", std::abs(measured - pumped_offset)},
                        {"f_s_ground", table.f_s_ground}};
    out.data_csv = to_csv(shown, {"probe_only"}, {bare.y});
    return out;
}

inline ProtocolOutput run(const config::SpinPumpingSetup& p, const config::ProtocolConfig& cfg, std::mt19937_64& rng)
{
    auto traces = dynamics::simulate_spin_pumping(p.spin, p.pulse);
    for (auto& t : traces) add_noise(t.signal, cfg.noise, rng);

    const Spectrum first{traces[0].times, traces[0].signal, {}, "s"};
    const dynamics::PumpingFigures fig = dynamics::pumping_figures(traces[0]);
    Spectrum tail;
    tail.unit = "s";
    for (std::size_t i = 0; i < first.size(); ++i)
        if (first.x[i] >= fig.peak_time) {
            tail.x.push_back(first.x[i]);
            tail.y.push_back(first.y[i]);
        }
    const auto fit = fitting::fit_exponential(tail, fitting::ExpKind::decay);

    ProtocolOutput out;
    Json peaks = Json::array();
    for (const auto& t : traces) peaks.push_back(*std::max_element(t.signal.begin(), t.signal.end()));
    out.fits = {{"initialization_fit", fit_json(fit)},
                {"initialization_time", fit.value("timescale")},
                {"peak_signal", fig.peak},
                {"steady_signal", fig.steady},
                {"steady_to_peak", fig.steady / fig.peak},
                {"initialization_fidelity", 1.0 - 0.5 * fig.steady / fig.peak},
                {"pulse_peaks", peaks}};

    std::vector<std::string> names;
    std::vector<std::vector<double>> cols;
    for (std::size_t k = 1; k < traces.size(); ++k) {
        names.push_back("pulse_" + std::to_string(k));
        cols.push_back(traces[k].signal);
    }
    out.data_csv = to_csv(first, names, cols);
    return out;
}

inline ProtocolOutput run(const config::T1Setup& p, const config::ProtocolConfig& cfg, std::mt19937_64& rng)
{
    const auto curve = dynamics::simulate_t1_recovery(p.spin, p.tau.values(), p.pulse_length, p.peak_window, p.samples);
    Spectrum s{curve.tau, curve.peak, {}, "s"};
    add_noise(s.y, cfg.noise, rng);
    const auto fit = fitting::fit_exponential(s, fitting::ExpKind::recovery);
    ProtocolOutput out;
    out.fits = {{"recovery_fit", fit_json(fit)}, {"t1", fit.value("timescale")}, {"t1_sigma", fit.sigma("timescale")}};
    std::vector<double> model;
    for (double x : s.x) model.push_back(fit.evaluate(x));
    out.data_csv = to_csv(s, {"fit"}, {model});
    return out;
}

inline ProtocolOutput run(const config::CptSetup& p, const config::ProtocolConfig& cfg, std::mt19937_64& rng)
{
    Spectrum s = dynamics::simulate_cpt_scan(p.cpt, p.scan.values());
    add_noise(s.y, cfg.noise, rng);
    const auto fit = fitting::fit_cpt_dip(s);
    ProtocolOutput out;
    const double fwhm = fit.value("dip_fwhm");
    out.fits = {{"dip_fit", fit_json(fit)},
                {"dip_fwhm", fwhm},
                {"t2_star", 1.0 / (constants::pi * fwhm)},
                {"configured_ground_dephasing", p.cpt.ground_dephasing}};
    std::vector<double> model, lo, hi;
    for (double x : s.x) {
        const double m = fit.evaluate(x), b = fit.band_halfwidth(x, 3.0);
        model.push_back(m);
        lo.push_back(m - b);
        hi.push_back(m + b);
    }
    out.data_csv = to_csv(s, {"fit", "band_low", "band_high"}, {model, lo, hi});
    return out;
}

inline ProtocolOutput run(const config::CavityFitSetup& p, const config::ProtocolConfig& cfg, std::mt19937_64& rng)
{
    const double kappa = p.resonance_freq / p.q;
    Spectrum s;
    s.unit = "Hz";
    s.x = p.scan.values();
    for (double x : s.x) s.y.push_back(cqed::lorentzian(x, 0.0, kappa, p.amplitude, p.offset));
    add_noise(s.y, cfg.noise, rng);
    const auto fit = fitting::fit_lorentzian(s);
    const double resonance = p.resonance_freq + fit.value("center");
    ProtocolOutput out;
    out.fits = {{"lorentzian_fit", fit_json(fit)},
                {"resonance_freq", resonance},
                {"kappa", fit.value("fwhm")},
                {"kappa_sigma", fit.sigma("fwhm")},
                {"q", cqed::q_factor(resonance, fit.value("fwhm"))}};
    std::vector<double> model;
    for (double x : s.x) model.push_back(fit.evaluate(x));
    out.data_csv = to_csv(s, {"fit"}, {model});
    return out;
}

inline ProtocolOutput run(const config::SaturationSetup& p, const config::ProtocolConfig& cfg, std::mt19937_64& rng)
{
    Spectrum s;
    s.unit = "W";
    s.x = p.powers;
    for (double x : s.x) s.y.push_back(cqed::power_broadened_linewidth(p.model, x));
    add_noise(s.y, cfg.noise, rng);
    const auto fit = fitting::fit_saturation(s);
    ProtocolOutput out;
    out.fits = {{"saturation_fit", fit_json(fit)}, {"gamma0", fit.value("gamma0")}, {"p_sat", fit.value("p_sat")}};
    std::vector<double> model;
    for (double x : s.x) model.push_back(fit.evaluate(x));
    out.data_csv = to_csv(s, {"fit"}, {model});
    return out;
}

inline ProtocolOutput run(const config::MagnetSetup& p, const config::ProtocolConfig&, std::mt19937_64&)
{
    const auto samples = magnetics::field_map_grid(p.magnets, p.grid);
    const Eigen::Vector3d b = magnetics::assembly_field(p.magnets, p.pcc);
    ProtocolOutput out;
    out.data_csv = magnetics::to_csv(samples);
    out.fits = {{"pcc_point", vec_json(p.pcc)},
                {"b_field", vec_json(b)},
                {"b_norm", b.norm()},
                {"angle_to_axis_deg", magnetics::field_angle(b, p.axis)}};
    if (p.siv) {
        siv::SivModel m = *p.siv;
        m.b_field = siv::lab_to_siv_frame(b, p.symmetry_axis);
        const auto split = siv::spin_splitting(m);
        out.fits["siv_frame_field"] = vec_json(m.b_field);
        out.fits["f_s_ground"] = split.f_s_ground;
        out.fits["f_s_excited"] = split.f_s_excited;
    }
    return out;
}

inline ProtocolOutput run(const config::CooperativitySetup& p, const config::ProtocolConfig&, std::mt19937_64&)
{
    const auto c = cqed::cooperativity_from_linewidths(p.gamma_on, p.gamma0, p.detuning, p.kappa);
    ProtocolOutput out;
    out.fits = {{"cooperativity", c.value},
                {"below_bare_linewidth", c.below_bare_linewidth},
                {"filter_factor", cqed::filter_factor(p.detuning, p.kappa)},
                {"detuning", p.detuning}};
    if (!c.below_bare_linewidth) {
        out.fits["g"] = cqed::g_from_cooperativity(c.value, p.kappa, p.gamma0);
        const double ref = p.reference_detuning_over_kappa * p.kappa;
        out.fits["reference_detuning"] = ref;
        out.fits["broadening_at_reference"] =
            cqed::purcell_broadened_linewidth(c.value, ref, p.kappa, p.gamma0) / p.gamma0 - 1.0;
    }
    // Purcell broadening versus detuning for the extracted cooperativity.
    Spectrum s;
    s.unit = "kappa";
    s.x = linspace(0.0, 10.0, 101);
    const double coop = std::max(0.0, c.value);
    for (double x : s.x) s.y.push_back(cqed::purcell_broadened_linewidth(coop, x * p.kappa, p.kappa, p.gamma0) / p.gamma0 - 1.0);
    out.data_csv = to_csv(s);
    return out;
}

inline void write_file(const fs::path& path, const std::string& content)
{
    const fs::path tmp = path.string() + ".part";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + tmp.string());
        f << content;
        if (!f.flush()) throw Error("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

} // namespace detail

/// Runs the protocol without touching the file system.
inline ProtocolOutput compute(const config::ProtocolConfig& cfg)
{
    std::mt19937_64 rng(cfg.seed);
    try {
        return std::visit([&](const auto& setup) { return detail::run(setup, cfg, rng); }, cfg.setup);
    } catch (const Error& e) {
        throw RunError("protocol " + cfg.protocol + ": " + e.what());
    }
}

inline fs::path output_directory(const config::ProtocolConfig& cfg, const fs::path& root)
{
    return root / (cfg.protocol + "-" + config::hash_hex(config::config_hash(cfg), 8));
}

/// Runs the protocol and writes `<root>/<protocol>-<hash8>/{data.csv, fits.json,
/// manifest.json}`. Files are staged in a hidden sibling directory that is
/// renamed into place on success and removed on failure.
inline RunManifest run_protocol(const config::ProtocolConfig& cfg, const fs::path& root)
{
    RunManifest m;
    m.protocol = cfg.protocol;
    m.config_hash = config::hash_hex(config::config_hash(cfg));
    m.started = detail::utc_now();
    m.directory = output_directory(cfg, root);
    const fs::path staging = root / ("." + m.directory.filename().string() + ".partial");

    try {
        fs::create_directories(root);
        fs::remove_all(staging);
        fs::create_directories(staging);
        const ProtocolOutput out = compute(cfg);
        detail::write_file(staging / "data.csv", out.data_csv);
        detail::write_file(staging / "fits.json", out.fits.dump(2) + "\n");
        m.outputs = {"data.csv", "fits.json", "manifest.json"};
        m.finished = detail::utc_now();
        Json manifest = m.to_json();
        manifest["config"] = cfg.canonical;
        detail::write_file(staging / "manifest.json", manifest.dump(2) + "\n");
        fs::remove_all(m.directory);
        fs::rename(staging, m.directory);
    } catch (const fs::filesystem_error& e) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw RunError(std::string("protocol ") + cfg.protocol + ": " + e.what());
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
    return m;
}

} // namespace sivcav::protocols
