#pragma once

// Protocol configuration files: YAML in, typed setup plus a canonical JSON
// echo out. Every field access is recorded so unknown keys can be rejected
// with the list of valid ones.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "sivcav/cqed.hpp"
#include "sivcav/error.hpp"
#include "sivcav/experiments.hpp"
#include "sivcav/magnetics.hpp"
#include "sivcav/siv_levels.hpp"
#include "sivcav/spectrum.hpp"

namespace sivcav::config {

using Json = nlohmann::json;

/// Validation failure tied to a dotted field path and, when known, a line.
class ConfigError : public InvalidParameter {
public:
    ConfigError(std::string field, int line, const std::string& message)
        : InvalidParameter(compose(field, line, message)), field_(std::move(field)), line_(line)
    {
    }
    const std::string& field() const { return field_; }
    int line() const { return line_; }

private:
    static std::string compose(const std::string& field, int line, const std::string& message)
    {
        std::string s = (field.empty() ? std::string("config") : field) + ": " + message;
        if (line > 0) s += " (line " + std::to_string(line) + ")";
        return s;
    }
    std::string field_;
    int line_;
};

enum class Check { finite, positive, nonnegative, open_fraction };

class Section {
public:
    Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path))
    {
        if (node_ && !node_.IsNull() && !node_.IsMap())
            throw ConfigError(path_, line(node_), "expected a mapping of keys");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const std::string& path() const { return path_; }
    int line() const { return line(node_); }
    Json& echo() { return echo_; }

    bool has(const std::string& key)
    {
        note(key);
        return present(key);
    }

    double number(const std::string& key, Check check, std::optional<double> fallback = std::nullopt)
    {
        note(key);
        double v;
        if (!present(key)) {
            if (!fallback) throw missing(key);
            v = *fallback;
        } else {
            v = scalar(key);
        }
        check_value(key, v, check);
        echo_[key] = v;
        return v;
    }

    std::optional<double> optional_number(const std::string& key, Check check)
    {
        note(key);
        if (!present(key)) return std::nullopt;
        const double v = scalar(key);
        check_value(key, v, check);
        echo_[key] = v;
        return v;
    }

    std::uint64_t integer(const std::string& key, std::uint64_t minimum, std::optional<std::uint64_t> fallback = std::nullopt)
    {
        note(key);
        std::uint64_t v;
        if (!present(key)) {
            if (!fallback) throw missing(key);
            v = *fallback;
        } else {
            const YAML::Node n = at(key);
            const double d = scalar(key);
            if (d != std::floor(d) || d < 0.0 || d > 9.0e15)
                throw ConfigError(field(key), line(n), "expected a non-negative integer");
            v = static_cast<std::uint64_t>(d);
        }
        if (v < minimum) throw ConfigError(field(key), line(at(key)), "must be >= " + std::to_string(minimum));
        echo_[key] = v;
        return v;
    }

    std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt,
                     const std::vector<std::string>& allowed = {})
    {
        note(key);
        std::string v;
        if (!present(key)) {
            if (!fallback) throw missing(key);
            v = *fallback;
        } else {
            const YAML::Node n = at(key);
            if (!n.IsScalar()) throw ConfigError(field(key), line(n), "expected a string");
            v = n.as<std::string>();
        }
        if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), v) == allowed.end())
            throw ConfigError(field(key), line(at(key)), "invalid value '" + v + "'; expected one of: " + join(allowed));
        echo_[key] = v;
        return v;
    }

    Eigen::Vector3d vector3(const std::string& key, std::optional<Eigen::Vector3d> fallback = std::nullopt)
    {
        note(key);
        Eigen::Vector3d v;
        if (!present(key)) {
            if (!fallback) throw missing(key);
            v = *fallback;
        } else {
            const YAML::Node n = at(key);
            if (!n.IsSequence() || n.size() != 3) throw ConfigError(field(key), line(n), "expected a list of 3 numbers");
            for (std::size_t i = 0; i < 3; ++i) v[static_cast<Eigen::Index>(i)] = convert(n[i], field(key));
        }
        echo_[key] = {v[0], v[1], v[2]};
        return v;
    }

    std::optional<Eigen::Vector3d> optional_vector3(const std::string& key)
    {
        if (!has(key)) return std::nullopt;
        return vector3(key);
    }

    std::vector<double> numbers(const std::string& key, Check check, std::size_t min_count)
    {
        note(key);
        if (!present(key)) throw missing(key);
        const YAML::Node n = at(key);
        if (!n.IsSequence()) throw ConfigError(field(key), line(n), "expected a list of numbers");
        if (n.size() < min_count)
            throw ConfigError(field(key), line(n), "expected at least " + std::to_string(min_count) + " values");
        std::vector<double> out;
        for (std::size_t i = 0; i < n.size(); ++i) {
            const double v = convert(n[i], field(key));
            check_value(key, v, check);
            out.push_back(v);
        }
        echo_[key] = out;
        return out;
    }

    /// Nested section; absent sections are read as empty (all defaults).
    Section child(const std::string& key) const { return Section(present(key) ? at(key) : YAML::Node(), field(key)); }

    /// Required nested section.
    Section block(const std::string& key, const std::string& requirement)
    {
        note(key);
        if (!present(key)) throw ConfigError(field(key), line(node_), "missing block; " + requirement);
        return child(key);
    }

    std::optional<Section> optional_block(const std::string& key)
    {
        note(key);
        if (!present(key)) return std::nullopt;
        return child(key);
    }

    /// Stores a finished child's echo under `key`.
    void adopt(const std::string& key, Section& sub)
    {
        sub.finish();
        echo_[key] = sub.echo();
    }

    std::vector<Section> list(const std::string& key, const std::string& requirement, std::size_t min_count = 1)
    {
        note(key);
        if (!present(key)) throw ConfigError(field(key), line(node_), "missing block; " + requirement);
        const YAML::Node n = at(key);
        if (!n.IsSequence()) throw ConfigError(field(key), line(n), "expected a list");
        if (n.size() < min_count)
            throw ConfigError(field(key), line(n), "expected at least " + std::to_string(min_count) + " entries");
        std::vector<Section> out;
        for (std::size_t i = 0; i < n.size(); ++i) out.emplace_back(n[i], field(key) + "[" + std::to_string(i) + "]");
        return out;
    }

    void adopt_list(const std::string& key, std::vector<Section>& subs)
    {
        Json arr = Json::array();
        for (auto& s : subs) {
            s.finish();
            arr.push_back(s.echo());
        }
        echo_[key] = arr;
    }

    /// Rejects keys that were never asked for.
    void finish() const
    {
        if (!node_ || !node_.IsMap()) return;
        for (const auto& kv : node_) {
            const std::string k = kv.first.as<std::string>();
            if (std::find(known_.begin(), known_.end(), k) == known_.end())
                throw ConfigError(field(k), line(kv.first), "unknown key; valid keys: " + join(known_));
        }
    }

    ConfigError error(const std::string& key, const std::string& message) const
    {
        return ConfigError(field(key), present(key) ? line(at(key)) : line(node_), message);
    }

private:
    static int line(const YAML::Node& n)
    {
        if (!n) return 0;
        const int l = n.Mark().line;
        return l >= 0 ? l + 1 : 0;
    }

    static std::string join(const std::vector<std::string>& v)
    {
        std::string s;
        for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
        return s;
    }

    void note(const std::string& key)
    {
        if (std::find(known_.begin(), known_.end(), key) == known_.end()) known_.push_back(key);
    }

    YAML::Node at(const std::string& key) const
    {
        const YAML::Node& n = node_;
        return n[key];
    }

    bool present(const std::string& key) const
    {
        if (!node_ || !node_.IsMap()) return false;
        const YAML::Node n = at(key);
        return n && !n.IsNull();
    }

    ConfigError missing(const std::string& key) const { return ConfigError(field(key), line(node_), "missing required field"); }

    static double convert(const YAML::Node& n, const std::string& f)
    {
        if (!n.IsScalar()) throw ConfigError(f, line(n), "expected a number");
        try {
            return n.as<double>();
        } catch (const YAML::Exception&) {
            throw ConfigError(f, line(n), "expected a number, got '" + n.Scalar() + "'");
        }
    }

    double scalar(const std::string& key) const { return convert(at(key), field(key)); }

    void check_value(const std::string& key, double v, Check check) const
    {
        const int l = present(key) ? line(at(key)) : line(node_);
        if (!std::isfinite(v)) throw ConfigError(field(key), l, "must be finite");
        switch (check) {
        case Check::finite: break;
        case Check::positive:
            if (!(v > 0.0)) throw ConfigError(field(key), l, "must be > 0");
            break;
        case Check::nonnegative:
            if (!(v >= 0.0)) throw ConfigError(field(key), l, "must be >= 0");
            break;
        case Check::open_fraction:
            if (!(v > 0.0 && v < 1.0)) throw ConfigError(field(key), l, "must lie in (0, 1)");
            break;
        }
    }

    YAML::Node node_;
    std::string path_;
    std::vector<std::string> known_;
    Json echo_ = Json::object();
};

// ---------------------------------------------------------------------------
// Typed setups

struct Noise {
    double relative = 0.0; // sigma as a fraction of each value
    double absolute = 0.0; // additive sigma
    bool enabled() const { return relative > 0.0 || absolute > 0.0; }
};

struct Scan {
    double start = 0.0, stop = 0.0;
    std::size_t points = 2;
    std::vector<double> values() const { return linspace(start, stop, points); }
};

struct EmitterSpec {
    siv::SivModel model;
    double linewidth = 160e6;
    double amplitude = 1.0;
    double saturation = 0.0;
};

struct PleSetup {
    std::vector<EmitterSpec> emitters;
    double reference = 406.7e12;
    Scan scan;
    std::optional<dynamics::PumpProbe> pump;
};

struct SpinPumpingSetup {
    dynamics::SpinPumpingParams spin;
    dynamics::PulseSequence pulse;
};

struct T1Setup {
    dynamics::SpinPumpingParams spin;
    double pulse_length = 1e-6;
    double peak_window = 100e-9;
    std::size_t samples = 401;
    Scan tau;
};

struct CptSetup {
    dynamics::CptParams cpt;
    Scan scan;
};

struct CavityFitSetup {
    double resonance_freq = 0.0;
    double q = 0.0;
    double amplitude = 1.0;
    double offset = 0.0;
    Scan scan; // offsets from resonance
};

struct SaturationSetup {
    cqed::SaturationModel model;
    std::vector<double> powers;
};

struct MagnetSetup {
    std::vector<magnetics::CuboidMagnet> magnets;
    magnetics::GridSpec grid;
    Eigen::Vector3d pcc = Eigen::Vector3d::Zero();
    Eigen::Vector3d axis = Eigen::Vector3d::UnitX();
    std::optional<siv::SivModel> siv; // b_field is filled in from the assembly
    Eigen::Vector3d symmetry_axis = Eigen::Vector3d::UnitX();
};

struct CooperativitySetup {
    double gamma_on = 0.0;
    double gamma0 = 0.0;
    double kappa = 0.0;
    double detuning = 0.0;
    double reference_detuning_over_kappa = 5.0;
};

using Setup = std::variant<PleSetup, SpinPumpingSetup, T1Setup, CptSetup, CavityFitSetup, SaturationSetup, MagnetSetup,
                           CooperativitySetup>;

inline const std::vector<std::string>& protocol_names()
{
    static const std::vector<std::string> names{"ple_scan",  "pump_probe_scan", "spin_pumping",     "t1_recovery",
                                                "cpt_scan",  "cavity_fit",      "saturation_study", "magnet_map",
                                                "cooperativity_report"};
    return names;
}

struct ProtocolConfig {
    std::string protocol;
    std::string description;
    std::uint64_t seed = 0;
    std::string output = "results";
    Noise noise;
    Setup setup;
    Json canonical; // every resolved field, defaults filled in
};

// ---------------------------------------------------------------------------
// Block readers

namespace detail {

inline siv::ManifoldParams read_manifold(Section& s, const siv::ManifoldParams& d)
{
    siv::ManifoldParams m;
    m.lambda_so = s.number("lambda_so", Check::positive, d.lambda_so);
    m.strain_alpha = s.number("strain_alpha", Check::finite, d.strain_alpha);
    m.strain_beta = s.number("strain_beta", Check::finite, d.strain_beta);
    m.quench_f = s.number("quench_f", Check::nonnegative, d.quench_f);
    m.g_spin = s.number("g_spin", Check::positive, d.g_spin);
    return m;
}

// Level-structure fields shared by emitters and the magnet_map SiV block.
inline siv::SivModel read_siv_levels(Section& s)
{
    siv::SivModel m;
    Section g = s.child("ground");
    s.has("ground");
    m.ground = read_manifold(g, siv::default_ground());
    s.adopt("ground", g);
    Section e = s.child("excited");
    s.has("excited");
    m.excited = read_manifold(e, siv::default_excited());
    s.adopt("excited", e);
    m.zpl_center = s.number("zpl_center", Check::positive, 406.7e12);
    return m;
}

inline EmitterSpec read_emitter(Section& s)
{
    EmitterSpec e;
    e.model = read_siv_levels(s);
    const Eigen::Vector3d b = s.vector3("b_field", Eigen::Vector3d::Zero());
    if (!b.allFinite()) throw s.error("b_field", "must be finite");
    if (const auto axis = s.optional_vector3("symmetry_axis")) {
        if (!(axis->norm() > 0.0)) throw s.error("symmetry_axis", "must be a non-zero vector");
        e.model.b_field = siv::lab_to_siv_frame(b, *axis);
    } else {
        e.model.b_field = b;
    }
    e.linewidth = s.number("linewidth", Check::positive, 160e6);
    e.amplitude = s.number("amplitude", Check::positive, 1.0);
    e.saturation = s.number("saturation", Check::nonnegative, 0.0);
    return e;
}

inline Scan read_scan(Section& s)
{
    Scan sc;
    sc.start = s.number("start", Check::finite);
    sc.stop = s.number("stop", Check::finite);
    sc.points = static_cast<std::size_t>(s.integer("points", 2));
    if (!(sc.stop > sc.start)) throw s.error("stop", "must be greater than start");
    return sc;
}

inline Scan read_scan_block(Section& parent, const std::string& key, const std::string& requirement)
{
    Section s = parent.block(key, requirement);
    Scan sc = read_scan(s);
    parent.adopt(key, s);
    return sc;
}

inline dynamics::SpinPumpingParams read_spin(Section& s)
{
    dynamics::SpinPumpingParams p;
    p.t1 = s.number("t1", Check::positive, 630e-9);
    p.eta = s.number("eta", Check::nonnegative);
    p.optical_linewidth = s.number("optical_linewidth", Check::positive, 160e6);
    p.rabi = s.number("rabi", Check::positive);
    p.laser_detuning = s.number("laser_detuning", Check::finite, 0.0);
    p.preserving_separation = s.number("preserving_separation", Check::finite);
    p.f_s_ground = s.number("f_s_ground", Check::positive, 6.8e9);
    p.flip_drive_ratio = s.number("flip_drive_ratio", Check::nonnegative, 0.0);
    return p;
}

inline magnetics::GridAxis read_axis(Section& s)
{
    magnetics::GridAxis a;
    a.min = s.number("min", Check::finite);
    a.max = s.number("max", Check::finite);
    a.points = static_cast<std::size_t>(s.integer("points", 1));
    if (a.max < a.min) throw s.error("max", "must be >= min");
    if (a.points > 1 && a.max == a.min) throw s.error("max", "must exceed min when points > 1");
    return a;
}

inline std::string requirement(const std::string& protocol)
{
    static const std::vector<std::pair<std::string, std::string>> blocks{
        {"ple_scan", "emitters, scan"},
        {"pump_probe_scan", "emitters, scan, pump"},
        {"spin_pumping", "spin, pulse"},
        {"t1_recovery", "spin, recovery"},
        {"cpt_scan", "cpt, scan"},
        {"cavity_fit", "cavity, scan"},
        {"saturation_study", "saturation"},
        {"magnet_map", "magnets, grid, pcc"},
        {"cooperativity_report", "cavity"},
    };
    for (const auto& [p, b] : blocks)
        if (p == protocol) return "protocol '" + protocol + "' requires blocks: " + b;
    return {};
}

inline Setup read_setup(Section& root, const std::string& protocol)
{
    const std::string need = requirement(protocol);

    if (protocol == "ple_scan" || protocol == "pump_probe_scan") {
        PleSetup ple;
        auto list = root.list("emitters", need);
        for (auto& e : list) ple.emitters.push_back(read_emitter(e));
        root.adopt_list("emitters", list);
        Section scan = root.block("scan", need);
        ple.reference = scan.number("reference", Check::positive, 406.7e12);
        ple.scan = read_scan(scan);
        root.adopt("scan", scan);
        if (protocol == "pump_probe_scan") {
            Section p = root.block("pump", need);
            dynamics::PumpProbe pp;
            pp.emitter = static_cast<std::size_t>(p.integer("emitter", 0, 0));
            if (pp.emitter >= ple.emitters.size()) throw p.error("emitter", "index out of range");
            pp.parent = p.text("parent", std::string("C"), {"A", "B", "C", "D"})[0];
            pp.label = static_cast<int>(p.integer("transition", 2, 2));
            if (pp.label != 2 && pp.label != 3) throw p.error("transition", "must be a spin-preserving transition (2 or 3)");
            pp.pump_rabi = p.number("pump_rabi", Check::positive, 50e6);
            pp.probe_rabi = p.number("probe_rabi", Check::positive, 50e6);
            pp.eta = p.optional_number("eta", Check::nonnegative).value_or(-1.0);
            pp.t1 = p.number("t1", Check::positive, 630e-9);
            root.adopt("pump", p);
            ple.pump = pp;
        }
        return ple;
    }
    if (protocol == "spin_pumping") {
        SpinPumpingSetup sp;
        Section s = root.block("spin", need);
        sp.spin = read_spin(s);
        root.adopt("spin", s);
        Section p = root.block("pulse", need);
        sp.pulse.pulse_length = p.number("length", Check::positive);
        sp.pulse.n_pulses = static_cast<std::size_t>(p.integer("count", 1, 1));
        sp.pulse.gap = p.number("gap", Check::nonnegative, 0.0);
        sp.pulse.samples = static_cast<std::size_t>(p.integer("samples", 10, 1001));
        root.adopt("pulse", p);
        return sp;
    }
    if (protocol == "t1_recovery") {
        T1Setup t;
        Section s = root.block("spin", need);
        t.spin = read_spin(s);
        root.adopt("spin", s);
        Section r = root.block("recovery", need);
        t.pulse_length = r.number("pulse_length", Check::positive);
        t.peak_window = r.number("peak_window", Check::positive, 100e-9);
        if (t.peak_window > t.pulse_length) throw r.error("peak_window", "must not exceed pulse_length");
        t.samples = static_cast<std::size_t>(r.integer("samples", 10, 401));
        t.tau = read_scan_block(r, "tau", "recovery requires a tau scan");
        if (t.tau.start < 0.0) throw ConfigError(r.field("tau.start"), 0, "must be >= 0");
        if (t.tau.points < 4) throw ConfigError(r.field("tau.points"), 0, "must be >= 4 for the recovery fit");
        root.adopt("recovery", r);
        return t;
    }
    if (protocol == "cpt_scan") {
        CptSetup c;
        Section s = root.block("cpt", need);
        c.cpt.f_s = s.number("f_s", Check::positive, 6.8e9);
        c.cpt.optical_linewidth = s.number("optical_linewidth", Check::positive, 160e6);
        c.cpt.branching = s.number("branching", Check::open_fraction, 0.5);
        c.cpt.pump_rabi = s.number("pump_rabi", Check::positive);
        c.cpt.probe_rabi = s.number("probe_rabi", Check::positive);
        const auto t2 = s.optional_number("t2_star", Check::positive);
        const auto gs = s.optional_number("ground_dephasing", Check::nonnegative);
        if (t2 && gs) throw s.error("ground_dephasing", "give either t2_star or ground_dephasing, not both");
        c.cpt.ground_dephasing = t2 ? dynamics::dephasing_from_t2_star(*t2) : gs.value_or(0.0);
        if (const auto t1 = s.optional_number("t1", Check::positive)) c.cpt.t1 = *t1;
        c.cpt.pump_detuning = s.number("pump_detuning", Check::finite, 0.0);
        root.adopt("cpt", s);
        c.scan = read_scan_block(root, "scan", need);
        if (c.scan.points < 5) throw ConfigError("scan.points", 0, "must be >= 5 for the dip fit");
        return c;
    }
    if (protocol == "cavity_fit") {
        CavityFitSetup c;
        Section s = root.block("cavity", need);
        c.resonance_freq = s.number("resonance_freq", Check::positive);
        c.q = s.number("q", Check::positive);
        c.amplitude = s.number("amplitude", Check::positive, 1.0);
        c.offset = s.number("offset", Check::finite, 0.0);
        root.adopt("cavity", s);
        c.scan = read_scan_block(root, "scan", need);
        if (c.scan.points < 5) throw ConfigError("scan.points", 0, "must be >= 5 for the Lorentzian fit");
        return c;
    }
    if (protocol == "saturation_study") {
        SaturationSetup c;
        Section s = root.block("saturation", need);
        c.model.gamma0 = s.number("gamma0", Check::positive);
        c.model.p_sat = s.number("p_sat", Check::positive);
        c.powers = s.numbers("powers", Check::nonnegative, 3);
        if (!std::is_sorted(c.powers.begin(), c.powers.end()) ||
            std::adjacent_find(c.powers.begin(), c.powers.end()) != c.powers.end())
            throw s.error("powers", "must be strictly increasing");
        root.adopt("saturation", s);
        return c;
    }
    if (protocol == "magnet_map") {
        MagnetSetup m;
        auto list = root.list("magnets", need);
        for (auto& s : list) {
            magnetics::CuboidMagnet c;
            c.center = s.vector3("center");
            c.dimensions = s.vector3("dimensions");
            c.magnetization = s.vector3("magnetization");
            if (!c.center.allFinite()) throw s.error("center", "must be finite");
            if (!(c.dimensions.array() > 0.0).all() || !c.dimensions.allFinite())
                throw s.error("dimensions", "all edge lengths must be > 0");
            if (!c.magnetization.allFinite()) throw s.error("magnetization", "must be finite");
            m.magnets.push_back(c);
        }
        root.adopt_list("magnets", list);
        Section g = root.block("grid", need);
        for (const auto& [key, axis] : {std::pair{"x", &m.grid.x}, std::pair{"y", &m.grid.y}, std::pair{"z", &m.grid.z}}) {
            Section a = g.block(key, "grid requires x, y and z axes");
            *axis = read_axis(a);
            g.adopt(key, a);
        }
        root.adopt("grid", g);
        Section p = root.block("pcc", need);
        m.pcc = p.vector3("point");
        m.axis = p.vector3("axis", Eigen::Vector3d::UnitX());
        if (!(m.axis.norm() > 0.0)) throw p.error("axis", "must be a non-zero vector");
        for (const auto& mag : m.magnets)
            if (mag.excludes(m.pcc)) throw p.error("point", "lies inside or on a magnet");
        root.adopt("pcc", p);
        if (auto s = root.optional_block("siv")) {
            m.siv = read_siv_levels(*s);
            m.symmetry_axis = s->vector3("symmetry_axis", Eigen::Vector3d::UnitX());
            if (!(m.symmetry_axis.norm() > 0.0)) throw s->error("symmetry_axis", "must be a non-zero vector");
            root.adopt("siv", *s);
        }
        return m;
    }
    // cooperativity_report
    CooperativitySetup c;
    Section s = root.block("cavity", need);
    c.gamma_on = s.number("gamma_on", Check::positive);
    c.gamma0 = s.number("gamma0", Check::positive);
    c.kappa = s.number("kappa", Check::positive);
    const auto det = s.optional_number("detuning", Check::finite);
    const auto ratio = s.optional_number("detuning_over_kappa", Check::finite);
    if (det && ratio) throw s.error("detuning_over_kappa", "give either detuning or detuning_over_kappa, not both");
    c.detuning = det ? *det : ratio.value_or(0.0) * c.kappa;
    c.reference_detuning_over_kappa = s.number("reference_detuning_over_kappa", Check::nonnegative, 5.0);
    root.adopt("cavity", s);
    return c;
}

} // namespace detail

/// Parses and validates a configuration document.
inline ProtocolConfig parse_config(const std::string& text)
{
    YAML::Node doc;
    try {
        doc = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("", e.mark.line >= 0 ? e.mark.line + 1 : 0, "parse error: " + e.msg);
    }
    if (!doc || !doc.IsMap()) throw ConfigError("", 0, "expected a mapping at top level");

    Section root(doc, "");
    ProtocolConfig cfg;
    cfg.protocol = root.text("protocol", std::nullopt, protocol_names());
    cfg.description = root.text("description", std::string());
    cfg.seed = root.integer("seed", 0, 0);
    cfg.output = root.text("output", std::string("results"));
    {
        Section n = root.child("noise");
        root.has("noise");
        cfg.noise.relative = n.number("relative", Check::nonnegative, 0.0);
        cfg.noise.absolute = n.number("absolute", Check::nonnegative, 0.0);
        root.adopt("noise", n);
    }
    cfg.setup = detail::read_setup(root, cfg.protocol);
    root.finish();
    cfg.canonical = root.echo();
    return cfg;
}

inline ProtocolConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Canonical text of the resolved configuration (sorted keys). It is valid
/// YAML and parses back to the same configuration.
inline std::string echo(const ProtocolConfig& cfg) { return cfg.canonical.dump(2); }

/// FNV-1a 64 over the canonical form without the output location.
inline std::uint64_t config_hash(const ProtocolConfig& cfg)
{
    Json j = cfg.canonical;
    j.erase("output");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h, std::size_t digits = 16)
{
    static const char* hex = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = hex[h & 0xf];
    return s.substr(0, digits);
}

} // namespace sivcav::config
