// Acceptance gate: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "oracles.hpp"
#include "sivcav/config.hpp"
#include "sivcav/cqed.hpp"
#include "sivcav/experiments.hpp"
#include "sivcav/fitting.hpp"
#include "sivcav/protocols.hpp"

using namespace sivcav;
namespace fs = std::filesystem;

namespace {

const fs::path source_dir{SIVCAV_SOURCE_DIR};

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<void(Outcome&)>& body)
{
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dt > limit_s) {
        o.pass = false;
        o.detail << " [runtime " << dt << " s exceeds " << limit_s << " s]";
    }
    if (!o.pass) ++failures;
    std::printf("%s %2d %s:%s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.str().c_str(), dt);
    std::fflush(stdout);
}

config::ProtocolConfig shipped(const std::string& name) { return config::load_config(source_dir / "configs" / name); }

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Shell {
    int code = -1;
    std::string out;
};

Shell shell(const std::string& cmd)
{
    Shell r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string quote(const fs::path& p) { return "\"" + p.string() + "\""; }

// Random N <= 4 system with a drive tree, decays towards lower indices and dephasing.
dynamics::LevelSystem random_system(std::mt19937_64& rng, std::size_t n)
{
    std::uniform_real_distribution<double> rate(1e6, 50e6), det(-30e6, 30e6), u(0.0, 1.0);
    std::vector<dynamics::Level> levels;
    for (std::size_t k = 0; k < n; ++k) levels.push_back({"l" + std::to_string(k), 1e9 * static_cast<double>(k)});
    std::vector<dynamics::Drive> drives;
    std::vector<dynamics::Decay> decays;
    std::vector<dynamics::Dephasing> deph;
    for (std::size_t k = 1; k < n; ++k) {
        std::uniform_int_distribution<std::size_t> parent(0, k - 1);
        drives.push_back({parent(rng), k, rate(rng), det(rng)});
        decays.push_back({k, parent(rng), rate(rng), u(rng) < 0.7});
    }
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b)
            if (u(rng) < 0.5) deph.push_back({a, b, rate(rng)});
    return dynamics::LevelSystem(levels, drives, decays, deph);
}

dynamics::DensityState random_state(std::mt19937_64& rng, std::size_t n)
{
    std::normal_distribution<double> g(0.0, 1.0);
    dynamics::Matrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = dynamics::Complex(g(rng), g(rng));
    dynamics::Matrix rho = a * a.adjoint();
    rho /= rho.trace();
    return dynamics::DensityState(0.5 * (rho + rho.adjoint()));
}

} // namespace

int main()
{
    criterion(1, "cooperativity chain", 1.0, [](Outcome& o) {
        const double kappa = 273e9, g0 = 157e6;
        const auto c = cqed::cooperativity_from_linewidths(203e6, g0, 0.042 * kappa, kappa);
        const double g = cqed::g_from_cooperativity(c.value, kappa, g0);
        o.detail << " C=" << c.value << " g=" << g / 1e9 << " GHz";
        o.check(c.value >= 0.28 && c.value <= 0.31, "C in [0.28, 0.31]");
        o.check(g >= 1.75e9 && g <= 1.85e9, "g in [1.75, 1.85] GHz");
        const auto report = protocols::compute(shipped("fig3_cooperativity.cfg")).fits;
        o.check(std::abs(report["cooperativity"].get<double>() - c.value) < 1e-12, "protocol output agrees");
    });

    criterion(2, "detuned broadening at 5 kappa", 1.0, [](Outcome& o) {
        const double kappa = 273e9, g0 = 157e6;
        const double rel = cqed::purcell_broadened_linewidth(0.30, 5.0 * kappa, kappa, g0) / g0 - 1.0;
        o.detail << " broadening=" << rel * 100 << "%";
        o.check(rel < 0.005, "< 0.5%");
    });

    criterion(3, "saturation closure", 1.0, [](Outcome& o) {
        const auto cfg = shipped("fig3_saturation.cfg");
        const auto& setup = std::get<config::SaturationSetup>(cfg.setup);
        const auto fits = protocols::compute(cfg).fits;
        const double g = fits["gamma0"].get<double>();
        o.detail << " powers=" << setup.powers.size() << " noise=" << cfg.noise.relative << " seed=" << cfg.seed
                 << " gamma0=" << g / 1e6 << " MHz";
        o.check(setup.powers.size() == 8 && cfg.noise.relative == 0.03, "8 powers with 3% noise");
        o.check(std::abs(g - setup.model.gamma0) < 0.05 * setup.model.gamma0, "gamma0 within 5%");
    });

    criterion(4, "magnet assembly field and ground splitting", 5.0, [](Outcome& o) {
        const auto fits = protocols::compute(shipped("fig2_magnet_map.cfg")).fits;
        const double b = fits["b_norm"].get<double>(), fs_g = fits["f_s_ground"].get<double>();
        o.detail << " |B|=" << b * 1e3 << " mT f_s=" << fs_g / 1e9 << " GHz angle=" << fits["angle_to_axis_deg"].get<double>()
                 << " deg";
        o.check(b > 0.250, "|B| > 250 mT");
        o.check(std::abs(fs_g - 6.8e9) <= 0.5e9, "f_s = 6.8 +- 0.5 GHz");
    });

    criterion(5, "spin pumping and T1 recovery", 30.0, [](Outcome& o) {
        const auto pump = protocols::compute(shipped("fig4_spin_pumping.cfg")).fits;
        const double tau = pump["initialization_time"].get<double>();
        const double f = pump["initialization_fidelity"].get<double>();
        const auto rec = protocols::compute(shipped("fig4_t1_recovery.cfg")).fits;
        const double t1 = rec["t1"].get<double>();
        o.detail << " tau=" << tau * 1e9 << " ns F=" << f << " T1=" << t1 * 1e9 << " ns";
        o.check(std::abs(tau - 70e-9) <= 0.2 * 70e-9, "tau = 70 ns +- 20%");
        o.check(std::abs(f - 0.75) <= 0.05, "F = 0.75 +- 0.05");
        o.check(std::abs(t1 - 630e-9) <= 0.02 * 630e-9, "T1 = 630 ns +- 2%");
    });

    criterion(6, "CPT dip width and dark state", 60.0, [](Outcome& o) {
        auto params = [](double rabi, double dephasing) {
            dynamics::CptParams p;
            p.pump_rabi = p.probe_rabi = rabi;
            p.ground_dephasing = dephasing;
            return p;
        };
        const double gs = dynamics::dephasing_from_t2_star(97e-9);
        // widths fitted at finite drive, extrapolated linearly in Omega^2 to zero power
        Spectrum w;
        for (double rabi : {6e6, 8e6, 12e6, 16e6}) {
            const Spectrum s = dynamics::simulate_cpt_scan(params(rabi, gs), linspace(-6e6, 6e6, 121));
            w.x.push_back(rabi * rabi);
            w.y.push_back(fitting::fit_cpt_dip(s).value("dip_fwhm"));
        }
        Eigen::VectorXd guess(2);
        guess << (w.y.back() - w.y.front()) / (w.x.back() - w.x.front()), w.y.front();
        const auto lin = fitting::lm_fit(fitting::linear_model(), w, guess, fitting::Bounds::unbounded(2));
        const double w0 = lin.value("intercept");
        o.detail << " FWHM(0)=" << w0 / 1e6 << " MHz";
        o.check(std::abs(w0 - 3.3e6) <= 0.1 * 3.3e6, "zero-power FWHM within 10% of 3.3 MHz");

        double previous = INFINITY, ratio = 0.0;
        for (double d : {1e5, 1e4, 1e3, 0.0}) {
            const Spectrum s = dynamics::simulate_cpt_scan(params(6e6, d), {0.0, 5e6});
            ratio = s.y[0] / s.y[1];
            o.check(ratio < previous, "dark-state signal decreases with ground dephasing");
            previous = ratio;
        }
        o.detail << " dark/off-dip=" << ratio;
        o.check(ratio <= 1e-6, "dark-state fluorescence <= 1e-6 of off-dip");
    });

    criterion(7, "Lindblad integrator on random systems", 60.0, [](Outcome& o) {
        std::mt19937_64 rng(2024);
        double trace_err = 0, herm_err = 0, min_eig = INFINITY, expm_err = 0;
        const std::vector<double> times{5e-9, 20e-9, 60e-9};
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t n = 2 + static_cast<std::size_t>(trial % 3);
            const auto sys = random_system(rng, n);
            const auto rho0 = random_state(rng, n);
            const auto l = oracle::liouvillian(sys);
            for (double t : times) {
                const auto tr = dynamics::evolve(sys, rho0, {t});
                const dynamics::Matrix& rho = *tr.final_state;
                trace_err = std::max(trace_err, std::abs(rho.trace() - 1.0));
                herm_err = std::max(herm_err, (rho - rho.adjoint()).cwiseAbs().maxCoeff());
                Eigen::SelfAdjointEigenSolver<dynamics::Matrix> es(0.5 * (rho + rho.adjoint()));
                min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
                expm_err = std::max(expm_err, (rho - oracle::propagate(l, rho0.matrix(), t)).cwiseAbs().maxCoeff());
            }
        }
        o.detail << " trace=" << trace_err << " herm=" << herm_err << " min_eig=" << min_eig << " expm=" << expm_err;
        o.check(trace_err <= 1e-8, "trace within 1e-8");
        o.check(herm_err <= 1e-10, "Hermiticity within 1e-10");
        o.check(min_eig >= -1e-9, "eigenvalues >= -1e-9");
        o.check(expm_err <= 1e-6, "matrix-exponential oracle within 1e-6");

        // weak drive: coherent dynamics versus adiabatically eliminated rate equations
        dynamics::SpinPumpingParams p;
        p.eta = 0.14;
        p.rabi = 0.01 * p.optical_linewidth;
        p.preserving_separation = 225e6;
        const auto sys = dynamics::spin_pumping_system(p);
        const auto g = oracle::rate_generator(sys);
        const auto times_rate = linspace(0.0, 3e-6, 31);
        const auto tr = dynamics::evolve(sys, dynamics::thermal_spin_state(), times_rate);
        Eigen::VectorXd p0(4);
        p0 << 0.5, 0.5, 0.0, 0.0;
        const double settle = 20.0 / (constants::two_pi * p.optical_linewidth);
        double rate_err = 0.0;
        for (std::size_t i = 1; i < times_rate.size(); ++i) {
            const Eigen::VectorXd ref = oracle::rate_populations(g, p0, times_rate[i]);
            for (int k = 0; k < 4; ++k) {
                if (k >= 2 && times_rate[i] <= settle) continue;
                rate_err = std::max(rate_err, std::abs(tr.populations[i][static_cast<std::size_t>(k)] - ref[k]) / ref[k]);
            }
        }
        o.detail << " rate_eq=" << rate_err;
        o.check(rate_err <= 0.01, "rate-equation oracle within 1%");
    });

    criterion(8, "cuboid magnetostatics", 30.0, [](Outcome& o) {
        const magnetics::CuboidMagnet m{Eigen::Vector3d(0.001, -0.002, 0.0005), Eigen::Vector3d(0.010, 0.006, 0.004),
                                        Eigen::Vector3d(0.9, -0.4, 1.1)};
        const double edge = m.dimensions.maxCoeff();
        std::mt19937_64 rng(77);
        std::uniform_real_distribution<double> c(-2.5, 2.5);
        std::normal_distribution<double> nrm(0.0, 1.0);
        double quad = 0.0, dip = 0.0, div = 0.0, curl = 0.0;
        for (int i = 0; i < 50; ++i) {
            Eigen::Vector3d p;
            do p = m.center + edge * Eigen::Vector3d(c(rng), c(rng), c(rng));
            while (m.exterior_distance(p) <= 0.2 * edge);
            const Eigen::Vector3d b = magnetics::cuboid_field(m, p);
            quad = std::max(quad, (b - oracle::surface_charge_field(m, p)).norm() / b.norm());

            const double h = 1e-5;
            Eigen::Matrix3d grad;
            for (int j = 0; j < 3; ++j) {
                Eigen::Vector3d s = Eigen::Vector3d::Zero();
                s[j] = h;
                grad.col(j) = (magnetics::cuboid_field(m, p + s) - magnetics::cuboid_field(m, p - s)) / (2 * h);
            }
            const double scale = b.norm() / h;
            div = std::max(div, std::abs(grad.trace()) / scale);
            curl = std::max(curl, Eigen::Vector3d(grad(2, 1) - grad(1, 2), grad(0, 2) - grad(2, 0), grad(1, 0) - grad(0, 1))
                                          .norm() / scale);
        }
        for (int i = 0; i < 20; ++i) {
            const Eigen::Vector3d p = m.center + 20.0 * edge * Eigen::Vector3d(nrm(rng), nrm(rng), nrm(rng)).normalized();
            const Eigen::Vector3d b = magnetics::cuboid_field(m, p);
            dip = std::max(dip, (b - magnetics::dipole_field(m, p)).norm() / b.norm());
        }
        o.detail << " quadrature=" << quad << " dipole@20x=" << dip << " div=" << div << " curl=" << curl
                 << " (relative to |B|/h)";
        o.check(quad <= 1e-6, "quadrature within 1e-6");
        o.check(dip <= 0.01, "dipole within 1% at 20x edge");
        o.check(div <= 1e-6 && curl <= 1e-6, "divergence and curl below 1e-6 |B|/h");
    });

    criterion(9, "fit suite", 10.0, [](Outcome& o) {
        using fitting::VectorXd;
        auto v = [](std::initializer_list<double> l) {
            VectorXd out(static_cast<Eigen::Index>(l.size()));
            Eigen::Index i = 0;
            for (double x : l) out[i++] = x;
            return out;
        };
        struct Case {
            fitting::Model m;
            VectorXd p;
            std::vector<double> x;
        };
        const std::vector<Case> cases{
            {fitting::lorentzian_model(), v({1.3e9, 2.1e8, 2.5, 0.1}), linspace(0.5e9, 2.1e9, 41)},
            {fitting::cpt_dip_model(), v({0.2e6, 3.3e6, 0.6, 1.0}), linspace(-6e6, 6e6, 41)},
            {fitting::exponential_model(fitting::ExpKind::decay, 1e-6), v({0.8, 70e-9, 0.4}), linspace(1e-6, 1.4e-6, 41)},
            {fitting::exponential_model(fitting::ExpKind::recovery), v({0.5, 630e-9, 1.0}), linspace(0.0, 4e-6, 41)},
            {fitting::saturation_model(), v({157e6, 2e-9}), linspace(0.0, 12.8e-9, 41)},
            {fitting::linear_model(), v({-2.4, 7.5}), linspace(-3.0, 5.0, 41)},
            {fitting::cpt_lambda_model(160e6), v({0.1e6, 3.3e6, 6e6, 1.2, 0.05}), linspace(-6e6, 6e6, 41)},
        };
        double worst = 0.0;
        for (const auto& c : cases)
            for (double x : c.x) worst = std::max(worst, oracle::gradient_mismatch(c.m, x, c.p));

        const double f0 = 406.7e12, q = 1000.0, kappa = f0 / q;
        Spectrum s;
        s.x = linspace(-3 * kappa, 3 * kappa, 201);
        std::mt19937_64 rng(2);
        std::normal_distribution<double> n(0.0, 0.005);
        for (double x : s.x) s.y.push_back(cqed::lorentzian(x, 0.0, kappa, 1.0, 0.05) + n(rng));
        const auto fit = fitting::fit_lorentzian(s);
        const double q_fit = cqed::q_factor(f0 + fit.value("center"), fit.value("fwhm"));
        o.detail << " jacobian=" << worst << " Q=" << q_fit;
        o.check(worst < 1e-6, "analytic Jacobians within 1e-6 of finite differences");
        o.check(std::abs(q_fit - q) <= 0.01 * q, "Q recovered within 1%");
    });

    criterion(10, "CLI determinism and validation", 120.0, [](Outcome& o) {
        const fs::path tmp = fs::temp_directory_path() / "sivcav_acceptance";
        fs::remove_all(tmp);
        const std::string cli = std::string("\"") + SIVCAV_CLI + "\"";
        std::vector<fs::path> cfgs, bad;
        for (const auto& e : fs::directory_iterator(source_dir / "configs"))
            if (e.path().extension() == ".cfg") cfgs.push_back(e.path());
        for (const auto& e : fs::directory_iterator(source_dir / "tests" / "data" / "malformed"))
            if (e.path().extension() == ".cfg") bad.push_back(e.path());
        std::sort(cfgs.begin(), cfgs.end());
        std::sort(bad.begin(), bad.end());

        std::size_t identical = 0;
        for (const auto& c : cfgs) {
            const auto a = shell(cli + " run " + quote(c) + " --out " + quote(tmp / "a") + " 2>/dev/null");
            const auto b = shell(cli + " run " + quote(c) + " --out " + quote(tmp / "b") + " 2>/dev/null");
            if (a.code != 0 || b.code != 0) {
                o.check(false, c.filename().string() + " ran");
                continue;
            }
            const fs::path da = a.out.substr(0, a.out.find('\n')), db = b.out.substr(0, b.out.find('\n'));
            bool same = da.filename() == db.filename();
            for (const char* f : {"data.csv", "fits.json"}) same = same && slurp(da / f) == slurp(db / f);
            o.check(same, c.filename().string() + " byte-identical");
            identical += same;
        }

        std::size_t caught = 0;
        for (const auto& p : bad) {
            std::ifstream in(p);
            std::string first;
            std::getline(in, first);
            const std::string field = first.substr(std::string("# expect: ").size());
            const auto r = shell(cli + " validate " + quote(p) + " 2>&1");
            const bool ok = r.code == 1 && r.out.find("error: " + field + ":") != std::string::npos;
            o.check(ok, p.filename().string() + " reports " + field);
            caught += ok;
        }
        fs::remove_all(tmp);
        o.detail << " configs identical " << identical << "/" << cfgs.size() << ", malformed caught " << caught << "/"
                 << bad.size();
        o.check(cfgs.size() >= 9, "every protocol has a shipped config");
        o.check(bad.size() >= 10, "at least 10 malformed configs");
    });

    return failures ? 1 : 0;
}
