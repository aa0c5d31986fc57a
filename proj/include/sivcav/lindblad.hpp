#pragma once

// Driven-dissipative few-level systems: Lindblad master equation in a
// rotating frame, adaptive Dormand-Prince integration and steady states.
//
// Conventions. Every rate is given in Hz as the linewidth (FWHM) it
// produces: a decay of rate G empties its level as exp(-2 pi G t), a pair
// dephasing of rate g adds pi g to the decay of that coherence. Rabi
// frequencies are in Hz (H_lu = Omega/2). The superoperator acts on the
// column-stacked density matrix in angular units (rad/s).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sivcav/constants.hpp"
#include "sivcav/error.hpp"

namespace sivcav::dynamics {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

struct Level {
    std::string label;
    double energy = 0.0; // Hz
};

struct Drive {
    std::size_t lower = 0;
    std::size_t upper = 1;
    double rabi = 0.0;     // Hz
    double detuning = 0.0; // laser minus transition frequency, Hz
};

struct Decay {
    std::size_t from = 1;
    std::size_t to = 0;
    double rate = 0.0; // Hz
    bool radiative = true;
};

struct Dephasing {
    std::size_t a = 0;
    std::size_t b = 1;
    double rate = 0.0; // Hz, coherence linewidth contribution
};

/// Raised when the steady state is not unique.
class DegenerateSteadyState : public NumericalError {
public:
    DegenerateSteadyState(std::size_t multiplicity)
        : NumericalError("steady_state: null space of the Liouvillian has dimension " + std::to_string(multiplicity)),
          multiplicity_(multiplicity)
    {
    }
    std::size_t multiplicity() const { return multiplicity_; }

private:
    std::size_t multiplicity_;
};

class LevelSystem {
public:
    LevelSystem(std::vector<Level> levels, std::vector<Drive> drives, std::vector<Decay> decays,
                std::vector<Dephasing> dephasings = {})
        : levels_(std::move(levels)), drives_(std::move(drives)), decays_(std::move(decays)),
          dephasings_(std::move(dephasings))
    {
        validate();
        rotating_energies_ = solve_frame();
    }

    std::size_t size() const { return levels_.size(); }
    const std::vector<Level>& levels() const { return levels_; }
    const std::vector<Drive>& drives() const { return drives_; }
    const std::vector<Decay>& decays() const { return decays_; }
    const std::vector<Dephasing>& dephasings() const { return dephasings_; }

    /// Level energies in the rotating frame (Hz). Each drive-connected
    /// component is referenced to its lowest-index level.
    const std::vector<double>& rotating_energies() const { return rotating_energies_; }

    /// Same system with every Rabi frequency multiplied by `factor`; the
    /// rotating frame is unchanged, so states carry over between the two.
    LevelSystem with_drive_scale(double factor) const
    {
        auto drives = drives_;
        for (auto& d : drives) d.rabi *= factor;
        return LevelSystem(levels_, std::move(drives), decays_, dephasings_);
    }

    std::size_t index_of(const std::string& label) const
    {
        for (std::size_t i = 0; i < levels_.size(); ++i)
            if (levels_[i].label == label) return i;
        throw InvalidParameter("unknown level '" + label + "'");
    }

    /// Rotating-frame Hamiltonian in Hz.
    Matrix hamiltonian() const
    {
        const auto n = static_cast<Eigen::Index>(size());
        Matrix h = Matrix::Zero(n, n);
        for (Eigen::Index k = 0; k < n; ++k) h(k, k) = rotating_energies_[static_cast<std::size_t>(k)];
        for (const auto& d : drives_) {
            const auto l = static_cast<Eigen::Index>(d.lower);
            const auto u = static_cast<Eigen::Index>(d.upper);
            h(l, u) += 0.5 * d.rabi;
            h(u, l) += 0.5 * d.rabi;
        }
        return h;
    }

private:
    void validate() const
    {
        const std::size_t n = levels_.size();
        require(n >= 1, "level system needs at least one level");
        for (const auto& l : levels_) require(std::isfinite(l.energy), "level '" + l.label + "' energy must be finite");
        for (const auto& d : drives_) {
            require(d.lower < n && d.upper < n, "drive endpoint out of range");
            require(d.lower != d.upper, "drive endpoints must be distinct");
            require(std::isfinite(d.rabi) && d.rabi >= 0.0, "drive rabi must be >= 0");
            require(std::isfinite(d.detuning), "drive detuning must be finite");
        }
        for (const auto& d : decays_) {
            require(d.from < n && d.to < n, "decay endpoint out of range");
            require(d.from != d.to, "decay from and to must differ");
            require(std::isfinite(d.rate) && d.rate >= 0.0, "decay rate must be >= 0");
        }
        for (const auto& d : dephasings_) {
            require(d.a < n && d.b < n, "dephasing endpoint out of range");
            require(d.a != d.b, "dephasing pair must be distinct");
            require(std::isfinite(d.rate) && d.rate >= 0.0, "dephasing rate must be >= 0");
        }
    }

    // Tree edges fix the frame: r_upper = r_lower - detuning. Remaining edges
    // must agree, otherwise no time-independent rotating frame exists.
    std::vector<double> solve_frame() const
    {
        const std::size_t n = levels_.size();
        std::vector<std::vector<std::pair<std::size_t, double>>> adjacency(n); // (neighbour, r_nb - r_self)
        for (const auto& d : drives_) {
            adjacency[d.lower].push_back({d.upper, -d.detuning});
            adjacency[d.upper].push_back({d.lower, d.detuning});
        }
        std::vector<double> r(n, 0.0);
        std::vector<bool> seen(n, false);
        for (std::size_t root = 0; root < n; ++root) {
            if (seen[root]) continue;
            seen[root] = true;
            std::queue<std::size_t> queue;
            queue.push(root);
            while (!queue.empty()) {
                const std::size_t k = queue.front();
                queue.pop();
                for (const auto& [nb, shift] : adjacency[k]) {
                    if (seen[nb]) continue;
                    seen[nb] = true;
                    r[nb] = r[k] + shift;
                    queue.push(nb);
                }
            }
        }
        double scale = 0.0;
        for (const auto& d : drives_) scale = std::max(scale, std::abs(d.detuning));
        for (const auto& l : levels_) scale = std::max(scale, std::abs(l.energy));
        const double tol = 1e-6 + 1e-12 * scale;
        for (const auto& d : drives_) {
            const double mismatch = r[d.upper] - (r[d.lower] - d.detuning);
            if (std::abs(mismatch) > tol)
                throw InvalidParameter("drives admit no rotating frame: loop through levels '" + levels_[d.lower].label +
                                       "' and '" + levels_[d.upper].label + "' has inconsistent laser frequencies");
        }
        return r;
    }

    std::vector<Level> levels_;
    std::vector<Drive> drives_;
    std::vector<Decay> decays_;
    std::vector<Dephasing> dephasings_;
    std::vector<double> rotating_energies_;
};

class DensityState {
public:
    static constexpr double hermiticity_tol = 1e-10;
    static constexpr double trace_tol = 1e-9;
    static constexpr double positivity_tol = -1e-9;

    explicit DensityState(Matrix rho) : rho_(std::move(rho))
    {
        require(rho_.rows() == rho_.cols() && rho_.rows() > 0, "density matrix must be square");
        require(rho_.allFinite(), "density matrix must be finite");
        require((rho_ - rho_.adjoint()).cwiseAbs().maxCoeff() <= hermiticity_tol, "density matrix must be Hermitian");
        require(std::abs(rho_.trace() - Complex(1.0)) <= trace_tol, "density matrix must have unit trace");
        require(min_eigenvalue() >= positivity_tol, "density matrix must be positive semidefinite");
    }

    static DensityState pure(std::size_t n, std::size_t level)
    {
        Matrix rho = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        rho(static_cast<Eigen::Index>(level), static_cast<Eigen::Index>(level)) = 1.0;
        return DensityState(std::move(rho));
    }

    static DensityState diagonal(const std::vector<double>& populations)
    {
        const auto n = static_cast<Eigen::Index>(populations.size());
        Matrix rho = Matrix::Zero(n, n);
        for (Eigen::Index k = 0; k < n; ++k) rho(k, k) = populations[static_cast<std::size_t>(k)];
        return DensityState(std::move(rho));
    }

    const Matrix& matrix() const { return rho_; }
    std::size_t size() const { return static_cast<std::size_t>(rho_.rows()); }
    double population(std::size_t k) const
    {
        return rho_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)).real();
    }

    double min_eigenvalue() const
    {
        const Matrix h = 0.5 * (rho_ + rho_.adjoint());
        Eigen::SelfAdjointEigenSolver<Matrix> solver(h, Eigen::EigenvaluesOnly);
        return solver.eigenvalues().minCoeff();
    }

private:
    Matrix rho_;
};

inline Vector vectorize(const Matrix& rho) { return Eigen::Map<const Vector>(rho.data(), rho.size()); }

inline Matrix unvectorize(const Vector& v, std::size_t n)
{
    const auto m = static_cast<Eigen::Index>(n);
    return Eigen::Map<const Matrix>(v.data(), m, m);
}

namespace detail {

inline Matrix kron(const Matrix& a, const Matrix& b)
{
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

// D[c] rho = c rho c^+ - {c^+ c, rho}/2 on column-stacked rho.
inline Matrix dissipator(const Matrix& c)
{
    const Matrix id = Matrix::Identity(c.rows(), c.cols());
    const Matrix cdc = c.adjoint() * c;
    return kron(c.conjugate(), c) - 0.5 * kron(id, cdc) - 0.5 * kron(cdc.transpose(), id);
}

} // namespace detail

inline Matrix build_liouvillian(const LevelSystem& sys)
{
    using constants::pi;
    using constants::two_pi;
    const auto n = static_cast<Eigen::Index>(sys.size());
    const Matrix id = Matrix::Identity(n, n);
    const Matrix h = two_pi * sys.hamiltonian();
    const Complex i(0.0, 1.0);
    Matrix l = -i * (detail::kron(id, h) - detail::kron(h.transpose(), id));

    for (const auto& d : sys.decays()) {
        if (d.rate == 0.0) continue;
        Matrix c = Matrix::Zero(n, n);
        c(static_cast<Eigen::Index>(d.to), static_cast<Eigen::Index>(d.from)) = std::sqrt(two_pi * d.rate);
        l += detail::dissipator(c);
    }
    for (const auto& d : sys.dephasings()) {
        if (d.rate == 0.0) continue;
        Matrix c = Matrix::Zero(n, n);
        const double amp = std::sqrt(0.5 * pi * d.rate);
        c(static_cast<Eigen::Index>(d.a), static_cast<Eigen::Index>(d.a)) = amp;
        c(static_cast<Eigen::Index>(d.b), static_cast<Eigen::Index>(d.b)) = -amp;
        l += detail::dissipator(c);
    }
    return l;
}

struct Trace {
    std::vector<double> times;                    // s
    std::vector<double> signal;                   // sum of radiative rate x upper population, Hz
    std::vector<std::vector<double>> populations; // [time][level]
    std::optional<Matrix> final_state;
};

/// Fluorescence observable: sum over radiative decays of rate x population of the emitting level.
inline double fluorescence(const LevelSystem& sys, const Matrix& rho)
{
    double s = 0.0;
    for (const auto& d : sys.decays())
        if (d.radiative) s += d.rate * rho(static_cast<Eigen::Index>(d.from), static_cast<Eigen::Index>(d.from)).real();
    return std::max(s, 0.0);
}

struct IntegratorOptions {
    double rtol = 1e-8;
    double atol = 1e-12;
    std::size_t max_steps = 50'000'000;
};

namespace detail {

// Dormand-Prince 5(4) on y' = L y between output times.
class DormandPrince {
public:
    DormandPrince(const Matrix& l, IntegratorOptions opt) : l_(l), opt_(opt) {}

    void advance(Vector& y, double t0, double t1, double& h)
    {
        static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
        static constexpr double a21 = 1.0 / 5;
        static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
        static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
        static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
        static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                                a65 = -5103.0 / 18656;
        static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                                b6 = 11.0 / 84;
        static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                                e6 = 22.0 / 525, e7 = -1.0 / 40;
        (void)c2; (void)c3; (void)c4; (void)c5;

        double t = t0;
        if (t1 <= t0) return;
        if (!(h > 0.0)) h = initial_step(y, t1 - t0);
        Vector k1 = l_ * y;
        while (t < t1) {
            if (++steps_ > opt_.max_steps) throw NumericalError("evolve: maximum number of integration steps exceeded");
            bool last = false;
            double step = h;
            if (t + step >= t1) {
                step = t1 - t;
                last = true;
            }
            const Vector k2 = l_ * (y + step * a21 * k1);
            const Vector k3 = l_ * (y + step * (a31 * k1 + a32 * k2));
            const Vector k4 = l_ * (y + step * (a41 * k1 + a42 * k2 + a43 * k3));
            const Vector k5 = l_ * (y + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
            const Vector k6 = l_ * (y + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
            const Vector y_new = y + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
            const Vector k7 = l_ * y_new;
            const Vector err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

            double norm = 0.0;
            for (Eigen::Index i = 0; i < y.size(); ++i) {
                const double scale = opt_.atol + opt_.rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
                norm = std::max(norm, std::abs(err[i]) / scale);
            }
            if (!std::isfinite(norm)) throw NumericalError("evolve: non-finite state during integration");

            if (norm <= 1.0) {
                t = last ? t1 : t + step;
                y = y_new;
                k1 = k7;
                const double factor = norm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(norm, -0.2), 0.2, 5.0);
                // Keep the proposal from a shortened final step.
                if (!last) h = step * factor;
                else h = std::max(h, step * factor);
            } else {
                h = step * std::max(0.2, 0.9 * std::pow(norm, -0.2));
                if (h < 1e-15 * std::max(std::abs(t), std::abs(t1)) || h < std::numeric_limits<double>::min())
                    throw NumericalError("evolve: step size underflow, tolerance cannot be met");
            }
        }
    }

private:
    double initial_step(const Vector& y, double span) const
    {
        const double rate = l_.cwiseAbs().rowwise().sum().maxCoeff();
        (void)y;
        if (rate == 0.0) return span;
        return std::min(span, 0.01 / rate);
    }

    const Matrix& l_;
    IntegratorOptions opt_;
    std::size_t steps_ = 0;
};

inline void record(Trace& trace, const LevelSystem& sys, double t, const Matrix& rho)
{
    trace.times.push_back(t);
    trace.signal.push_back(fluorescence(sys, rho));
    std::vector<double> pops(sys.size());
    for (std::size_t k = 0; k < sys.size(); ++k)
        pops[k] = rho(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)).real();
    trace.populations.push_back(std::move(pops));
}

} // namespace detail

/// Propagates rho0 from t = 0 and samples at `times` (non-negative, strictly increasing).
inline Trace evolve(const LevelSystem& sys, const DensityState& rho0, const std::vector<double>& times,
                    IntegratorOptions options = {})
{
    require(rho0.size() == sys.size(), "evolve: state dimension does not match the level system");
    require(!times.empty(), "evolve: no output times");
    for (std::size_t i = 0; i < times.size(); ++i) {
        require(std::isfinite(times[i]) && times[i] >= 0.0, "evolve: output times must be finite and >= 0");
        if (i > 0) require(times[i] > times[i - 1], "evolve: output times must be strictly increasing");
    }

    const Matrix l = build_liouvillian(sys);
    detail::DormandPrince stepper(l, options);
    Vector y = vectorize(rho0.matrix());
    double t = 0.0;
    double h = 0.0;
    Trace trace;
    for (const double target : times) {
        stepper.advance(y, t, target, h);
        t = target;
        detail::record(trace, sys, t, unvectorize(y, sys.size()));
    }
    trace.final_state = unvectorize(y, sys.size());
    return trace;
}

/// Total positive rate scale of the system (Hz); used for timescale estimates.
inline double slowest_rate(const LevelSystem& sys)
{
    double slow = std::numeric_limits<double>::infinity();
    for (const auto& d : sys.decays())
        if (d.rate > 0.0) slow = std::min(slow, d.rate);
    for (const auto& d : sys.dephasings())
        if (d.rate > 0.0) slow = std::min(slow, d.rate);
    return slow;
}

inline DensityState steady_state(const LevelSystem& sys)
{
    const std::size_t n = sys.size();
    const Matrix l = build_liouvillian(sys);
    const Eigen::Index dim = l.rows();

    Eigen::FullPivLU<Matrix> rank_probe(l);
    rank_probe.setThreshold(1e-11);
    const auto kernel = static_cast<std::size_t>(dim - rank_probe.rank());
    if (kernel != 1) throw DegenerateSteadyState(kernel);

    // Replace the rho_00 row by the trace condition.
    Matrix a = l;
    Vector rhs = Vector::Zero(dim);
    a.row(0).setZero();
    for (std::size_t k = 0; k < n; ++k) a(0, static_cast<Eigen::Index>(k * n + k)) = 1.0;
    rhs(0) = 1.0;

    Eigen::PartialPivLU<Matrix> lu(a);
    Matrix rho;
    if (lu.rcond() > 1e-12) {
        rho = unvectorize(lu.solve(rhs), n);
    } else {
        // Poorly conditioned: integrate from the maximally mixed state instead.
        const double slow = slowest_rate(sys);
        if (!std::isfinite(slow)) throw NumericalError("steady_state: ill-conditioned system without dissipation");
        const double horizon = 50.0 / (constants::two_pi * slow);
        Matrix mixed = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) / double(n);
        const Trace tr = evolve(sys, DensityState(mixed), {horizon});
        rho = *tr.final_state;
    }
    rho = 0.5 * (rho + rho.adjoint());
    rho /= rho.trace().real();
    return DensityState(std::move(rho));
}

} // namespace sivcav::dynamics
