#pragma once

// Damped least squares (Levenberg-Marquardt) with analytic model Jacobians,
// scaled covariance and linear-propagation confidence bands.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "sivcav/error.hpp"
#include "sivcav/spectrum.hpp"

namespace sivcav::fitting {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Parametric model y = f(x; p) with its gradient with respect to p.
struct Model {
    std::string name;
    std::vector<std::string> params;
    std::function<double(double, const VectorXd&)> value;
    std::function<void(double, const VectorXd&, Eigen::Ref<VectorXd>)> gradient;

    std::size_t size() const { return params.size(); }
};

struct Bounds {
    VectorXd lower;
    VectorXd upper;

    static Bounds unbounded(std::size_t n)
    {
        const double inf = std::numeric_limits<double>::infinity();
        return {VectorXd::Constant(static_cast<Eigen::Index>(n), -inf), VectorXd::Constant(static_cast<Eigen::Index>(n), inf)};
    }
};

struct FitOptions {
    int max_iterations = 200;
    double gradient_tolerance = 1e-10; // on the scaled gradient (cosine of J and r)
    double initial_damping = 1e-3;
    double damping_factor = 10.0;
};

class SingularJacobian : public NumericalError {
public:
    using NumericalError::NumericalError;
};

struct FitResult {
    Model model;
    VectorXd values;
    MatrixXd covariance;
    double residual_norm = 0.0;
    double initial_residual_norm = 0.0;
    bool converged = false;
    int n_iterations = 0;
    std::vector<std::string> flags; // e.g. "unidentifiable: fwhm"

    std::size_t index(const std::string& name) const
    {
        for (std::size_t i = 0; i < model.params.size(); ++i)
            if (model.params[i] == name) return i;
        throw InvalidParameter("fit result has no parameter '" + name + "'");
    }
    double value(const std::string& name) const { return values[static_cast<Eigen::Index>(index(name))]; }
    double sigma(const std::string& name) const
    {
        const auto i = static_cast<Eigen::Index>(index(name));
        return covariance.size() ? std::sqrt(std::max(0.0, covariance(i, i))) : std::numeric_limits<double>::quiet_NaN();
    }
    bool flagged() const { return !flags.empty(); }

    double evaluate(double x) const { return model.value(x, values); }

    /// Half-width of the n-sigma band of the model prediction at x.
    double band_halfwidth(double x, double n_sigma = 3.0) const
    {
        if (!covariance.size()) return std::numeric_limits<double>::quiet_NaN();
        VectorXd g(values.size());
        model.gradient(x, values, g);
        return n_sigma * std::sqrt(std::max(0.0, g.dot(covariance * g)));
    }
};

namespace detail {

inline void residuals(const Model& m, const Spectrum& s, const VectorXd& p, VectorXd& r)
{
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double w = s.sigma.empty() ? 1.0 : 1.0 / s.sigma[i];
        r[static_cast<Eigen::Index>(i)] = w * (m.value(s.x[i], p) - s.y[i]);
    }
}

inline void jacobian(const Model& m, const Spectrum& s, const VectorXd& p, MatrixXd& j)
{
    VectorXd g(p.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        m.gradient(s.x[i], p, g);
        const double w = s.sigma.empty() ? 1.0 : 1.0 / s.sigma[i];
        j.row(static_cast<Eigen::Index>(i)) = w * g.transpose();
    }
}

// Names of the parameters the Jacobian cannot resolve, or empty.
inline std::vector<std::string> unresolved(const Model& m, const MatrixXd& j)
{
    std::vector<std::string> out;
    VectorXd norms = j.colwise().norm();
    for (Eigen::Index k = 0; k < norms.size(); ++k)
        if (!(norms[k] > 0.0) || !std::isfinite(norms[k])) out.push_back(m.params[static_cast<std::size_t>(k)]);
    if (!out.empty()) return out;
    MatrixXd scaled = j * norms.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<MatrixXd> qr(scaled);
    qr.setThreshold(1e-11);
    if (qr.rank() < j.cols()) {
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < j.cols(); ++k) out.push_back(m.params[static_cast<std::size_t>(perm[k])]);
    }
    return out;
}

inline std::string join(const std::vector<std::string>& names)
{
    std::string s;
    for (const auto& n : names) s += (s.empty() ? "" : ", ") + n;
    return s;
}

inline double gradient_cosine(const MatrixXd& j, const VectorXd& r)
{
    const double rn = r.norm();
    if (rn == 0.0) return 0.0;
    const VectorXd g = j.transpose() * r;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < j.cols(); ++k) {
        const double cn = j.col(k).norm();
        if (cn > 0.0) worst = std::max(worst, std::abs(g[k]) / (cn * rn));
    }
    return worst;
}

} // namespace detail

/// Levenberg-Marquardt minimisation of the (sigma-weighted) residual norm.
/// Steps are clamped to the bounds. Throws SingularJacobian when a parameter
/// cannot be resolved by the data; returns converged = false with the best
/// point found when the iteration budget runs out.
inline FitResult lm_fit(const Model& model, const Spectrum& data, VectorXd initial, const Bounds& bounds,
                        const FitOptions& options = {})
{
    data.validate();
    const auto n = static_cast<Eigen::Index>(model.size());
    const auto m = static_cast<Eigen::Index>(data.size());
    require(initial.size() == n, "lm_fit: initial parameter count mismatch");
    require(bounds.lower.size() == n && bounds.upper.size() == n, "lm_fit: bounds size mismatch");
    require(m >= n + 1, "lm_fit: need at least one more data point than parameters");
    for (Eigen::Index k = 0; k < n; ++k) {
        require(std::isfinite(initial[k]), "lm_fit: non-finite initial value for " + model.params[static_cast<std::size_t>(k)]);
        require(initial[k] >= bounds.lower[k] && initial[k] <= bounds.upper[k],
                "lm_fit: initial value of " + model.params[static_cast<std::size_t>(k)] + " outside bounds");
    }

    FitResult res;
    res.model = model;
    VectorXd p = std::move(initial);
    VectorXd r(m), r_try(m);
    MatrixXd j(m, n);
    detail::residuals(model, data, p, r);
    if (!r.allFinite()) throw NumericalError("lm_fit: model not finite at the initial guess");
    double cost = r.squaredNorm();
    res.initial_residual_norm = std::sqrt(cost);
    // Residuals at round-off level of the data: nothing left to resolve.
    double data_norm = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        data_norm += std::pow(data.sigma.empty() ? data.y[i] : data.y[i] / data.sigma[i], 2);
    const double roundoff = 1e-26 * std::max(data_norm, std::numeric_limits<double>::min());

    double lambda = options.initial_damping;
    int it = 0;
    bool converged = false;
    for (; it < options.max_iterations; ++it) {
        detail::jacobian(model, data, p, j);
        if (const auto bad = detail::unresolved(model, j); !bad.empty())
            throw SingularJacobian("singular Jacobian in " + model.name + " fit; unresolved parameters: " + detail::join(bad));
        if (cost <= roundoff || detail::gradient_cosine(j, r) <= options.gradient_tolerance) {
            converged = true;
            break;
        }
        // Marquardt scaling: work in variables normalised by the Jacobian column
        // norms and solve the damped problem as an augmented least-squares system.
        const VectorXd scale = j.colwise().norm().cwiseInverse();
        const MatrixXd js = j * scale.asDiagonal();
        MatrixXd aug(m + n, n);
        VectorXd rhs = VectorXd::Zero(m + n);
        aug.topRows(m) = js;
        rhs.head(m) = -r;

        bool accepted = false;
        while (lambda < 1e16) {
            aug.bottomRows(n) = std::sqrt(lambda) * MatrixXd::Identity(n, n);
            const VectorXd step = scale.cwiseProduct(aug.colPivHouseholderQr().solve(rhs));
            VectorXd trial = (p + step).cwiseMax(bounds.lower).cwiseMin(bounds.upper);
            detail::residuals(model, data, trial, r_try);
            const double c_try = r_try.allFinite() ? r_try.squaredNorm() : std::numeric_limits<double>::infinity();
            if (c_try < cost) {
                p = std::move(trial);
                r.swap(r_try);
                cost = c_try;
                lambda = std::max(lambda / options.damping_factor, 1e-12);
                accepted = true;
                break;
            }
            lambda *= options.damping_factor;
        }
        if (!accepted) {
            // No descent direction left at machine precision: a minimum unless the
            // gradient is still clearly non-zero.
            converged = cost <= roundoff || detail::gradient_cosine(j, r) <= 1e-6;
            break;
        }
    }

    detail::jacobian(model, data, p, j);
    if (const auto bad = detail::unresolved(model, j); !bad.empty())
        throw SingularJacobian("singular Jacobian in " + model.name + " fit; unresolved parameters: " + detail::join(bad));
    if (!converged && it == options.max_iterations)
        converged = cost <= roundoff || detail::gradient_cosine(j, r) <= options.gradient_tolerance;

    res.values = p;
    res.residual_norm = std::sqrt(cost);
    res.converged = converged;
    res.n_iterations = it;
    const double dof = static_cast<double>(m - n);
    const VectorXd scale = j.colwise().norm().cwiseInverse();
    const MatrixXd js = j * scale.asDiagonal();
    const MatrixXd inv = (js.transpose() * js).ldlt().solve(MatrixXd::Identity(n, n));
    res.covariance = (cost / dof) * scale.asDiagonal() * inv * scale.asDiagonal();
    res.covariance = 0.5 * (res.covariance + res.covariance.transpose()).eval();
    return res;
}

// ---------------------------------------------------------------------------
// Models

inline Model lorentzian_model()
{
    Model m;
    m.name = "lorentzian";
    m.params = {"center", "fwhm", "amplitude", "offset"};
    m.value = [](double x, const VectorXd& p) {
        const double u = 2.0 * (x - p[0]) / p[1];
        return p[3] + p[2] / (1.0 + u * u);
    };
    m.gradient = [](double x, const VectorXd& p, Eigen::Ref<VectorXd> g) {
        const double u = 2.0 * (x - p[0]) / p[1];
        const double l = 1.0 / (1.0 + u * u);
        g[0] = p[2] * l * l * 4.0 * u / p[1];
        g[1] = p[2] * l * l * 2.0 * u * u / p[1];
        g[2] = l;
        g[3] = 1.0;
    };
    return m;
}

/// Inverted Lorentzian: background - depth / (1 + (2 (x - c) / w)^2).
inline Model cpt_dip_model()
{
    Model m;
    m.name = "cpt_dip";
    m.params = {"dip_center", "dip_fwhm", "depth", "background"};
    m.value = [](double x, const VectorXd& p) {
        const double u = 2.0 * (x - p[0]) / p[1];
        return p[3] - p[2] / (1.0 + u * u);
    };
    m.gradient = [](double x, const VectorXd& p, Eigen::Ref<VectorXd> g) {
        const double u = 2.0 * (x - p[0]) / p[1];
        const double l = 1.0 / (1.0 + u * u);
        g[0] = -p[2] * l * l * 4.0 * u / p[1];
        g[1] = -p[2] * l * l * 2.0 * u * u / p[1];
        g[2] = -l;
        g[3] = 1.0;
    };
    return m;
}

enum class ExpKind { decay, recovery };

/// decay: offset + amplitude e^{-(x-x0)/timescale};
/// recovery: offset - amplitude e^{-(x-x0)/timescale}.
inline Model exponential_model(ExpKind kind, double x0 = 0.0)
{
    Model m;
    m.name = kind == ExpKind::decay ? "exp_decay" : "exp_recovery";
    m.params = {"amplitude", "timescale", "offset"};
    const double s = kind == ExpKind::decay ? 1.0 : -1.0;
    m.value = [s, x0](double x, const VectorXd& p) { return p[2] + s * p[0] * std::exp(-(x - x0) / p[1]); };
    m.gradient = [s, x0](double x, const VectorXd& p, Eigen::Ref<VectorXd> g) {
        const double t = x - x0;
        const double e = std::exp(-t / p[1]);
        g[0] = s * e;
        g[1] = s * p[0] * e * t / (p[1] * p[1]);
        g[2] = 1.0;
    };
    return m;
}

/// gamma0 sqrt(1 + P / p_sat).
inline Model saturation_model()
{
    Model m;
    m.name = "saturation";
    m.params = {"gamma0", "p_sat"};
    m.value = [](double x, const VectorXd& p) { return p[0] * std::sqrt(1.0 + x / p[1]); };
    m.gradient = [](double x, const VectorXd& p, Eigen::Ref<VectorXd> g) {
        const double r = std::sqrt(1.0 + x / p[1]);
        g[0] = r;
        g[1] = -p[0] * x / (2.0 * r * p[1] * p[1]);
    };
    return m;
}

inline Model linear_model()
{
    Model m;
    m.name = "linear";
    m.params = {"slope", "intercept"};
    m.value = [](double x, const VectorXd& p) { return p[0] * x + p[1]; };
    m.gradient = [](double x, const VectorXd&, Eigen::Ref<VectorXd> g) {
        g[0] = x;
        g[1] = 1.0;
    };
    return m;
}

/// Weak-probe lambda lineshape with a resonant pump:
///   background + amplitude (G/2) Re[1 / ((G/2 - i d) + (W^2/4) / (gs/2 - i d))], d = x - center,
/// G the (fixed) optical linewidth, gs the ground dephasing, W the pump Rabi frequency.
inline Model cpt_lambda_model(double optical_linewidth)
{
    require(optical_linewidth > 0.0, "cpt_lambda: optical linewidth must be > 0");
    Model m;
    m.name = "cpt_lambda";
    m.params = {"two_photon_center", "ground_dephasing", "pump_rabi", "amplitude", "background"};
    using C = std::complex<double>;
    const double half = 0.5 * optical_linewidth;
    auto parts = [half](double x, const VectorXd& p) {
        const double d = x - p[0];
        const C a(half, -d), b(0.5 * p[1], -d);
        const double q = 0.25 * p[2] * p[2];
        return std::tuple<C, C, double>{a + q / b, b, q};
    };
    m.value = [half, parts](double x, const VectorXd& p) {
        const auto [den, b, q] = parts(x, p);
        return p[4] + p[3] * half * (1.0 / den).real();
    };
    m.gradient = [half, parts](double x, const VectorXd& p, Eigen::Ref<VectorXd> g) {
        const auto [den, b, q] = parts(x, p);
        const C inv2 = -1.0 / (den * den);
        const C i(0.0, 1.0);
        const C d_center = i - q * i / (b * b);
        const C d_gamma = -q * 0.5 / (b * b);
        const C d_rabi = 0.5 * p[2] / b;
        g[0] = p[3] * half * (inv2 * d_center).real();
        g[1] = p[3] * half * (inv2 * d_gamma).real();
        g[2] = p[3] * half * (inv2 * d_rabi).real();
        g[3] = half * (1.0 / den).real();
        g[4] = 1.0;
    };
    return m;
}

// ---------------------------------------------------------------------------
// Fitters with deterministic initial guesses

namespace detail {

inline double span(const Spectrum& s)
{
    const auto [lo, hi] = std::minmax_element(s.x.begin(), s.x.end());
    return *hi - *lo;
}

inline double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Full width at half height of the extremum at index k above/below `base`.
inline double half_width(const Spectrum& s, std::size_t k, double base)
{
    const double half = 0.5 * (s.y[k] + base);
    const bool peak = s.y[k] > base;
    auto beyond = [&](std::size_t i) { return peak ? s.y[i] <= half : s.y[i] >= half; };
    auto cross = [&](std::size_t inner, std::size_t outer) {
        const double t = (half - s.y[inner]) / (s.y[outer] - s.y[inner]);
        return s.x[inner] + t * (s.x[outer] - s.x[inner]);
    };
    std::size_t l = k, r = k;
    while (l > 0 && !beyond(l - 1)) --l;
    while (r + 1 < s.size() && !beyond(r + 1)) ++r;
    const double xl = l > 0 ? cross(l, l - 1) : s.x.front();
    const double xr = r + 1 < s.size() ? cross(r, r + 1) : s.x.back();
    const double w = std::abs(xr - xl);
    return w > 0.0 ? w : span(s) / static_cast<double>(s.size());
}

inline FitResult unidentified(const Model& m, VectorXd guess, const Spectrum& s, std::string why)
{
    FitResult res;
    res.model = m;
    res.values = std::move(guess);
    VectorXd r(static_cast<Eigen::Index>(s.size()));
    residuals(m, s, res.values, r);
    res.residual_norm = res.initial_residual_norm = r.norm();
    res.converged = false;
    res.flags.push_back(std::move(why));
    return res;
}

inline FitResult guarded_fit(const Model& m, const Spectrum& s, const VectorXd& guess, const Bounds& b,
                             const FitOptions& o)
{
    try {
        return lm_fit(m, s, guess, b, o);
    } catch (const SingularJacobian& e) {
        return unidentified(m, guess, s, std::string("unidentifiable: ") + e.what());
    }
}

// Line-shape fits: flag amplitudes indistinguishable from zero.
inline void flag_amplitude(FitResult& r, const std::string& amp, const std::string& width)
{
    if (r.flagged()) return;
    const double a = r.value(amp), sa = r.sigma(amp);
    if (!(std::abs(a) > 3.0 * sa)) r.flags.push_back("amplitude consistent with zero; " + width + " unidentifiable");
}

} // namespace detail

inline FitResult fit_lorentzian(const Spectrum& s, const FitOptions& o = {})
{
    s.validate();
    require(s.size() >= 5, "fit_lorentzian: need at least 5 points");
    const Model m = lorentzian_model();
    const double base = detail::median(s.y);
    const auto [lo, hi] = std::minmax_element(s.y.begin(), s.y.end());
    const bool peak = (*hi - base) >= (base - *lo);
    const std::size_t k = static_cast<std::size_t>((peak ? hi : lo) - s.y.begin());
    const double offset = peak ? *lo : *hi;
    VectorXd guess(4);
    guess << s.x[k], detail::half_width(s, k, offset), s.y[k] - offset, offset;
    const double w = detail::span(s);
    Bounds b = Bounds::unbounded(4);
    const auto [xmin, xmax] = std::minmax_element(s.x.begin(), s.x.end());
    b.lower[0] = *xmin - w;
    b.upper[0] = *xmax + w;
    b.lower[1] = 1e-9 * w;
    b.upper[1] = 100.0 * w;
    FitResult r = detail::guarded_fit(m, s, guess, b, o);
    detail::flag_amplitude(r, "amplitude", "fwhm");
    return r;
}

inline FitResult fit_cpt_dip(const Spectrum& s, const FitOptions& o = {})
{
    s.validate();
    require(s.size() >= 5, "fit_cpt_dip: need at least 5 points");
    const Model m = cpt_dip_model();
    const auto [lo, hi] = std::minmax_element(s.y.begin(), s.y.end());
    const std::size_t k = static_cast<std::size_t>(lo - s.y.begin());
    VectorXd guess(4);
    guess << s.x[k], detail::half_width(s, k, *hi), *hi - *lo, *hi;
    const double w = detail::span(s);
    Bounds b = Bounds::unbounded(4);
    const auto [xmin, xmax] = std::minmax_element(s.x.begin(), s.x.end());
    b.lower[0] = *xmin - w;
    b.upper[0] = *xmax + w;
    b.lower[1] = 1e-9 * w;
    b.upper[1] = 100.0 * w;
    FitResult r = detail::guarded_fit(m, s, guess, b, o);
    detail::flag_amplitude(r, "depth", "dip_fwhm");
    return r;
}

/// Fits the exponential of the given kind with t referenced to the first sample.
inline FitResult fit_exponential(const Spectrum& s, ExpKind kind, const FitOptions& o = {})
{
    s.validate();
    require(s.size() >= 4, "fit_exponential: need at least 4 points");
    require(s.x[1] > s.x[0], "fit_exponential: x must increase");
    const Model m = exponential_model(kind, s.x.front());
    const std::size_t n = s.size();
    const std::size_t tail = std::max<std::size_t>(1, n / 10);
    double offset = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) offset += s.y[i];
    offset /= static_cast<double>(tail);
    const double sgn = kind == ExpKind::decay ? 1.0 : -1.0;
    const double amp = sgn * (s.y.front() - offset);
    double tau = detail::span(s) / 3.0;
    const double target = std::abs(s.y.front() - offset) / std::exp(1.0);
    for (std::size_t i = 1; i < n; ++i)
        if (std::abs(s.y[i] - offset) <= target) {
            tau = std::max(s.x[i] - s.x.front(), detail::span(s) / static_cast<double>(n));
            break;
        }
    VectorXd guess(3);
    guess << amp, tau, offset;
    Bounds b = Bounds::unbounded(3);
    b.lower[1] = 1e-6 * detail::span(s) / static_cast<double>(n);
    b.upper[1] = 1e3 * detail::span(s);
    FitResult r = detail::guarded_fit(m, s, guess, b, o);
    detail::flag_amplitude(r, "amplitude", "timescale");
    return r;
}

/// Linewidth versus power. Initial guess from the straight line gamma^2 = g0^2 + (g0^2/p_sat) P.
inline FitResult fit_saturation(const Spectrum& s, const FitOptions& o = {})
{
    s.validate();
    std::vector<double> distinct = s.x;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw DomainError("fit_saturation: unidentifiable from a single power point");
    require(s.size() >= 3, "fit_saturation: need at least 3 points");
    for (double p : s.x) require(p >= 0.0, "fit_saturation: powers must be >= 0");
    for (double y : s.y) require(y > 0.0, "fit_saturation: linewidths must be > 0");

    // Ordinary least squares on the squared linewidths.
    const double n = static_cast<double>(s.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double y2 = s.y[i] * s.y[i];
        sx += s.x[i];
        sy += y2;
        sxx += s.x[i] * s.x[i];
        sxy += s.x[i] * y2;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icpt = (sy - slope * sx) / n;
    VectorXd guess(2);
    if (icpt > 0.0 && slope > 0.0)
        guess << std::sqrt(icpt), icpt / slope;
    else
        guess << *std::min_element(s.y.begin(), s.y.end()), std::max(detail::median(s.x), distinct[1]);

    Bounds b = Bounds::unbounded(2);
    b.lower[0] = 0.0;
    b.lower[1] = 1e-12 * distinct.back();
    b.upper[1] = std::numeric_limits<double>::infinity();
    return detail::guarded_fit(saturation_model(), s, guess, b, o);
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const FitResult& r)
{
    nlohmann::json params = nlohmann::json::object();
    for (std::size_t i = 0; i < r.model.params.size(); ++i) {
        const auto& name = r.model.params[i];
        const double s = r.sigma(name);
        params[name] = {{"value", r.values[static_cast<Eigen::Index>(i)]},
                        {"sigma", std::isfinite(s) ? nlohmann::json(s) : nlohmann::json(nullptr)}};
    }
    nlohmann::json j = {{"model", r.model.name},
                        {"params", params},
                        {"residual_norm", r.residual_norm},
                        {"converged", r.converged},
                        {"n_iterations", r.n_iterations}};
    if (!r.flags.empty()) j["flags"] = r.flags;
    return j;
}

} // namespace sivcav::fitting
