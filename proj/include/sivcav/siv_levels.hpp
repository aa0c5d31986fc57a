#pragma once

// Spin-orbit level structure of the negatively charged silicon-vacancy center.
//
// Each manifold (ground, excited) is a 4x4 problem in the basis
//   { |e+ up>, |e+ down>, |e- up>, |e- down> }
// where e+/e- are the orbital eigenstates of L_z (eigenvalue +1/-1) and the
// spin is quantised along the symmetry axis z. All energies are ordinary
// frequencies in Hz.

#include <array>
#include <cmath>
#include <complex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "sivcav/constants.hpp"
#include "sivcav/error.hpp"
#include "sivcav/format.hpp"

namespace sivcav::siv {

using Vec3 = Eigen::Vector3d;
using Complex = std::complex<double>;
using Matrix4c = Eigen::Matrix<Complex, 4, 4>;
using Vector4c = Eigen::Matrix<Complex, 4, 1>;

struct ManifoldParams {
    double lambda_so = 0.0;    // spin-orbit coupling, Hz
    double strain_alpha = 0.0; // Hz
    double strain_beta = 0.0;  // Hz
    double quench_f = 0.1;     // orbital Zeeman reduction factor
    double g_spin = 2.0;

    void validate(std::string_view name) const
    {
        const std::string n(name);
        require(std::isfinite(lambda_so) && lambda_so > 0.0, n + ".lambda_so must be finite and > 0");
        require(std::isfinite(strain_alpha), n + ".strain_alpha must be finite");
        require(std::isfinite(strain_beta), n + ".strain_beta must be finite");
        require(std::isfinite(quench_f) && quench_f >= 0.0 && quench_f <= 1.0,
                n + ".quench_f must lie in [0, 1]");
        require(std::isfinite(g_spin) && g_spin > 0.0, n + ".g_spin must be finite and > 0");
    }
};

/// Calibration defaults for the ground manifold (no strain).
inline ManifoldParams default_ground() { return {46e9, 0.0, 0.0, 0.1, 2.0}; }
/// Calibration defaults for the excited manifold (no strain).
inline ManifoldParams default_excited() { return {255e9, 0.0, 0.0, 0.1, 2.0}; }

struct SivModel {
    ManifoldParams ground = default_ground();
    ManifoldParams excited = default_excited();
    double zpl_center = 406.7e12; // Hz
    Vec3 b_field = Vec3::Zero();  // tesla, SiV frame (z = symmetry axis)

    void validate() const
    {
        ground.validate("ground");
        excited.validate("excited");
        require(std::isfinite(zpl_center) && zpl_center > 0.0, "zpl_center must be finite and > 0");
        require(b_field.allFinite(), "b_field must be finite");
    }
};

namespace detail {

inline Matrix4c orbital_kron(const Eigen::Matrix2cd& orbital, const Eigen::Matrix2cd& spin)
{
    Matrix4c out;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            out.block<2, 2>(2 * a, 2 * b) = orbital(a, b) * spin;
    return out;
}

inline Eigen::Matrix2cd pauli(int which)
{
    using namespace std::complex_literals;
    Eigen::Matrix2cd m;
    switch (which) {
    case 0: m << 1.0, 0.0, 0.0, 1.0; break;
    case 1: m << 0.0, 1.0, 1.0, 0.0; break;
    case 2: m << 0.0, -1.0i, 1.0i, 0.0; break;
    default: m << 1.0, 0.0, 0.0, -1.0; break;
    }
    return m;
}

} // namespace detail

/// Spin operator S_k (k = 0,1,2 for x,y,z) on the 4-dim manifold space, in units of hbar.
inline Matrix4c spin_operator(int k) { return detail::orbital_kron(detail::pauli(0), 0.5 * detail::pauli(k + 1)); }

/// Orbital L_z, eigenvalue +1 on e+ and -1 on e-.
inline Matrix4c orbital_lz() { return detail::orbital_kron(detail::pauli(3), detail::pauli(0)); }

/// Spin-conserving electric-dipole operators, one per polarisation (z, x, y).
/// z keeps the orbital branch (e+ -> e+), x and y swap it.
inline std::array<Matrix4c, 3> dipole_operators()
{
    return {detail::orbital_kron(detail::pauli(0), detail::pauli(0)),
            detail::orbital_kron(detail::pauli(1), detail::pauli(0)),
            detail::orbital_kron(detail::pauli(2), detail::pauli(0))};
}

/// H = -lambda L_z S_z + strain + f mu_B L_z B_z + g mu_B S.B, in Hz.
inline Matrix4c build_hamiltonian(const ManifoldParams& m, const Vec3& b_field)
{
    const bool finite = std::isfinite(m.lambda_so) && std::isfinite(m.strain_alpha) &&
                        std::isfinite(m.strain_beta) && std::isfinite(m.quench_f) && std::isfinite(m.g_spin) &&
                        b_field.allFinite();
    if (!finite) throw InvalidParameter("build_hamiltonian: non-finite input");

    const double mu_b = constants::bohr_magneton_hz_per_t;
    const Matrix4c lz = orbital_lz();
    Matrix4c h = -m.lambda_so * lz * spin_operator(2);

    Eigen::Matrix2cd strain;
    strain << 0.0, Complex(m.strain_alpha, m.strain_beta), Complex(m.strain_alpha, -m.strain_beta), 0.0;
    h += detail::orbital_kron(strain, detail::pauli(0));

    h += m.quench_f * mu_b * b_field.z() * lz;
    for (int k = 0; k < 3; ++k)
        h += m.g_spin * mu_b * b_field[k] * spin_operator(k);
    return h;
}

/// Sorted eigensystem of one manifold. Index 0/1 form the lower orbital branch
/// (down, up), 2/3 the upper branch (down, up). Within a branch "down" is the
/// lower-energy sublevel; a degenerate doublet is rotated onto S_z eigenstates
/// and ordered by ascending <S_z>.
struct ManifoldEigensystem {
    std::array<double, 4> energies{};
    Matrix4c vectors; // columns
    std::array<bool, 2> degenerate{};

    double centroid(int branch) const { return 0.5 * (energies[2 * branch] + energies[2 * branch + 1]); }
    double splitting(int branch) const { return energies[2 * branch + 1] - energies[2 * branch]; }
    Vector4c state(int index) const { return vectors.col(index); }
};

inline ManifoldEigensystem diagonalize(const ManifoldParams& m, const Vec3& b_field)
{
    const Matrix4c h = build_hamiltonian(m, b_field);
    Eigen::SelfAdjointEigenSolver<Matrix4c> solver(h);
    if (solver.info() != Eigen::Success) throw NumericalError("diagonalize: eigen solver failed");

    ManifoldEigensystem out;
    out.vectors = solver.eigenvectors();
    for (int i = 0; i < 4; ++i) out.energies[i] = solver.eigenvalues()[i];

    const double scale = h.cwiseAbs().maxCoeff();
    const double tol = 1e-12 * scale + 1e-9;
    const Matrix4c sz = spin_operator(2);
    for (int branch = 0; branch < 2; ++branch) {
        const int i0 = 2 * branch;
        if (std::abs(out.energies[i0 + 1] - out.energies[i0]) > tol) continue;
        out.degenerate[branch] = true;
        Eigen::Matrix<Complex, 4, 2> sub = out.vectors.block<4, 2>(0, i0);
        const Eigen::Matrix2cd projected = sub.adjoint() * sz * sub;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> sz_solver(projected);
        out.vectors.block<4, 2>(0, i0) = sub * sz_solver.eigenvectors();
        const double mean = 0.5 * (out.energies[i0] + out.energies[i0 + 1]);
        out.energies[i0] = mean;
        out.energies[i0 + 1] = mean;
    }
    // Fix the global phase of each eigenvector (largest component real positive).
    for (int c = 0; c < 4; ++c) {
        Eigen::Index k = 0;
        out.vectors.col(c).cwiseAbs().maxCoeff(&k);
        const Complex phase = out.vectors(k, c) / std::abs(out.vectors(k, c));
        out.vectors.col(c) /= phase;
    }
    return out;
}

enum class SpinCharacter { preserving, flipping, mixed, undefined };

inline std::string_view to_string(SpinCharacter c)
{
    switch (c) {
    case SpinCharacter::preserving: return "preserving";
    case SpinCharacter::flipping: return "flipping";
    case SpinCharacter::mixed: return "mixed";
    default: return "undefined";
    }
}

struct OpticalLine {
    char label = 'A';
    double frequency = 0.0;
};

struct SublevelTransition {
    int label = 1;     // 1..4
    char parent = 'A'; // A..D
    double frequency = 0.0;
    double dipole_weight = 0.0;
    SpinCharacter spin_character = SpinCharacter::undefined;
    double spin_overlap = 0.0;
    int ground_index = 0;  // eigenstate index in the ground manifold
    int excited_index = 0; // eigenstate index in the excited manifold
};

struct TransitionTable {
    std::array<OpticalLine, 4> optical{};
    std::vector<SublevelTransition> sublevel; // grouped by parent A..D, labels 1..4
    double delta_gs = 0.0;
    double delta_es = 0.0;
    double f_s_ground = 0.0;  // lower ground branch
    double f_s_excited = 0.0; // lower excited branch
    bool spin_degenerate = false;

    const SublevelTransition& find(char parent, int label) const
    {
        for (const auto& t : sublevel)
            if (t.parent == parent && t.label == label) return t;
        throw InvalidParameter(std::string("no transition ") + parent + std::to_string(label));
    }

    const OpticalLine& line(char parent) const
    {
        for (const auto& l : optical)
            if (l.label == parent) return l;
        throw InvalidParameter(std::string("no optical line ") + parent);
    }
};

/// Optical line label for an (excited branch, ground branch) pair.
/// A: upper->lower, B: upper->upper, C: lower->lower, D: lower->upper.
inline char line_label(int excited_branch, int ground_branch)
{
    if (excited_branch == 1) return ground_branch == 0 ? 'A' : 'B';
    return ground_branch == 0 ? 'C' : 'D';
}

namespace detail {

inline Eigen::Matrix2cd reduced_spin(const Vector4c& psi)
{
    Eigen::Matrix2cd rho = Eigen::Matrix2cd::Zero();
    for (int orb = 0; orb < 2; ++orb)
        for (int s = 0; s < 2; ++s)
            for (int t = 0; t < 2; ++t)
                rho(s, t) += psi(2 * orb + s) * std::conj(psi(2 * orb + t));
    return rho;
}

} // namespace detail

/// Squared spin overlap Tr(rho_g rho_e) of the reduced spin states.
inline double spin_overlap(const Vector4c& ground_state, const Vector4c& excited_state)
{
    const Eigen::Matrix2cd a = detail::reduced_spin(ground_state);
    const Eigen::Matrix2cd b = detail::reduced_spin(excited_state);
    return (a * b).trace().real();
}

inline SpinCharacter classify_spin(double overlap)
{
    constexpr double eps = 1e-12;
    if (overlap > 0.5 + eps) return SpinCharacter::preserving;
    if (overlap < 0.5 - eps) return SpinCharacter::flipping;
    return SpinCharacter::mixed;
}

/// Sublevel pairing per label: (ground sublevel, excited sublevel), 0 = down, 1 = up.
/// 2 and 4 share the excited "down" state and form the pumping Lambda system.
inline constexpr std::array<std::array<int, 2>, 4> sublevel_pairs{{{0, 1}, {0, 0}, {1, 1}, {1, 0}}};

inline TransitionTable transition_table(const SivModel& model)
{
    model.validate();
    const ManifoldEigensystem g = diagonalize(model.ground, model.b_field);
    const ManifoldEigensystem e = diagonalize(model.excited, model.b_field);
    const auto dipoles = dipole_operators();

    TransitionTable table;
    table.delta_gs = g.centroid(1) - g.centroid(0);
    table.delta_es = e.centroid(1) - e.centroid(0);
    table.f_s_ground = g.splitting(0);
    table.f_s_excited = e.splitting(0);
    table.spin_degenerate = model.b_field.norm() == 0.0;

    const std::array<std::array<int, 2>, 4> parents{{{1, 0}, {1, 1}, {0, 0}, {0, 1}}}; // A, B, C, D
    for (int p = 0; p < 4; ++p) {
        const int eb = parents[p][0];
        const int gb = parents[p][1];
        const char parent = line_label(eb, gb);
        const double line_freq = model.zpl_center + e.centroid(eb) - g.centroid(gb);
        table.optical[p] = {parent, line_freq};

        std::array<double, 4> raw{};
        double total = 0.0;
        for (int l = 0; l < 4; ++l) {
            const int gi = 2 * gb + sublevel_pairs[l][0];
            const int ej = 2 * eb + sublevel_pairs[l][1];
            for (const auto& d : dipoles) raw[l] += std::norm(e.state(ej).dot(d * g.state(gi)));
            total += raw[l];
        }
        if (!(total > 0.0)) throw NumericalError(std::string("transition_table: line ") + parent + " has no dipole strength");

        for (int l = 0; l < 4; ++l) {
            const int gi = 2 * gb + sublevel_pairs[l][0];
            const int ej = 2 * eb + sublevel_pairs[l][1];
            SublevelTransition t;
            t.label = l + 1;
            t.parent = parent;
            t.ground_index = gi;
            t.excited_index = ej;
            t.frequency = line_freq + (e.energies[ej] - e.centroid(eb)) - (g.energies[gi] - g.centroid(gb));
            t.dipole_weight = raw[l] / total;
            t.spin_overlap = spin_overlap(g.state(gi), e.state(ej));
            t.spin_character = table.spin_degenerate ? SpinCharacter::undefined : classify_spin(t.spin_overlap);
            table.sublevel.push_back(t);
        }
    }
    return table;
}

struct SpinSplitting {
    double f_s_ground = 0.0;
    double f_s_excited = 0.0;
    bool degenerate = false;
};

/// Spin splittings of the lower orbital branch in each manifold.
inline SpinSplitting spin_splitting(const SivModel& model)
{
    model.validate();
    if (model.b_field.norm() == 0.0) return {0.0, 0.0, true};
    const ManifoldEigensystem g = diagonalize(model.ground, model.b_field);
    const ManifoldEigensystem e = diagonalize(model.excited, model.b_field);
    return {g.splitting(0), e.splitting(0), false};
}

/// Express a lab-frame field in the SiV frame whose z axis is `symmetry_axis`.
/// `reference` fixes the SiV x axis (projected perpendicular to the symmetry axis).
inline Vec3 lab_to_siv_frame(const Vec3& b_lab, const Vec3& symmetry_axis, const Vec3& reference = Vec3::UnitZ())
{
    if (symmetry_axis.norm() == 0.0) throw DomainError("lab_to_siv_frame: zero symmetry axis");
    const Vec3 z = symmetry_axis.normalized();
    Vec3 x = reference - reference.dot(z) * z;
    if (x.norm() < 1e-12) {
        const Vec3 alt = std::abs(z.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
        x = alt - alt.dot(z) * z;
    }
    x.normalize();
    const Vec3 y = z.cross(x);
    return {b_lab.dot(x), b_lab.dot(y), b_lab.dot(z)};
}

inline std::string to_csv(const TransitionTable& table)
{
    std::ostringstream out;
    out << "label,parent,frequency_hz,dipole_weight,spin_character\n";
    for (const auto& t : table.sublevel)
        out << t.label << ',' << t.parent << ',' << format_double(t.frequency) << ','
            << format_double(t.dipole_weight) << ',' << to_string(t.spin_character) << '\n';
    return out.str();
}

} // namespace sivcav::siv
