#pragma once

// Thawed-Gaussian propagation along a guiding classical trajectory.
//
// For a quadratic Hamiltonian the Gaussian ansatz is exact. Per axis the
// complex width follows from the linear pair (Q, P) = M (1, 2 i hbar alpha_ref),
// with M the stability matrix of the guide:
//
//   alpha(t) = -i P / (2 hbar Q),
//   log-prefactor(t) = phase_ref + i S(t)/hbar - 1/2 sum_i log Q_i(t),
//
// log Q tracked continuously in time. Going through (Q, P) instead of the
// Riccati equation keeps alpha finite through caustics.

#include <array>
#include <cmath>
#include <complex>
#include <ostream>
#include <vector>

#include "classical.hpp"
#include "csv.hpp"
#include "gaussian.hpp"

namespace weaktraj {

namespace detail {

inline double unwrap_near(double angle, double reference) {
    const double two_pi = 2.0 * kPi;
    return angle + two_pi * std::round((reference - angle) / two_pi);
}

}  // namespace detail

class Branch {
public:
    Branch() = default;

    /// `ref` is the Gaussian at the guide's anchor sample.
    Branch(TrajectoryRecord guide, const ComplexGaussian& ref, Complex coefficient)
        : guide_(std::move(guide)), alpha_ref_(ref.alpha), phase_ref_(ref.phase), coefficient_(coefficient) {
        if (!ref.normalizable()) throw InvalidStateError("reference Gaussian is not normalizable");
        const std::size_t n = guide_.size();
        log_q_.resize(n);
        states_.resize(n);
        const std::size_t a = guide_.anchor();
        log_q_[a] = {Complex{}, Complex{}};
        states_[a] = build(guide_.sample(a), log_q_[a]);
        for (std::size_t k = a + 1; k < n; ++k) fill(k, log_q_[k - 1]);
        for (std::size_t k = a; k > 0; --k) fill(k - 1, log_q_[k]);
    }

    const TrajectoryRecord& guide() const { return guide_; }
    const TimeGrid& grid() const { return guide_.grid(); }
    Complex coefficient() const { return coefficient_; }
    void set_coefficient(Complex c) { coefficient_ = c; }
    std::size_t size() const { return states_.size(); }

    const ComplexGaussian& state(std::size_t k) const { return states_.at(k); }

    ComplexGaussian state_at(double t) const {
        if (!grid().contains(t)) throw RangeError("propagation", "time outside the branch grid");
        const std::size_t k = grid().nearest(t);
        if (t == grid()[k]) return states_[k];
        return build(guide_.state_at(t), log_q_[k]);
    }

    /// Complex width exponent at sample k (per axis).
    std::array<Complex, 2> alpha(std::size_t k) const { return states_.at(k).alpha; }

private:
    void fill(std::size_t k, const std::array<Complex, 2>& neighbour) {
        states_[k] = build(guide_.sample(k), neighbour, &log_q_[k]);
    }

    ComplexGaussian build(const FlowState& f, const std::array<Complex, 2>& log_q_ref,
                          std::array<Complex, 2>* log_q_out = nullptr) const {
        ComplexGaussian g;
        g.q = f.q;
        g.p = f.p;
        Complex log_pref = phase_ref_ + Complex{0.0, f.action / kHbar};
        for (std::size_t i = 0; i < kDim; ++i) {
            const Stability& M = f.stability[i];
            const Complex p0 = Complex{0.0, 2.0 * kHbar} * alpha_ref_[i];
            const Complex Q = M.qq + M.qp * p0;
            const Complex P = M.pq + M.pp * p0;
            g.alpha[i] = Complex{0.0, -1.0} * P / (2.0 * kHbar * Q);
            const Complex lq{std::log(std::abs(Q)), detail::unwrap_near(std::arg(Q), log_q_ref[i].imag())};
            if (log_q_out) (*log_q_out)[i] = lq;
            log_pref -= 0.5 * lq;
        }
        g.phase = log_pref;
        return g;
    }

    TrajectoryRecord guide_;
    std::array<Complex, 2> alpha_ref_{};
    Complex phase_ref_{};
    Complex coefficient_{1.0};
    std::vector<std::array<Complex, 2>> log_q_;
    std::vector<ComplexGaussian> states_;
};

struct Superposition {
    std::vector<Branch> branches;

    std::size_t size() const { return branches.size(); }
    const Branch& operator[](std::size_t j) const { return branches.at(j); }
};

/// Forward thawed-Gaussian propagation of `initial`, given at grid.begin().
inline Branch propagate_forward(const ComplexGaussian& initial, const PotentialParams& pot, const TimeGrid& grid,
                                Complex coefficient = 1.0) {
    return Branch(integrate_trajectory(initial.q, initial.p, pot, grid), initial, coefficient);
}

struct BranchSpec {
    Complex c;
    Vec2 p;
};

inline Superposition propagate_superposition(const std::vector<BranchSpec>& initials, Vec2 r0, double delta,
                                             const PotentialParams& pot, const TimeGrid& grid) {
    if (initials.empty()) throw ConfigError("superposition needs at least one branch");
    Superposition psi;
    psi.branches.reserve(initials.size());
    for (const auto& b : initials) psi.branches.push_back(propagate_forward(make_wavepacket(r0, b.p, delta), pot, grid, b.c));
    return psi;
}

/// Backward-evolved postselected state: the unique thawed Gaussian equal to
/// chi at t_f. The branch is defined on [grid.begin(), t_f].
inline Branch backward_postselected(const ComplexGaussian& chi, double t_f, const PotentialParams& pot,
                                    const TimeGrid& grid, Complex coefficient = 1.0) {
    if (!grid.contains(t_f) || t_f <= grid.begin()) throw RangeError("propagation", "t_f outside the time grid");
    const TimeGrid sub = std::abs(t_f - grid.end()) < 1e-12 ? grid : TimeGrid(grid.begin(), t_f, grid.step() * (1.0 + 1e-12));
    auto guide = integrate_trajectory_anchored(chi.q, chi.p, pot, sub, sub.size() - 1);
    return Branch(std::move(guide), chi, coefficient);
}

inline Complex evaluate_superposition(const Superposition& psi, Vec2 r, double t) {
    Complex sum{};
    for (const auto& b : psi.branches) sum += b.coefficient() * evaluate(b.state_at(t), r);
    return sum;
}

/// Rectangular sampling mesh for snapshots.
struct SnapshotMesh {
    Vec2 lo{-10.0, -10.0};
    Vec2 hi{10.0, 10.0};
    std::size_t nx = 128;
    std::size_t ny = 128;

    Vec2 point(std::size_t i, std::size_t j) const {
        const double fx = nx > 1 ? static_cast<double>(i) / static_cast<double>(nx - 1) : 0.0;
        const double fy = ny > 1 ? static_cast<double>(j) / static_cast<double>(ny - 1) : 0.0;
        return {lo.x + fx * (hi.x - lo.x), lo.y + fy * (hi.y - lo.y)};
    }
};

/// CSV: x, y, Re psi, Im psi, |psi|^2 (x fastest).
template <class Field>
void write_snapshot_csv(std::ostream& os, const SnapshotMesh& mesh, Field&& field) {
    csv::Writer w(os);
    w.header({"x", "y", "re_psi", "im_psi", "abs2_psi"});
    for (std::size_t j = 0; j < mesh.ny; ++j) {
        for (std::size_t i = 0; i < mesh.nx; ++i) {
            const Vec2 r = mesh.point(i, j);
            const Complex v = field(r);
            w << r.x << r.y << v.real() << v.imag() << std::norm(v);
            w.end_row();
        }
    }
}

}  // namespace weaktraj
