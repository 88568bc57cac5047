#pragma once

// Classical dynamics of the two-dimensional time-dependent linear oscillator
//
//   H = (Px^2 + Py^2)/2m + m Vx(t) x^2 + m Vy(t) y^2,   Vi(t) = xi_i - ups_i cos(2 omega_i t)
//
// Each axis obeys x'' + 2 V(t) x = 0. Trajectories are integrated with
// fixed-step RK4 together with the per-axis stability matrix
// d(q,p)_t / d(q,p)_anchor and the classical action.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "csv.hpp"

namespace weaktraj {

struct AxisPotential {
    double xi = 0.0;
    double ups = 0.0;
    double omega = 0.0;

    double operator()(double t) const { return xi - ups * std::cos(2.0 * omega * t); }
};

struct PotentialParams {
    std::array<AxisPotential, 2> axis{};
    double m = 1.0;

    double V(std::size_t i, double t) const { return axis[i](t); }

    void validate() const {
        if (!(m > 0.0)) throw ConfigError("potential: mass must be positive");
        for (const auto& a : axis) {
            if (!std::isfinite(a.xi) || !std::isfinite(a.ups) || !std::isfinite(a.omega))
                throw ConfigError("potential: parameters must be finite");
        }
    }

    static PotentialParams isotropic(AxisPotential a, double m = 1.0) { return {{a, a}, m}; }
};

/// Uniform sample grid t_k = begin + k h, k = 0..steps, with the last sample exactly at end.
class TimeGrid {
public:
    TimeGrid() = default;

    TimeGrid(double begin, double end, double max_step) : begin_(begin), end_(end) {
        if (!(end > begin)) throw ConfigError("time grid: end must exceed begin");
        if (!(max_step > 0.0)) throw ConfigError("time grid: step must be positive");
        steps_ = static_cast<std::size_t>(std::ceil((end - begin) / max_step - 1e-9));
        steps_ = std::max<std::size_t>(steps_, 1);
        h_ = (end - begin) / static_cast<double>(steps_);
    }

    double begin() const { return begin_; }
    double end() const { return end_; }
    double step() const { return h_; }
    std::size_t size() const { return steps_ + 1; }
    std::size_t steps() const { return steps_; }

    double operator[](std::size_t k) const { return k == steps_ ? end_ : begin_ + static_cast<double>(k) * h_; }

    bool contains(double t, double tol = 1e-12) const { return t >= begin_ - tol && t <= end_ + tol; }

    /// Index of the sample nearest to t (t must lie in range).
    std::size_t nearest(double t) const {
        const double k = std::round((t - begin_) / h_);
        return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(steps_)));
    }

private:
    double begin_ = 0.0;
    double end_ = 1.0;
    double h_ = 1.0;
    std::size_t steps_ = 1;
};

/// 2x2 per-axis stability matrix [[dq/dq0, dq/dp0], [dp/dq0, dp/dp0]].
struct Stability {
    double qq = 1.0, qp = 0.0, pq = 0.0, pp = 1.0;

    double det() const { return qq * pp - qp * pq; }

    Stability inverse() const {
        const double d = det();
        return {pp / d, -qp / d, -pq / d, qq / d};
    }

    friend Stability operator*(const Stability& a, const Stability& b) {
        return {a.qq * b.qq + a.qp * b.pq, a.qq * b.qp + a.qp * b.pp, a.pq * b.qq + a.pp * b.pq,
                a.pq * b.qp + a.pp * b.pp};
    }
};

/// Full phase-space state carried along a trajectory.
struct FlowState {
    Vec2 q;
    Vec2 p;
    double action = 0.0;
    std::array<Stability, 2> stability{};
};

namespace detail {

inline FlowState flow_rhs(const FlowState& s, double t, const PotentialParams& pot) {
    FlowState d;
    d.action = 0.0;
    for (std::size_t i = 0; i < kDim; ++i) {
        const double v = pot.V(i, t);
        d.q[i] = s.p[i] / pot.m;
        d.p[i] = -2.0 * pot.m * v * s.q[i];
        d.action += s.p[i] * s.p[i] / (2.0 * pot.m) - pot.m * v * s.q[i] * s.q[i];
        const auto& M = s.stability[i];
        d.stability[i] = {M.pq / pot.m, M.pp / pot.m, -2.0 * pot.m * v * M.qq, -2.0 * pot.m * v * M.qp};
    }
    return d;
}

inline FlowState axpy(const FlowState& s, double h, const FlowState& d) {
    FlowState o;
    o.q = s.q + h * d.q;
    o.p = s.p + h * d.p;
    o.action = s.action + h * d.action;
    for (std::size_t i = 0; i < kDim; ++i) {
        const auto& a = s.stability[i];
        const auto& b = d.stability[i];
        o.stability[i] = {a.qq + h * b.qq, a.qp + h * b.qp, a.pq + h * b.pq, a.pp + h * b.pp};
    }
    return o;
}

}  // namespace detail

inline FlowState rk4_step(const FlowState& s, double t, double h, const PotentialParams& pot) {
    using detail::axpy;
    using detail::flow_rhs;
    const FlowState k1 = flow_rhs(s, t, pot);
    const FlowState k2 = flow_rhs(axpy(s, 0.5 * h, k1), t + 0.5 * h, pot);
    const FlowState k3 = flow_rhs(axpy(s, 0.5 * h, k2), t + 0.5 * h, pot);
    const FlowState k4 = flow_rhs(axpy(s, h, k3), t + h, pot);
    FlowState o = axpy(s, h / 6.0, k1);
    o = axpy(o, h / 3.0, k2);
    o = axpy(o, h / 3.0, k3);
    return axpy(o, h / 6.0, k4);
}

/// Integrates the flow from (t0, s) to t1 with steps no larger than max_step.
inline FlowState integrate_flow(FlowState s, double t0, double t1, const PotentialParams& pot, double max_step) {
    if (t1 == t0) return s;
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(std::abs(t1 - t0) / max_step - 1e-9)));
    const double h = (t1 - t0) / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) s = rk4_step(s, t0 + static_cast<double>(k) * h, h, pot);
    return s;
}

inline constexpr double kSymplecticTolerance = 1e-8;

/// Sampled classical trajectory with stability matrices relative to the anchor sample.
class TrajectoryRecord {
public:
    TrajectoryRecord() = default;

    TrajectoryRecord(PotentialParams pot, TimeGrid grid, std::size_t anchor, std::vector<FlowState> samples)
        : pot_(pot), grid_(grid), anchor_(anchor), samples_(std::move(samples)) {}

    const TimeGrid& grid() const { return grid_; }
    const PotentialParams& potential() const { return pot_; }
    std::size_t anchor() const { return anchor_; }
    std::size_t size() const { return samples_.size(); }
    double time(std::size_t k) const { return grid_[k]; }
    const FlowState& sample(std::size_t k) const { return samples_.at(k); }
    Vec2 q(std::size_t k) const { return samples_.at(k).q; }
    Vec2 p(std::size_t k) const { return samples_.at(k).p; }
    double action(std::size_t k) const { return samples_.at(k).action; }

    /// Flow state at arbitrary t in range: one RK4 sub-step from the nearest sample.
    FlowState state_at(double t) const {
        if (!grid_.contains(t)) {
            std::ostringstream os;
            os << "t = " << t << " outside trajectory grid [" << grid_.begin() << ", " << grid_.end() << "]";
            throw RangeError("classical_dynamics", os.str());
        }
        const std::size_t k = grid_.nearest(t);
        const double tk = grid_[k];
        if (t == tk) return samples_[k];
        return rk4_step(samples_[k], tk, t - tk, pot_);
    }

    double max_symplectic_defect() const {
        double worst = 0.0;
        for (const auto& s : samples_)
            for (const auto& m : s.stability) worst = std::max(worst, std::abs(m.det() - 1.0));
        return worst;
    }

    void write_csv(std::ostream& os) const {
        csv::Writer w(os);
        w.header({"t", "qx", "qy", "px", "py", "S", "Mx_qq", "Mx_qp", "Mx_pq", "Mx_pp", "My_qq", "My_qp", "My_pq",
                  "My_pp"});
        for (std::size_t k = 0; k < samples_.size(); ++k) {
            const auto& s = samples_[k];
            w << grid_[k] << s.q.x << s.q.y << s.p.x << s.p.y << s.action;
            for (const auto& m : s.stability) w << m.qq << m.qp << m.pq << m.pp;
            w.end_row();
        }
    }

private:
    PotentialParams pot_;
    TimeGrid grid_;
    std::size_t anchor_ = 0;
    std::vector<FlowState> samples_;
};

/// Trajectory through (q_anchor, p_anchor) at grid sample `anchor`, integrated
/// forward and backward to cover the whole grid. Action is zero at the anchor.
inline TrajectoryRecord integrate_trajectory_anchored(Vec2 q_anchor, Vec2 p_anchor, const PotentialParams& pot,
                                                      const TimeGrid& grid, std::size_t anchor) {
    pot.validate();
    if (anchor >= grid.size()) throw RangeError("classical_dynamics", "anchor index outside grid");
    std::vector<FlowState> samples(grid.size());
    FlowState s0;
    s0.q = q_anchor;
    s0.p = p_anchor;
    samples[anchor] = s0;
    for (std::size_t k = anchor; k + 1 < grid.size(); ++k)
        samples[k + 1] = rk4_step(samples[k], grid[k], grid[k + 1] - grid[k], pot);
    for (std::size_t k = anchor; k > 0; --k)
        samples[k - 1] = rk4_step(samples[k], grid[k], grid[k - 1] - grid[k], pot);

    TrajectoryRecord rec(pot, grid, anchor, std::move(samples));
    const double defect = rec.max_symplectic_defect();
    if (defect > kSymplecticTolerance) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "stability determinant deviates from 1 by %.3e (step %.3e); refine the time grid", defect,
                      grid.step());
        throw NumericalError("classical_dynamics", buf);
    }
    return rec;
}

inline TrajectoryRecord integrate_trajectory(Vec2 q0, Vec2 p0, const PotentialParams& pot, const TimeGrid& grid) {
    return integrate_trajectory_anchored(q0, p0, pot, grid, 0);
}

// ---------------------------------------------------------------------------
// Ermakov-Pinney representation:  rho'' + 2 V(t) rho = 1 / rho^3,  phi' = 1 / rho^2.
// Every solution of x'' + 2V x = 0 is x = rho (A cos phi + B sin phi).

struct ErmakovSolution {
    TimeGrid grid;
    std::vector<double> rho;
    std::vector<double> drho;
    std::vector<double> phi;

    /// Reconstructs the axis trajectory with x(t0) = x0, x'(t0) = v0.
    std::vector<double> reconstruct(double x0, double v0) const {
        const double A = x0 / rho.front();
        const double B = (v0 - drho.front() * A) * rho.front();
        std::vector<double> x(rho.size());
        for (std::size_t k = 0; k < rho.size(); ++k) x[k] = rho[k] * (A * std::cos(phi[k]) + B * std::sin(phi[k]));
        return x;
    }

    /// Ermakov invariant  1/2 [ (rho x' - rho' x)^2 + (x/rho)^2 ]  at sample k.
    double invariant(std::size_t k, double x, double v) const {
        const double w = rho[k] * v - drho[k] * x;
        const double u = x / rho[k];
        return 0.5 * (w * w + u * u);
    }
};

inline ErmakovSolution ermakov_solve(const PotentialParams& pot, std::size_t axis, double rho0, double drho0,
                                     const TimeGrid& grid) {
    if (!(rho0 > 0.0)) throw ConfigError("ermakov: rho0 must be positive");
    if (axis >= kDim) throw ConfigError("ermakov: axis must be 0 or 1");
    const AxisPotential V = pot.axis[axis];
    struct Y {
        double r, dr, ph;
    };
    auto f = [&](const Y& y, double t) {
        const double r3 = y.r * y.r * y.r;
        return Y{y.dr, -2.0 * V(t) * y.r + 1.0 / r3, 1.0 / (y.r * y.r)};
    };
    auto add = [](const Y& a, double h, const Y& b) { return Y{a.r + h * b.r, a.dr + h * b.dr, a.ph + h * b.ph}; };

    ErmakovSolution out{grid, {}, {}, {}};
    out.rho.reserve(grid.size());
    Y y{rho0, drho0, 0.0};
    const double floor = 1e-8 * rho0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        out.rho.push_back(y.r);
        out.drho.push_back(y.dr);
        out.phi.push_back(y.ph);
        if (k + 1 == grid.size()) break;
        const double t = grid[k];
        const double h = grid[k + 1] - t;
        const Y k1 = f(y, t);
        const Y k2 = f(add(y, 0.5 * h, k1), t + 0.5 * h);
        const Y k3 = f(add(y, 0.5 * h, k2), t + 0.5 * h);
        const Y k4 = f(add(y, h, k3), t + h);
        y = Y{y.r + h / 6.0 * (k1.r + 2 * k2.r + 2 * k3.r + k4.r), y.dr + h / 6.0 * (k1.dr + 2 * k2.dr + 2 * k3.dr + k4.dr),
              y.ph + h / 6.0 * (k1.ph + 2 * k2.ph + 2 * k3.ph + k4.ph)};
        if (!(y.r > floor) || !std::isfinite(y.r)) {
            std::ostringstream os;
            os << "rho approached zero near t = " << grid[k + 1] << " (invalid initial data)";
            throw NumericalError("classical_dynamics", os.str());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Return-time calibration.

struct CalibrationError : NumericalError {
    explicit CalibrationError(const std::string& what) : NumericalError("classical_dynamics", what) {}
};

/// Fundamental solution Z (Z(0)=0, Z'(0)=1) at t, and the number of sign
/// changes of Z on (0, t).
struct FundamentalProbe {
    double value = 0.0;
    int zeros_before = 0;
};

inline FundamentalProbe probe_fundamental(const AxisPotential& V, double t, double max_step) {
    const auto n = static_cast<std::size_t>(std::ceil(t / max_step));
    const double h = t / static_cast<double>(n);
    double x = 0.0, v = 1.0;
    int zeros = 0;
    double prev = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double tk = static_cast<double>(k) * h;
        auto acc = [&](double tt, double xx) { return -2.0 * V(tt) * xx; };
        const double k1x = v, k1v = acc(tk, x);
        const double k2x = v + 0.5 * h * k1v, k2v = acc(tk + 0.5 * h, x + 0.5 * h * k1x);
        const double k3x = v + 0.5 * h * k2v, k3v = acc(tk + 0.5 * h, x + 0.5 * h * k2x);
        const double k4x = v + h * k3v, k4v = acc(tk + h, x + h * k3x);
        x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
        v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
        // Sign changes strictly before the final sample.
        if (k + 1 < n && k > 0 && ((prev > 0.0 && x <= 0.0) || (prev < 0.0 && x >= 0.0))) ++zeros;
        prev = x;
    }
    return {x, zeros};
}

inline constexpr double kCalibrationStep = 2.5e-4;
inline constexpr double kCalibrationTolerance = 1e-8;

namespace detail {

inline AxisPotential scaled_axis(double xi_ratio, double ups_ratio, double omega) {
    return {xi_ratio * omega * omega, ups_ratio * omega * omega, omega};
}

inline AxisPotential calibrate_axis(const AxisPotential& tmpl, double t_target, int zero_index) {
    if (!(tmpl.omega > 0.0)) throw ConfigError("calibration: template omega must be positive");
    if (zero_index < 1) throw ConfigError("calibration: zero index must be >= 1");
    const double rx = tmpl.xi / (tmpl.omega * tmpl.omega);
    const double ru = tmpl.ups / (tmpl.omega * tmpl.omega);
    // Z(t_target) changes sign each time one of its zeros crosses t_target;
    // the wanted crossing is where (zero_index - 1) zeros lie strictly before.
    const double guess = rx > 0.0 ? zero_index * kPi / (t_target * std::sqrt(2.0 * rx)) : 1.0;
    const double lo_scan = guess / 8.0;
    const double hi_scan = guess * 8.0;
    const int n_scan = 600;
    const double ratio = std::pow(hi_scan / lo_scan, 1.0 / n_scan);

    std::ostringstream report;
    double s_prev = lo_scan;
    auto p_prev = probe_fundamental(scaled_axis(rx, ru, s_prev), t_target, kCalibrationStep);
    for (int i = 1; i <= n_scan; ++i) {
        const double s = lo_scan * std::pow(ratio, i);
        const auto p = probe_fundamental(scaled_axis(rx, ru, s), t_target, kCalibrationStep);
        if (i % 60 == 0) report << " omega=" << s << " Z=" << p.value << " zeros=" << p.zeros_before << ";";
        const bool sign_change = (p_prev.value > 0.0) != (p.value > 0.0);
        if (sign_change && p_prev.zeros_before == zero_index - 1) {
            double a = s_prev, b = s;
            double fa = p_prev.value;
            for (int it = 0; it < 200 && (b - a) > 1e-15 * b; ++it) {
                const double mid = 0.5 * (a + b);
                const double fm = probe_fundamental(scaled_axis(rx, ru, mid), t_target, kCalibrationStep).value;
                if ((fm > 0.0) == (fa > 0.0)) {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            const double root = 0.5 * (a + b);
            const auto check = probe_fundamental(scaled_axis(rx, ru, root), t_target, kCalibrationStep);
            if (std::abs(check.value) > kCalibrationTolerance || check.zeros_before != zero_index - 1) {
                throw CalibrationError("bisection did not converge: |Z(t_target)| = " +
                                       std::to_string(std::abs(check.value)));
            }
            return scaled_axis(rx, ru, root);
        }
        s_prev = s;
        p_prev = p;
    }
    throw CalibrationError("no root bracketed for zero index " + std::to_string(zero_index) +
                           "; scan report:" + report.str());
}

}  // namespace detail

/// Rescales omega (keeping xi/omega^2 and ups/omega^2 fixed) on each axis so
/// that the zero_index-th zero of the fundamental solution falls at t_target.
/// By linearity every trajectory launched from the origin returns there at t_target.
inline PotentialParams calibrate_return_time(const PotentialParams& tmpl, double t_target,
                                             std::array<int, 2> zero_index = {1, 1}) {
    if (!(t_target > 0.0)) throw ConfigError("calibration: t_target must be positive");
    tmpl.validate();
    PotentialParams out = tmpl;
    for (std::size_t i = 0; i < kDim; ++i) out.axis[i] = detail::calibrate_axis(tmpl.axis[i], t_target, zero_index[i]);
    return out;
}

inline constexpr double kReturnTime = 2.84;

/// Default oscillator: xi/omega^2 = 1, ups/omega^2 = 0.3 on both axes, x
/// calibrated to its second zero and y to its first zero at t = 2.84.
inline PotentialParams default_potential() {
    const AxisPotential tmpl{1.0, 0.3, 1.0};
    return calibrate_return_time(PotentialParams{{tmpl, tmpl}, 1.0}, kReturnTime, {2, 1});
}

}  // namespace weaktraj
