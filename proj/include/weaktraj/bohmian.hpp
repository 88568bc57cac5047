#pragma once

// Average (Bohmian) trajectories of a Gaussian superposition.
//
//   v(r, t) = (hbar/m) Im( grad psi / psi )
//
// evaluated analytically from the branch log-gradients. Integration runs
// backward from the postselected endpoint with RK4; each step is halved until
// step doubling meets the local tolerance (and at least twice where the
// density is low), and the trajectory is aborted when the density drops below
// the node floor.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "csv.hpp"
#include "gaussian.hpp"
#include "propagation.hpp"

namespace weaktraj {

struct NodeError : NumericalError {
    NodeError(double relative_density, const std::string& what)
        : NumericalError("bohmian", what), relative(relative_density) {}
    double relative;
};

struct LocalField {
    Complex psi;          // scaled by exp(-shift)
    CVec2 grad_over_psi;  // grad psi / psi
    double relative_density = 0.0;  // |psi|^2 / max_j |c_j|^2 peak_j
    std::size_t nearest = 0;
    double dominance = 0.0;  // |c psi| of nearest branch over the runner-up
};

inline LocalField local_field(const Superposition& psi, Vec2 r, double t) {
    const std::size_t n = psi.size();
    if (n == 0) throw ConfigError("empty superposition");
    std::vector<Complex> logs(n);
    std::vector<ComplexGaussian> states(n);
    double shift = -std::numeric_limits<double>::infinity();
    double log_peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        states[j] = psi[j].state_at(t);
        const Complex c = psi[j].coefficient();
        if (c == Complex{}) {
            logs[j] = Complex{-std::numeric_limits<double>::infinity()};
            continue;
        }
        logs[j] = std::log(c) + log_evaluate(states[j], r);
        shift = std::max(shift, logs[j].real());
        log_peak = std::max(log_peak, std::log(std::abs(c)) + states[j].phase.real());
    }
    LocalField f;
    if (!std::isfinite(shift)) throw ConfigError("superposition has no non-zero branch");
    CVec2 grad{};
    double best = -1.0, second = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (!std::isfinite(logs[j].real())) continue;
        const Complex term = std::exp(logs[j] - shift);
        f.psi += term;
        grad = grad + term * log_gradient(states[j], r);
        const double a = std::abs(term);
        if (a > best) {
            second = best;
            best = a;
            f.nearest = j;
        } else if (a > second) {
            second = a;
        }
    }
    f.dominance = second > 0.0 ? best / second : std::numeric_limits<double>::infinity();
    const double abs2 = std::norm(f.psi);
    f.relative_density = abs2 > 0.0 ? std::exp(std::log(abs2) + 2.0 * (shift - log_peak)) : 0.0;
    if (abs2 > 0.0) f.grad_over_psi = (Complex{1.0} / f.psi) * grad;
    return f;
}

inline constexpr double kNodeFloor = 1e-14;

/// Bohmian velocity field.
inline Vec2 velocity(const Superposition& psi, Vec2 r, double t, double node_floor = kNodeFloor) {
    const auto f = local_field(psi, r, t);
    if (!(f.relative_density >= node_floor)) throw NodeError(f.relative_density, "velocity evaluated at a node of psi");
    const double m = psi[0].guide().potential().m;
    return (kHbar / m) * imag(f.grad_over_psi);
}

/// <r| p |psi> / <r|psi> = -i hbar grad psi / psi.
/// Real part m v, imaginary part -hbar grad rho / (2 rho).
inline CVec2 weak_momentum_value(const Superposition& psi, Vec2 r, double t, double node_floor = kNodeFloor) {
    const auto f = local_field(psi, r, t);
    if (!(f.relative_density >= node_floor)) throw NodeError(f.relative_density, "weak momentum at a node of psi");
    return Complex{0.0, -kHbar} * f.grad_over_psi;
}

/// Branch j maximising |c_j psi_j(r, t)|; ties go to the lowest index.
inline std::size_t nearest_branch(const Superposition& psi, Vec2 r, double t) { return local_field(psi, r, t).nearest; }

struct AverageTrajectoryControls {
    double step = 1e-3;
    double refine_below = 1e-6;  // relative density that triggers step halving
    double tolerance = 1e-9;     // local error per step
    double node_floor = kNodeFloor;
    int max_halvings = 20;
};

struct AverageTrajectory {
    std::vector<double> t;
    std::vector<Vec2> r;
    std::vector<std::size_t> nearest;
    std::vector<double> dominance;
    std::vector<double> abs2_psi;  // relative density
    std::vector<int> level;        // halvings used for the step ending at each sample
    bool aborted = false;
    int max_refinement = 0;
    std::size_t unconverged_steps = 0;

    std::size_t size() const { return t.size(); }
};

namespace detail {

inline Vec2 rk4_bohm(const Superposition& psi, Vec2 r, double t, double h, double floor, double& min_density) {
    auto vel = [&](Vec2 x, double tt) {
        const auto f = local_field(psi, x, tt);
        min_density = std::min(min_density, f.relative_density);
        if (!(f.relative_density >= floor)) throw NodeError(f.relative_density, "trajectory reached a node");
        const double m = psi[0].guide().potential().m;
        return (kHbar / m) * imag(f.grad_over_psi);
    };
    const Vec2 k1 = vel(r, t);
    const Vec2 k2 = vel(r + (0.5 * h) * k1, t + 0.5 * h);
    const Vec2 k3 = vel(r + (0.5 * h) * k2, t + 0.5 * h);
    const Vec2 k4 = vel(r + h * k3, t + h);
    return r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Integrates dr/dt = v(r, t) from (r_start, t_start) to t_end, in either
/// direction, recording one sample per macro step.
inline AverageTrajectory integrate_average_trajectory(const Superposition& psi, Vec2 r_start, double t_start,
                                                      double t_end, const AverageTrajectoryControls& ctl = {}) {
    if (!(ctl.step > 0.0)) throw ConfigError("average trajectory step must be positive");
    AverageTrajectory out;
    auto record = [&](double t, Vec2 r, int level) {
        const auto f = local_field(psi, r, t);
        out.t.push_back(t);
        out.r.push_back(r);
        out.nearest.push_back(f.nearest);
        out.dominance.push_back(f.dominance);
        out.abs2_psi.push_back(f.relative_density);
        out.level.push_back(level);
        return f.relative_density;
    };
    if (record(t_start, r_start, 0) < ctl.node_floor) {
        out.aborted = true;
        return out;
    }
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(std::abs(t_end - t_start) / ctl.step - 1e-9)));
    const double H = (t_end - t_start) / static_cast<double>(n);
    Vec2 r = r_start;
    for (std::size_t k = 0; k < n; ++k) {
        const double t0 = t_start + static_cast<double>(k) * H;
        // Step doubling: the step is accepted once 2^L and 2^(L-1) sub-steps
        // agree to the tolerance; low density forces one extra halving.
        auto advance = [&](int level, double& min_density) {
            const std::size_t sub = std::size_t{1} << level;
            const double h = H / static_cast<double>(sub);
            Vec2 x = r;
            for (std::size_t s = 0; s < sub; ++s)
                x = detail::rk4_bohm(psi, x, t0 + static_cast<double>(s) * h, h, ctl.node_floor, min_density);
            return x;
        };
        std::optional<Vec2> prev;
        int used = -1;
        for (int level = 0; level <= ctl.max_halvings; ++level) {
            double min_density = std::numeric_limits<double>::infinity();
            Vec2 x;
            try {
                x = advance(level, min_density);
            } catch (const NodeError&) {
                prev.reset();
                continue;
            }
            const bool dense = min_density >= ctl.refine_below || level >= 2;
            if (prev && dense && norm(x - *prev) <= ctl.tolerance) {
                r = x;
                used = level;
                break;
            }
            if (level == ctl.max_halvings) {
                r = x;
                used = level;
                out.unconverged_steps++;
            }
            prev = x;
        }
        if (used < 0) {
            out.aborted = true;
            return out;
        }
        out.max_refinement = std::max(out.max_refinement, used);
        const double t1 = k + 1 == n ? t_end : t0 + H;
        if (record(t1, r, used) < ctl.node_floor) {
            out.aborted = true;
            return out;
        }
    }
    return out;
}

/// Largest local truncation error along a trajectory: each recorded step
/// redone from its start point with the sub-steps halved once more.
inline double local_step_error(const Superposition& psi, const AverageTrajectory& tr,
                               const AverageTrajectoryControls& ctl = {}) {
    double worst = 0.0;
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
        const std::size_t sub = std::size_t{1} << (tr.level[k + 1] + 1);
        const double h = (tr.t[k + 1] - tr.t[k]) / static_cast<double>(sub);
        double md = std::numeric_limits<double>::infinity();
        try {
            Vec2 x = tr.r[k];
            for (std::size_t s = 0; s < sub; ++s)
                x = detail::rk4_bohm(psi, x, tr.t[k] + static_cast<double>(s) * h, h, ctl.node_floor, md);
            worst = std::max(worst, norm(x - tr.r[k + 1]));
        } catch (const NodeError&) {
        }
    }
    return worst;
}

/// Sequence of resolved nearest-branch labels in forward time, consecutive
/// duplicates collapsed. Samples whose dominance ratio is below `resolution`
/// are skipped.
inline std::vector<std::size_t> itinerary(const AverageTrajectory& tr, double resolution = 2.0) {
    std::vector<std::size_t> idx(tr.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    if (tr.size() > 1 && tr.t.front() > tr.t.back()) std::reverse(idx.begin(), idx.end());
    std::vector<std::size_t> out;
    for (auto k : idx) {
        if (tr.dominance[k] < resolution) continue;
        if (out.empty() || out.back() != tr.nearest[k]) out.push_back(tr.nearest[k]);
    }
    return out;
}

/// Trajectories ending on the (2k+1)^2 lattice r_f + offset*(i, j), i,j in [-k, k];
/// x index outer.
inline std::vector<AverageTrajectory> trajectory_family(const Superposition& psi, Vec2 r_f, double t_f,
                                                        double t_end, double offset = 0.05, int half_width = 1,
                                                        const AverageTrajectoryControls& ctl = {}) {
    std::vector<AverageTrajectory> out;
    for (int i = -half_width; i <= half_width; ++i)
        for (int j = -half_width; j <= half_width; ++j)
            out.push_back(integrate_average_trajectory(psi, r_f + Vec2{offset * i, offset * j}, t_f, t_end, ctl));
    return out;
}

/// CSV with one row per sample; `trajectory` indexes the family member.
inline void write_average_trajectories_csv(std::ostream& os, const std::vector<AverageTrajectory>& family) {
    csv::Writer w(os);
    w.header({"trajectory", "t", "x", "y", "nearest_branch", "abs2_psi", "abort_flag"});
    for (std::size_t f = 0; f < family.size(); ++f) {
        const auto& tr = family[f];
        for (std::size_t k = 0; k < tr.size(); ++k) {
            w << f << tr.t[k] << tr.r[k].x << tr.r[k].y << static_cast<int>(tr.nearest[k] + 1) << tr.abs2_psi[k]
              << static_cast<int>(tr.aborted && k + 1 == tr.size());
            w.end_row();
        }
    }
}

/// max |d rho/dt + div j| / max |d rho/dt| over a probe mesh, by central
/// differences of the analytic field.
inline double continuity_residual(const Superposition& psi, double t, const SnapshotMesh& mesh, double h_space = 1e-4,
                                  double h_time = 1e-4) {
    const double m = psi[0].guide().potential().m;
    auto rho = [&](Vec2 r, double tt) { return std::norm(evaluate_superposition(psi, r, tt)); };
    auto flux = [&](Vec2 r, std::size_t i) {
        // j_i = (hbar/m) Im(conj(psi) d_i psi)
        Complex sum{}, grad{};
        for (const auto& b : psi.branches) {
            const auto s = b.state_at(t);
            const Complex v = b.coefficient() * evaluate(s, r);
            sum += v;
            grad += v * log_gradient(s, r)[i];
        }
        return (kHbar / m) * (std::conj(sum) * grad).imag();
    };
    double max_res = 0.0, max_dt = 0.0;
    for (std::size_t jy = 0; jy < mesh.ny; ++jy) {
        for (std::size_t ix = 0; ix < mesh.nx; ++ix) {
            const Vec2 r = mesh.point(ix, jy);
            const double drho = (rho(r, t + h_time) - rho(r, t - h_time)) / (2.0 * h_time);
            double div = 0.0;
            for (std::size_t i = 0; i < kDim; ++i) {
                Vec2 e{};
                e[i] = h_space;
                div += (flux(r + e, i) - flux(r - e, i)) / (2.0 * h_space);
            }
            max_res = std::max(max_res, std::abs(drho + div));
            max_dt = std::max(max_dt, std::abs(drho));
        }
    }
    return max_dt > 0.0 ? max_res / max_dt : max_res;
}

}  // namespace weaktraj
