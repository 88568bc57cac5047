#pragma once

// Weak position measurements by localized Gaussian meters.
//
// A meter at R0 with pointer width Delta interacts with the system inside the
// disc |r - R0| < 4 Delta. Its mean interaction time is the closest approach
// of a branch centre; the weak value it records is
//
//   <r(t_k)>_W = <chi(t_k)| r |psi(t_k)> / <chi(t_k)|psi(t_k)>
//
// with psi propagated forward and chi backward to t_k. When psi and chi are
// superpositions, only the branch of each that is present in the meter's
// window enters the ratio; meters in branch-overlap regions are rejected.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "csv.hpp"
#include "gaussian.hpp"
#include "propagation.hpp"

namespace weaktraj {

struct Meter {
    std::string id;
    Vec2 R0;
    double Delta = 0.1;
    double g = 0.01;
    double tau = 1e-2;

    double range() const { return 4.0 * Delta; }

    void validate() const {
        if (!(Delta > 0.0)) throw ConfigError("meter " + id + ": Delta must be positive");
        if (!(g >= 0.0)) throw ConfigError("meter " + id + ": g must be non-negative");
        if (!(tau >= 0.0)) throw ConfigError("meter " + id + ": tau must be non-negative");
    }
};

struct Pass {
    double t = 0.0;
    double distance = 0.0;
};

namespace detail {

inline double approach_rate(const Branch& b, const Meter& m, double t) {
    const auto s = b.guide().state_at(t);
    return dot(s.q - m.R0, s.p);
}

inline Pass refine_pass(const Branch& b, const Meter& m, std::size_t k) {
    const auto& grid = b.grid();
    const double d0 = norm(b.guide().q(k) - m.R0);
    if (d0 == 0.0) return {grid[k], 0.0};
    double lo = grid[k == 0 ? 0 : k - 1];
    double hi = grid[std::min(k + 1, grid.size() - 1)];
    double flo = approach_rate(b, m, lo);
    const double fhi = approach_rate(b, m, hi);
    if (!(flo < 0.0 && fhi > 0.0)) return {grid[k], d0};
    for (int it = 0; it < 80 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = approach_rate(b, m, mid);
        if (fm < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    const double t = 0.5 * (lo + hi);
    return {t, norm(b.guide().state_at(t).q - m.R0)};
}

}  // namespace detail

/// Passes of the branch centre through the meter's interaction disc, in
/// time order. Each pass is reported at its closest approach.
inline std::vector<Pass> interaction_passes(const Branch& branch, const Meter& meter) {
    const auto& tr = branch.guide();
    const std::size_t n = tr.size();
    std::vector<double> d(n);
    for (std::size_t k = 0; k < n; ++k) d[k] = norm(tr.q(k) - meter.R0);

    std::vector<std::pair<std::size_t, Pass>> minima;
    for (std::size_t k = 0; k < n; ++k) {
        const bool left = k == 0 || d[k] < d[k - 1];
        const bool right = k + 1 == n || d[k] <= d[k + 1];
        if (left && right) {
            const Pass p = detail::refine_pass(branch, meter, k);
            if (p.distance < meter.range()) minima.emplace_back(k, p);
        }
    }
    std::vector<Pass> passes;
    std::size_t last_k = 0;
    for (const auto& [k, p] : minima) {
        bool same_pass = false;
        if (!passes.empty()) {
            same_pass = true;
            for (std::size_t j = last_k; j <= k; ++j) {
                if (d[j] >= meter.range()) {
                    same_pass = false;
                    break;
                }
            }
        }
        if (same_pass) {
            if (p.distance < passes.back().distance) passes.back() = p;
        } else {
            passes.push_back(p);
        }
        last_k = k;
    }
    return passes;
}

/// Mean interaction time: first pass, or nothing if the centre never enters the disc.
inline std::optional<double> interaction_time(const Branch& branch, const Meter& meter) {
    const auto passes = interaction_passes(branch, meter);
    if (passes.empty()) return std::nullopt;
    return passes.front().t;
}

// ---------------------------------------------------------------------------

struct WeakValueOptions {
    double support_floor = 1e-12;    // window probability relative to total weight
    double separation_ratio = 1e-6;  // runner-up / dominant window weight
    double overlap_floor = 1e-12;    // |<chi_L|psi_J>| for normalised branches
};

struct NoSupportError : NumericalError {
    NoSupportError(bool psi_side, const std::string& what)
        : NumericalError("weak_measurement", what), psi(psi_side) {}
    bool psi;
};

struct BranchOverlapError : NumericalError {
    explicit BranchOverlapError(const std::string& what) : NumericalError("weak_measurement", what) {}
};

struct NoWeakValueError : NumericalError {
    NoWeakValueError(double magnitude, const std::string& what)
        : NumericalError("weak_measurement", what), overlap_magnitude(magnitude) {}
    double overlap_magnitude;
};

struct LocalWeakValue {
    CVec2 value;
    std::size_t psi_branch = 0;
    std::size_t chi_branch = 0;
    Complex overlap;  // conj(d_L) c_J <chi_L|psi_J>
    double weight = 0.0;
};

namespace detail {

struct WindowSelection {
    std::size_t dominant = 0;
    double dominant_weight = 0.0;
    double runner_up = 0.0;
    double total = 0.0;
};

inline WindowSelection select_in_window(const Superposition& s, double t, const Meter& meter) {
    WindowSelection sel;
    for (std::size_t j = 0; j < s.size(); ++j) {
        const double c2 = std::norm(s[j].coefficient());
        sel.total += c2;
        const double w = c2 * box_probability(s[j].state_at(t), meter.R0, meter.range());
        if (w > sel.dominant_weight) {
            sel.runner_up = sel.dominant_weight;
            sel.dominant_weight = w;
            sel.dominant = j;
        } else if (w > sel.runner_up) {
            sel.runner_up = w;
        }
    }
    return sel;
}

}  // namespace detail

/// Weak value recorded by `meter` at t_k.
inline LocalWeakValue weak_value_position(const Superposition& psi, const Superposition& chi, double t_k,
                                          const Meter& meter, const WeakValueOptions& opt = {}) {
    const auto sp = detail::select_in_window(psi, t_k, meter);
    if (!(sp.dominant_weight >= opt.support_floor * sp.total))
        throw NoSupportError(true, "psi vanishes in the window of meter " + meter.id);
    if (sp.runner_up > opt.separation_ratio * sp.dominant_weight)
        throw BranchOverlapError("meter " + meter.id +
                                 " sits where psi branches overlap; use the grid oracle for this configuration");
    const auto sc = detail::select_in_window(chi, t_k, meter);
    if (!(sc.dominant_weight >= opt.support_floor * sc.total))
        throw NoSupportError(false, "chi vanishes in the window of meter " + meter.id);
    if (sc.runner_up > opt.separation_ratio * sc.dominant_weight)
        throw BranchOverlapError("meter " + meter.id + " sits where postselected components overlap");

    const ComplexGaussian a = chi[sc.dominant].state_at(t_k);
    const ComplexGaussian b = psi[sp.dominant].state_at(t_k);
    const Complex ov = overlap(a, b);
    if (!(std::abs(ov) >= opt.overlap_floor)) {
        throw NoWeakValueError(std::abs(ov), "postselection overlap below floor at meter " + meter.id);
    }
    LocalWeakValue out;
    out.value = mean_r(a, b);
    out.psi_branch = sp.dominant;
    out.chi_branch = sc.dominant;
    out.overlap = std::conj(chi[sc.dominant].coefficient()) * psi[sp.dominant].coefficient() * ov;
    out.weight = std::norm(out.overlap);
    return out;
}

namespace detail {

// sum_{l,j} conj(d_l) c_j <chi_l|psi_j> and the matching r-moment, scaled by
// exp(-shift) so that the largest term is O(1).
struct PairSums {
    Complex amp;
    CVec2 moment;
    double shift = 0.0;
};

inline PairSums pair_sums(const Superposition& psi, const Superposition& chi, double t) {
    std::vector<Complex> logs;
    std::vector<CVec2> means;
    std::vector<Complex> coeffs;
    for (const auto& cb : chi.branches) {
        const auto a = cb.state_at(t);
        for (const auto& pb : psi.branches) {
            const auto b = pb.state_at(t);
            logs.push_back(log_overlap(a, b));
            means.push_back(mean_r(a, b));
            coeffs.push_back(std::conj(cb.coefficient()) * pb.coefficient());
        }
    }
    PairSums s;
    s.shift = -1e300;
    for (const auto& l : logs) s.shift = std::max(s.shift, l.real());
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const Complex term = coeffs[i] * std::exp(logs[i] - s.shift);
        s.amp += term;
        s.moment = s.moment + term * means[i];
    }
    return s;
}

}  // namespace detail

/// Full-space ratio <chi|r|psi>/<chi|psi> summed over every branch pair.
inline CVec2 global_weak_value(const Superposition& psi, const Superposition& chi, double t) {
    const auto s = detail::pair_sums(psi, chi, t);
    if (std::abs(s.amp) == 0.0) throw NoWeakValueError(0.0, "vanishing postselection amplitude");
    return (1.0 / s.amp) * s.moment;
}

/// <chi(t)|psi(t)>.
inline Complex postselection_amplitude(const Superposition& psi, const Superposition& chi, double t) {
    const auto s = detail::pair_sums(psi, chi, t);
    return s.amp * std::exp(s.shift);
}

// ---------------------------------------------------------------------------

struct WeakValueSample {
    std::string meter;
    double t_k = 0.0;
    CVec2 value;
    std::size_t branch = 0;
    std::size_t chi_branch = 0;
    double weight = 0.0;
};

enum class SilentReason { NeverInRange, NoPsiSupport, NoChiSupport, VanishingOverlap, AfterPostselection };

inline const char* to_string(SilentReason r) {
    switch (r) {
        case SilentReason::NeverInRange: return "never-in-range";
        case SilentReason::NoPsiSupport: return "no-psi-support";
        case SilentReason::NoChiSupport: return "no-chi-support";
        case SilentReason::VanishingOverlap: return "vanishing-overlap";
        case SilentReason::AfterPostselection: return "after-postselection";
    }
    return "unknown";
}

struct SilentMeter {
    std::string meter;
    SilentReason reason;
    std::optional<double> t_k;
};

struct WeakTrajectory {
    std::vector<WeakValueSample> samples;  // ordered by t_k
    std::vector<SilentMeter> silent;

    const WeakValueSample* find(const std::string& id) const {
        for (const auto& s : samples)
            if (s.meter == id) return &s;
        return nullptr;
    }
    const SilentMeter* find_silent(const std::string& id) const {
        for (const auto& s : silent)
            if (s.meter == id) return &s;
        return nullptr;
    }
};

inline WeakTrajectory weak_trajectory(const Superposition& psi, const Superposition& chi,
                                      const std::vector<Meter>& meters, const WeakValueOptions& opt = {}) {
    std::set<std::string> ids;
    for (const auto& m : meters) {
        m.validate();
        if (!ids.insert(m.id).second) throw ConfigError("duplicate meter id " + m.id);
    }
    const double chi_end = chi.size() > 0 ? chi[0].grid().end() : -1.0;

    WeakTrajectory wt;
    for (const auto& m : meters) {
        std::optional<double> t_k;
        for (const auto& b : psi.branches) {
            const auto t = interaction_time(b, m);
            if (t && (!t_k || *t < *t_k)) t_k = t;
        }
        if (!t_k) {
            wt.silent.push_back({m.id, SilentReason::NeverInRange, std::nullopt});
            continue;
        }
        if (*t_k > chi_end + 1e-12) {
            wt.silent.push_back({m.id, SilentReason::AfterPostselection, t_k});
            continue;
        }
        try {
            const auto wv = weak_value_position(psi, chi, *t_k, m, opt);
            wt.samples.push_back({m.id, *t_k, wv.value, wv.psi_branch, wv.chi_branch, wv.weight});
        } catch (const NoSupportError& e) {
            wt.silent.push_back({m.id, e.psi ? SilentReason::NoPsiSupport : SilentReason::NoChiSupport, t_k});
        } catch (const NoWeakValueError&) {
            wt.silent.push_back({m.id, SilentReason::VanishingOverlap, t_k});
        }
    }
    std::stable_sort(wt.samples.begin(), wt.samples.end(),
                     [](const auto& a, const auto& b) { return a.t_k < b.t_k; });
    return wt;
}

inline void write_weak_trajectory_csv(std::ostream& os, const WeakTrajectory& wt, const std::vector<Meter>& meters) {
    csv::Writer w(os);
    w.header({"meter_id", "t_k", "re_x", "im_x", "re_y", "im_y", "weight", "branch", "status"});
    const double nan = std::nan("");
    for (const auto& s : wt.samples) {
        w << s.meter << s.t_k << s.value.x.real() << s.value.x.imag() << s.value.y.real() << s.value.y.imag()
          << s.weight << static_cast<int>(s.branch + 1) << "ok";
        w.end_row();
    }
    // Silent meters follow in configuration order.
    for (const auto& m : meters) {
        const auto* s = wt.find_silent(m.id);
        if (!s) continue;
        w << s->meter << (s->t_k ? *s->t_k : nan) << nan << nan << nan << nan << nan << -1 << to_string(s->reason);
        w.end_row();
    }
}

// ---------------------------------------------------------------------------
// Decomposition check: <r>_W - q_J is linear in the centre offset
// eps = q_J - q_f and momentum mismatch dp = p_J - p_f at t_k.

struct StructuralReport {
    Vec2 epsilon;
    Vec2 dp;
    Vec2 q_J;
    CVec2 value;
    CVec2 value_half;  // postselection moved half-way back towards retracing
    CVec2 coeff_epsilon;
    CVec2 coeff_dp;
    bool retracing = false;
    bool retracing_ok = true;
    double linearity_error = 0.0;  // |dev - 2 dev_half| / |dev|
    bool linearity_ok = true;

    bool passed() const { return retracing_ok && linearity_ok; }
};

inline StructuralReport structural_check(const Branch& psi_J, const Branch& chi, double t_k,
                                         double linearity_tolerance = 0.02) {
    const ComplexGaussian a = chi.state_at(t_k);
    const ComplexGaussian b = psi_J.state_at(t_k);
    StructuralReport r;
    r.q_J = b.q;
    r.epsilon = b.q - a.q;
    r.dp = b.p - a.p;
    r.value = mean_r(a, b);
    r.retracing = norm(r.epsilon) < 1e-12 && norm(r.dp) < 1e-12;
    if (r.retracing) {
        r.retracing_ok = abs_max(r.value - to_complex(r.q_J)) < 1e-10 && abs_max(CVec2{r.value.x.imag(), r.value.y.imag()}) < 1e-10;
    }
    ComplexGaussian half = a;
    half.q = b.q - 0.5 * r.epsilon;
    half.p = b.p - 0.5 * r.dp;
    r.value_half = mean_r(half, b);
    const CVec2 dev = r.value - to_complex(r.q_J);
    const CVec2 dev_half = r.value_half - to_complex(r.q_J);
    const double scale = abs_max(dev);
    r.linearity_error = scale > 0.0 ? abs_max(dev - Complex{2.0} * dev_half) / scale : 0.0;
    r.linearity_ok = r.linearity_error <= linearity_tolerance;

    // Unit probes of the two linear coefficients, per axis.
    for (std::size_t i = 0; i < kDim; ++i) {
        ComplexGaussian pe = a;
        pe.q = b.q;
        pe.p = b.p;
        pe.q[i] -= 1.0;
        r.coeff_epsilon[i] = mean_r(pe, b)[i] - b.q[i];
        ComplexGaussian pp = a;
        pp.q = b.q;
        pp.p = b.p;
        pp.p[i] -= 1.0;
        r.coeff_dp[i] = mean_r(pp, b)[i] - b.q[i];
    }
    return r;
}

// ---------------------------------------------------------------------------
// Pointer readout. The interaction multiplies the pointer Gaussian by
// exp(-i g <r>_W . R): the real part of the weak value shifts the pointer
// momentum, the imaginary part its position (by g Delta^2/2 Im <r>_W).

struct PointerReadout {
    Vec2 momentum_shift;
    Vec2 position_shift;
    ComplexGaussian final_pointer;
};

inline ComplexGaussian initial_pointer(const Meter& m) { return make_wavepacket(m.R0, {0.0, 0.0}, m.Delta); }

inline PointerReadout pointer_readout(const Meter& meter, const CVec2& wv) {
    meter.validate();
    PointerReadout r;
    const double half_d2 = 0.5 * meter.Delta * meter.Delta;
    for (std::size_t i = 0; i < kDim; ++i) {
        r.momentum_shift[i] = -meter.g * wv[i].real() * kHbar;
        r.position_shift[i] = meter.g * half_d2 * wv[i].imag();
    }
    ComplexGaussian g = initial_pointer(meter);
    g.q = meter.R0 + r.position_shift;
    g.p = r.momentum_shift;
    r.final_pointer = normalize(g);
    return r;
}

struct ShotEstimate {
    std::size_t n = 0;
    Vec2 mean;
    Vec2 standard_error;
};

/// Draws pointer momenta from the final pointer's momentum density.
inline ShotEstimate simulate_shots(const PointerReadout& readout, std::size_t n_shots, std::uint64_t seed) {
    if (n_shots < 1) throw ConfigError("simulate_shots: n_shots must be >= 1");
    std::mt19937_64 rng(seed);
    const Vec2 sigma = momentum_sigma(readout.final_pointer);
    ShotEstimate est;
    est.n = n_shots;
    for (std::size_t i = 0; i < kDim; ++i) {
        std::normal_distribution<double> dist(readout.final_pointer.p[i], sigma[i]);
        double mean = 0.0, m2 = 0.0;
        for (std::size_t k = 0; k < n_shots; ++k) {
            const double x = dist(rng);
            const double delta = x - mean;
            mean += delta / static_cast<double>(k + 1);
            m2 += delta * (x - mean);
        }
        const double var = n_shots > 1 ? m2 / static_cast<double>(n_shots - 1) : 0.0;
        est.mean[i] = mean;
        est.standard_error[i] = std::sqrt(var / static_cast<double>(n_shots));
    }
    return est;
}

/// Shots needed to resolve `shift` at `z` standard errors with per-shot spread sigma.
inline double shots_for_significance(double shift, double sigma, double z = 5.0) {
    const double r = z * sigma / shift;
    return r * r;
}

// ---------------------------------------------------------------------------
// First-order joint amplitude for a time-ordered sequence of meters:
//   <chi(t_f)|psi(t_f)> prod_k exp(-i g <r(t_k)>_W . R_k) phi_k(R_k)

struct SequencingError : NumericalError {
    explicit SequencingError(const std::string& what) : NumericalError("weak_measurement", what) {}
};

struct MeterFactor {
    std::string meter;
    double t_k = 0.0;
    CVec2 weak_value;
    CVec2 kick;  // factor(R) = exp(i kick . R), kick = -g <r>_W
    Complex factor_at_centre;

    Complex factor(Vec2 R) const { return std::exp(Complex{0.0, 1.0} * (kick.x * R.x + kick.y * R.y)); }
};

struct SequenceAmplitude {
    Complex total_overlap;
    std::vector<MeterFactor> factors;  // in interaction order
};

inline SequenceAmplitude sequence_amplitude(const Superposition& psi, const Superposition& chi,
                                            const std::vector<Meter>& meters, const WeakValueOptions& opt = {}) {
    const auto wt = weak_trajectory(psi, chi, meters, opt);
    std::map<std::string, const Meter*> by_id;
    for (const auto& m : meters) by_id[m.id] = &m;

    SequenceAmplitude out;
    const double t_f = chi[0].grid().end();
    out.total_overlap = postselection_amplitude(psi, chi, t_f);
    for (std::size_t k = 0; k < wt.samples.size(); ++k) {
        const auto& s = wt.samples[k];
        const Meter& m = *by_id.at(s.meter);
        if (k > 0) {
            const auto& prev = wt.samples[k - 1];
            const double tau = std::max(m.tau, by_id.at(prev.meter)->tau);
            if (s.t_k - prev.t_k < tau)
                throw SequencingError("interaction windows of meters " + prev.meter + " and " + s.meter + " overlap");
        }
        MeterFactor f;
        f.meter = s.meter;
        f.t_k = s.t_k;
        f.weak_value = s.value;
        f.kick = Complex{-m.g} * s.value;
        f.factor_at_centre = f.factor(m.R0);
        out.factors.push_back(f);
    }
    return out;
}

/// Joint amplitude at pointer positions R (one per factor, same order).
inline Complex joint_amplitude(const SequenceAmplitude& seq, const std::vector<Meter>& meters,
                               const std::vector<Vec2>& R) {
    if (R.size() != seq.factors.size()) throw ConfigError("joint_amplitude: one pointer position per factor");
    Complex a = seq.total_overlap;
    for (std::size_t k = 0; k < R.size(); ++k) {
        const auto it = std::find_if(meters.begin(), meters.end(), [&](const Meter& m) { return m.id == seq.factors[k].meter; });
        a *= seq.factors[k].factor(R[k]) * evaluate(initial_pointer(*it), R[k]);
    }
    return a;
}

}  // namespace weaktraj
