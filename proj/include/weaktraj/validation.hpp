#pragma once

// Acceptance suite: numbered checks with measured values and tolerances.

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "bohmian.hpp"
#include "oracle.hpp"
#include "scenario.hpp"
#include "weak.hpp"

namespace weaktraj {

struct CheckResult {
    int criterion = 0;
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double tolerance = 0.0;
    double seconds = 0.0;
    std::string detail;
};

struct AcceptanceOptions {
    double omega_scale = 1.0;
    unsigned threads = 1;
    std::size_t oracle_points = 512;
    double oracle_dt = 5e-4;
    std::function<void(const CheckResult&)> on_result;  // called as each check finishes
};

namespace acceptance {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline ScenarioModel scenario_model(const std::string& name, const AcceptanceOptions& opt) {
    return build_model(parse_config(bundled_scenario(name)), {opt.omega_scale, opt.threads});
}

// 1. Thawed Gaussian vs split-step grid for branch I.
inline CheckResult oracle_equivalence(const AcceptanceOptions& opt) {
    CheckResult r{1, "oracle equivalence of propagation"};
    r.tolerance = 1e-4;
    const auto m = scenario_model("fig1", opt);
    const Branch& b = m.psi[0];
    const auto mesh = oracle::auto_mesh({&b}, opt.oracle_points);
    auto g = oracle::sample(mesh, b.state(0), m.grid.begin());
    const auto model = oracle::tdlo_model(m.pot);
    std::ostringstream d;
    double worst = 0.0;
    for (double t : {0.7, 2.0, 3.15, 3.65}) {
        oracle::grid_propagate(g, model, t, opt.oracle_dt);
        const double l2 = oracle::l2_distance(oracle::sample(mesh, b.state_at(t), t), g);
        worst = std::max(worst, l2);
        d << "t=" << t << " L2=" << fmt(l2) << "; ";
    }
    r.measured = worst;
    r.detail = d.str() + "mesh " + std::to_string(opt.oracle_points) + "^2";
    r.passed = worst < r.tolerance;
    return r;
}

// 2. Retracing weak trajectories of the fig3a and fig2a setups.
inline CheckResult retracing(const AcceptanceOptions& opt) {
    CheckResult r{2, "retracing weak trajectory"};
    r.tolerance = 1e-8;
    std::ostringstream d;
    bool ok = true;
    double worst = 0.0, worst_im = 0.0;

    const auto a = scenario_model("fig3a", opt);
    const auto wa = weak_trajectory(a.psi, a.chi, a.meters);
    const double expected_t[] = {0.7, 2.0, 3.15};
    if (wa.samples.size() != 3 || !wa.silent.empty()) {
        ok = false;
        d << "fig3a: expected three samples; ";
    } else {
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& s = wa.samples[k];
            if (std::abs(s.t_k - expected_t[k]) > 1e-9) ok = false;
            const Vec2 q = a.psi[0].guide().state_at(s.t_k).q;
            worst = std::max(worst, abs_max(s.value - to_complex(q)));
            worst_im = std::max(worst_im, norm(imag(s.value)));
        }
    }
    const auto b = scenario_model("fig2a", opt);
    const auto wb = weak_trajectory(b.psi, b.chi, b.meters);
    const bool d1 = wb.find_silent("D1") != nullptr;
    const bool d2 = wb.find_silent("D2") != nullptr;
    const auto* d3 = wb.find("D3");
    if (!d1 || !d2 || !d3 || wb.samples.size() != 1) {
        ok = false;
        d << "fig2a: expected D1, D2 silent and a D3 sample; ";
    } else {
        const Vec2 q = b.psi[0].guide().state_at(3.15).q;
        worst = std::max(worst, abs_max(d3->value - to_complex(q)));
        worst_im = std::max(worst_im, norm(imag(d3->value)));
        d << "D1 " << to_string(wb.find_silent("D1")->reason) << ", D2 " << to_string(wb.find_silent("D2")->reason)
          << "; ";
    }
    r.measured = worst;
    r.detail = d.str() + "max |Im| " + fmt(worst_im);
    r.passed = ok && worst < 1e-8 && worst_im < 1e-10;
    return r;
}

// 3. Three-term postselection at the common return time.
inline CheckResult multi_branch(const AcceptanceOptions& opt) {
    CheckResult r{3, "multi-branch postselection"};
    r.tolerance = 1e-6;
    const auto cfg = parse_config(bundled_scenario("fig3b"));
    const auto m = build_model(cfg, {opt.omega_scale, opt.threads});
    const auto wt = weak_trajectory(m.psi, m.chi, m.meters);
    bool ok = wt.silent.empty() && wt.samples.size() == m.meters.size();
    double worst = 0.0;
    for (const auto& mc : cfg.meters) {
        const auto* s = wt.find(mc.id);
        if (!s) {
            ok = false;
            continue;
        }
        const Vec2 q = m.psi[m.branch_index(mc.on_branch)].guide().state_at(s->t_k).q;
        worst = std::max(worst, abs_max(s->value - to_complex(q)));
    }
    r.measured = worst;
    r.detail = std::to_string(wt.samples.size()) + " of " + std::to_string(m.meters.size()) + " meters read";
    r.passed = ok && worst < r.tolerance;
    return r;
}

// 4. Simultaneous return to the origin.
inline CheckResult simultaneous_return(const AcceptanceOptions& opt) {
    CheckResult r{4, "simultaneous return"};
    r.tolerance = 1e-6;
    const auto cfg = parse_config(bundled_scenario("fig3b"));
    PotentialParams pot = cfg.potential.resolve();
    for (auto& a : pot.axis) a.omega *= opt.omega_scale;
    const TimeGrid grid(0.0, kReturnTime, 1e-3);
    std::ostringstream d;
    double worst = 0.0;
    for (const auto& b : cfg.preselection.branches) {
        const auto tr = integrate_trajectory({0.0, 0.0}, b.p, pot, grid);
        const double q = norm(tr.q(tr.size() - 1));
        worst = std::max(worst, q);
        d << b.label << " |q(t_O)|=" << fmt(q) << "; ";
    }
    r.measured = worst;
    r.detail = d.str();
    r.passed = worst < r.tolerance;
    return r;
}

// 5. Coupled system-meter simulation against the first-order readout.
inline CheckResult first_order_validity(const AcceptanceOptions& opt) {
    CheckResult r{5, "first-order weak-measurement validity"};
    r.tolerance = 0.01;
    const auto m = scenario_model("fig3a", opt);
    const Branch& b = m.psi[0];
    const double t_k = 0.7;
    const auto at_k = b.guide().state_at(t_k);
    const auto at_f = b.guide().state_at(m.t_f);

    oracle::CoupledSetup s;
    s.axis = m.pot.axis[0];
    s.mass = m.pot.m;
    s.q0 = 0.0;
    s.p0 = 17.0;
    s.delta = 1.0;
    s.chi_q = at_f.q.x + 0.3;
    s.chi_p = at_f.p.x;
    s.chi_delta = 1.0;
    s.t_f = m.t_f;
    s.R0 = at_k.q.x;
    s.Delta = 2.0;
    s.t_k = t_k;
    s.tau = 1e-2;
    s.window = 1e-2;
    s.dt = opt.oracle_dt;

    // Analytic x weak value for the same one-dimensional problem.
    const PotentialParams iso = PotentialParams::isotropic(s.axis, s.mass);
    const TimeGrid grid(0.0, s.t_f, 1e-3);
    const Branch psi = propagate_forward(make_wavepacket({s.q0, s.q0}, {s.p0, s.p0}, s.delta), iso, grid);
    const Branch chi = backward_postselected(make_wavepacket({s.chi_q, s.chi_q}, {s.chi_p, s.chi_p}, s.chi_delta),
                                             s.t_f, iso, grid);
    const Complex w = mean_r(chi.state_at(t_k), psi.state_at(t_k)).x;

    auto ratio = [&](double g) {
        s.g = g;
        const auto res = oracle::coupled_meter_simulate(s);
        return res.momentum_shift / (-g * w.real());
    };
    std::ostringstream d;
    d << "Re w=" << fmt(w.real()) << " Im w=" << fmt(w.imag()) << "; ";
    double g = 0.01;
    double r_g = ratio(g);
    double r_half = ratio(0.5 * g);
    for (int i = 0; i < 8 && !(std::abs(r_g - 1.0) <= r.tolerance && std::abs(r_half - 1.0) <= r.tolerance); ++i) {
        g *= 0.5;
        r_g = r_half;
        r_half = ratio(0.5 * g);
    }
    const double disc = std::abs(r_g - 1.0);
    const double disc_half = std::abs(r_half - 1.0);
    const double scaling = disc_half > 0.0 ? disc / disc_half : 0.0;
    d << "g0=" << g << " ratio(g0)=" << fmt(r_g) << " ratio(g0/2)=" << fmt(r_half) << " discrepancy scaling " << fmt(scaling);
    r.measured = disc;
    r.detail = d.str();
    r.passed = disc <= r.tolerance && disc_half <= r.tolerance && scaling >= 1.8 && scaling <= 2.2;
    return r;
}

// 6. Average trajectories visit D1, D2, D3; the weak trajectory does not.
inline CheckResult average_mismatch(const AcceptanceOptions& opt) {
    CheckResult r{6, "average-trajectory mismatch"};
    const auto m = scenario_model("fig2b", opt);
    const Vec2 centre = m.psi[0].guide().state_at(m.t_f).q;
    const auto family = trajectory_family(m.psi, centre, m.t_f, 0.0, 0.05, 1);
    const std::vector<std::size_t> expected{2, 1, 0};
    bool itineraries = true, captured = true, aborted = false;
    double worst_capture = 0.0;
    for (const auto& tr : family) {
        aborted = aborted || tr.aborted;
        if (itinerary(tr) != expected) itineraries = false;
        for (const auto& mt : m.meters) {
            double best = 1e300;
            for (const auto& p : tr.r) best = std::min(best, norm(p - mt.R0));
            worst_capture = std::max(worst_capture, best / (8.0 * mt.Delta));
            if (best >= 8.0 * mt.Delta) captured = false;
        }
    }
    const auto a = scenario_model("fig2a", opt);
    const auto wt = weak_trajectory(a.psi, a.chi, a.meters);
    const bool weak_skips = wt.find_silent("D1") && wt.find_silent("D2") && wt.find("D3");
    const bool mismatch = itineraries && captured && weak_skips;
    std::ostringstream d;
    d << "itineraries III->II->I " << (itineraries ? "yes" : "no") << ", captured " << (captured ? "yes" : "no")
      << " (worst distance / 8Delta " << fmt(worst_capture) << "), weak trajectory skips D1,D2 "
      << (weak_skips ? "yes" : "no") << (aborted ? ", node abort" : "");
    r.measured = worst_capture;
    r.tolerance = 1.0;
    r.detail = d.str();
    r.passed = mismatch && !aborted;
    return r;
}

// 7. Property suites.
inline CheckResult properties(const AcceptanceOptions& opt) {
    CheckResult r{7, "property suites"};
    std::ostringstream d;
    bool ok = true;
    auto report = [&](const char* name, double value, double tol) {
        const bool pass = value <= tol;
        ok = ok && pass;
        d << name << ' ' << fmt(value) << (pass ? " ok" : " FAIL") << "; ";
    };
    const auto m = scenario_model("fig1", opt);

    double sym = 0.0;
    for (const auto& b : m.psi.branches) sym = std::max(sym, b.guide().max_symplectic_defect());
    for (const auto& b : m.chi.branches) sym = std::max(sym, b.guide().max_symplectic_defect());
    report("symplecticity", sym, 1e-8);

    double erm = 0.0;
    for (std::size_t axis = 0; axis < 2; ++axis) {
        const auto sol = ermakov_solve(m.pot, axis, 1.0, 0.0, m.grid);
        const auto& tr = m.psi[0].guide();
        const double I0 = sol.invariant(0, tr.q(0)[axis], tr.p(0)[axis] / m.pot.m);
        for (std::size_t k = 0; k < tr.size(); ++k)
            erm = std::max(erm, std::abs(sol.invariant(k, tr.q(k)[axis], tr.p(k)[axis] / m.pot.m) - I0) / I0);
    }
    report("ermakov invariant", erm, 1e-8);

    double nrm = 0.0;
    for (const auto& b : m.psi.branches)
        for (std::size_t k = 0; k < b.size(); ++k) nrm = std::max(nrm, std::abs(norm2(b.state(k)) - 1.0));
    report("norm", nrm, 1e-10);

    double cont = 0.0;
    for (double t : {0.35, 0.7, 2.0, 3.15, 3.6}) {
        SnapshotMesh mesh;
        mesh.lo = {1e300, 1e300};
        mesh.hi = {-1e300, -1e300};
        for (const auto& b : m.psi.branches) {
            const auto s = b.state_at(t);
            const Vec2 sg = position_sigma(s);
            for (std::size_t i = 0; i < 2; ++i) {
                mesh.lo[i] = std::min(mesh.lo[i], s.q[i] - 3.0 * sg[i]);
                mesh.hi[i] = std::max(mesh.hi[i], s.q[i] + 3.0 * sg[i]);
            }
        }
        mesh.nx = mesh.ny = 64;
        cont = std::max(cont, continuity_residual(m.psi, t, mesh));
    }
    report("continuity", cont, 1e-5);

    const Vec2 centre = m.psi[0].guide().state_at(m.t_f).q;
    const auto family = trajectory_family(m.psi, centre, m.t_f, 0.0, 0.05, 1);
    double step_err = 0.0;
    for (const auto& tr : family) step_err = std::max(step_err, local_step_error(m.psi, tr));
    double min_sep = 1e300;
    for (std::size_t a = 0; a < family.size(); ++a)
        for (std::size_t b = a + 1; b < family.size(); ++b) {
            const std::size_t n = std::min(family[a].size(), family[b].size());
            for (std::size_t k = 0; k < n; ++k) min_sep = std::min(min_sep, norm(family[a].r[k] - family[b].r[k]));
        }
    const bool no_cross = min_sep > 10.0 * step_err;
    ok = ok && no_cross;
    d << "no-crossing min separation " << fmt(min_sep) << " vs 10x step error " << fmt(10.0 * step_err)
      << (no_cross ? " ok" : " FAIL") << "; ";

    const auto b3 = scenario_model("fig3b", opt);
    Superposition psi2 = b3.psi;
    Superposition chi2 = b3.chi;
    const Complex s1{0.3, -1.7}, s2{-2.5, 0.4};
    for (auto& b : psi2.branches) b.set_coefficient(s1 * b.coefficient());
    for (auto& b : chi2.branches) b.set_coefficient(s2 * b.coefficient());
    double inv = 0.0;
    for (double t : {0.7, 2.0}) {
        const CVec2 a = global_weak_value(b3.psi, b3.chi, t);
        const CVec2 c = global_weak_value(psi2, chi2, t);
        inv = std::max(inv, abs_max(a - c) / std::max(1.0, abs_max(a)));
    }
    const auto w1 = weak_trajectory(b3.psi, b3.chi, b3.meters);
    const auto w2 = weak_trajectory(psi2, chi2, b3.meters);
    for (std::size_t k = 0; k < w1.samples.size() && k < w2.samples.size(); ++k)
        inv = std::max(inv, abs_max(w1.samples[k].value - w2.samples[k].value) / std::max(1.0, abs_max(w1.samples[k].value)));
    report("weak-value rescaling invariance", inv, 1e-12);

    r.detail = d.str();
    r.passed = ok;
    r.measured = ok ? 0.0 : 1.0;
    return r;
}

}  // namespace acceptance

inline std::vector<CheckResult> run_acceptance(const AcceptanceOptions& opt = {}) {
    using Check = CheckResult (*)(const AcceptanceOptions&);
    const Check checks[] = {acceptance::oracle_equivalence, acceptance::retracing,        acceptance::multi_branch,
                            acceptance::simultaneous_return, acceptance::first_order_validity, acceptance::average_mismatch,
                            acceptance::properties};
    const double runtime_limit[] = {180.0, 0.0, 0.0, 0.0, 300.0, 0.0, 0.0};
    std::vector<CheckResult> out;
    int n = 0;
    for (auto check : checks) {
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult r;
        try {
            r = check(opt);
        } catch (const std::exception& e) {
            r.criterion = n + 1;
            r.name = "criterion " + std::to_string(n + 1);
            r.passed = false;
            r.detail = std::string("error: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (runtime_limit[n] > 0.0 && r.seconds > runtime_limit[n]) {
            r.passed = false;
            r.detail += "; runtime " + acceptance::fmt(r.seconds) + " s over limit";
        }
        if (opt.on_result) opt.on_result(r);
        out.push_back(r);
        ++n;
    }
    return out;
}

inline json acceptance_report(const std::vector<CheckResult>& results) {
    json j;
    j["version"] = kVersion;
    j["passed"] = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
    j["checks"] = json::array();
    for (const auto& r : results)
        j["checks"].push_back({{"criterion", r.criterion},
                               {"name", r.name},
                               {"passed", r.passed},
                               {"measured", r.measured},
                               {"tolerance", r.tolerance},
                               {"seconds", r.seconds},
                               {"detail", r.detail}});
    return j;
}

inline std::string format_result(const CheckResult& r) {
    std::ostringstream os;
    os << "criterion " << r.criterion << ": " << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  measured "
       << acceptance::fmt(r.measured) << " tol " << acceptance::fmt(r.tolerance) << "  (" << acceptance::fmt(r.seconds)
       << " s)  " << r.detail;
    return os.str();
}

}  // namespace weaktraj
