#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "weaktraj/classical.hpp"

using namespace weaktraj;

namespace {

const std::array<Vec2, 3> kMomenta{Vec2{17.0, 7.0}, Vec2{-7.0, 15.0}, Vec2{0.0, 15.0}};

PotentialParams harmonic(double w0) { return PotentialParams::isotropic({0.5 * w0 * w0, 0.0, 1.0}); }

}  // namespace

TEST(TimeGrid, CoversInterval) {
    const TimeGrid g(0.0, 3.65, 1e-3);
    EXPECT_EQ(g.size(), 3651u);
    EXPECT_DOUBLE_EQ(g[0], 0.0);
    EXPECT_DOUBLE_EQ(g[g.size() - 1], 3.65);
    EXPECT_LE(g.step(), 1e-3);
    EXPECT_EQ(g.nearest(0.7), 700u);
    EXPECT_TRUE(g.contains(3.65));
    EXPECT_FALSE(g.contains(3.7));
    EXPECT_THROW(TimeGrid(1.0, 1.0, 1e-3), ConfigError);
    EXPECT_THROW(TimeGrid(0.0, 1.0, 0.0), ConfigError);
}

TEST(Trajectory, HarmonicLimitIsCosine) {
    const double w0 = 1.7;
    const TimeGrid grid(0.0, 10.0, 1e-3);
    const auto tr = integrate_trajectory({1.0, 0.0}, {0.0, 0.0}, harmonic(w0), grid);
    double worst = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        worst = std::max(worst, std::abs(tr.q(k).x - std::cos(w0 * tr.time(k))));
        worst = std::max(worst, std::abs(tr.p(k).x + w0 * std::sin(w0 * tr.time(k))));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(Trajectory, HarmonicActionMatchesClosedForm) {
    // x = cos(w t): L = (x'^2 - w^2 x^2)/2 = -(w^2/2) cos(2 w t), S = -(w/4) sin(2 w t).
    const double w0 = 1.3;
    const TimeGrid grid(0.0, 4.0, 1e-3);
    const auto tr = integrate_trajectory({1.0, 0.0}, {0.0, 0.0}, harmonic(w0), grid);
    for (std::size_t k = 0; k < tr.size(); k += 500)
        EXPECT_NEAR(tr.action(k), -0.25 * w0 * std::sin(2.0 * w0 * tr.time(k)), 1e-10);
}

TEST(Trajectory, LinearInMomentumFromOrigin) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    const auto a = integrate_trajectory({0.0, 0.0}, {17.0, 7.0}, pot, grid);
    const auto b = integrate_trajectory({0.0, 0.0}, {34.0, 14.0}, pot, grid);
    for (std::size_t k = 0; k < a.size(); k += 50) {
        EXPECT_NEAR(b.q(k).x, 2.0 * a.q(k).x, 1e-12 * (1.0 + std::abs(a.q(k).x)));
        EXPECT_NEAR(b.q(k).y, 2.0 * a.q(k).y, 1e-12 * (1.0 + std::abs(a.q(k).y)));
    }
}

TEST(Trajectory, SuperpositionOfInitialConditions) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    const Vec2 q1{0.3, -0.2}, p1{1.0, 2.0}, q2{-1.0, 0.5}, p2{-3.0, 0.7};
    const auto a = integrate_trajectory(q1, p1, pot, grid);
    const auto b = integrate_trajectory(q2, p2, pot, grid);
    const auto c = integrate_trajectory(q1 + q2, p1 + p2, pot, grid);
    for (std::size_t k = 0; k < a.size(); k += 50) {
        EXPECT_NEAR(norm(c.q(k) - (a.q(k) + b.q(k))), 0.0, 1e-11);
        EXPECT_NEAR(norm(c.p(k) - (a.p(k) + b.p(k))), 0.0, 1e-11);
    }
}

TEST(Trajectory, SimultaneousReturnToOrigin) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, kReturnTime, 1e-3);
    for (const auto& p : kMomenta) {
        const auto tr = integrate_trajectory({0.0, 0.0}, p, pot, grid);
        EXPECT_LT(norm(tr.q(tr.size() - 1)), 1e-6) << p.x << "," << p.y;
        // The excursion is large before the return.
        EXPECT_GT(norm(tr.q(tr.size() / 2)), 1.0);
    }
}

TEST(Trajectory, Symplectic) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    for (const auto& p : kMomenta) {
        const auto tr = integrate_trajectory({0.0, 0.0}, p, pot, grid);
        EXPECT_LT(tr.max_symplectic_defect(), 1e-8);
        for (std::size_t k = 0; k < tr.size(); k += 365)
            for (const auto& s : tr.sample(k).stability) EXPECT_NEAR(s.det(), 1.0, 1e-8);
    }
}

TEST(Trajectory, TimeReversal) {
    const auto pot = default_potential();
    FlowState s;
    s.q = {0.4, -0.3};
    s.p = {17.0, 7.0};
    s.stability = {Stability{1, 0, 0, 1}, Stability{1, 0, 0, 1}};
    const auto f = integrate_flow(s, 0.0, 3.65, pot, 1e-3);
    const auto back = integrate_flow(f, 3.65, 0.0, pot, 1e-3);
    EXPECT_LT(norm(back.q - s.q), 1e-9);
    EXPECT_LT(norm(back.p - s.p), 1e-9);
}

TEST(Trajectory, HamiltonsEquations) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    const auto tr = integrate_trajectory({0.0, 0.0}, {-7.0, 15.0}, pot, grid);
    const double h = grid.step();
    for (std::size_t k = 1; k + 1 < tr.size(); k += 97) {
        const Vec2 dq = (1.0 / (2.0 * h)) * (tr.q(k + 1) - tr.q(k - 1));
        const Vec2 dp = (1.0 / (2.0 * h)) * (tr.p(k + 1) - tr.p(k - 1));
        const double t = tr.time(k);
        EXPECT_NEAR(norm(dq - tr.p(k)), 0.0, 1e-4);
        const Vec2 force{-2.0 * pot.V(0, t) * tr.q(k).x, -2.0 * pot.V(1, t) * tr.q(k).y};
        EXPECT_NEAR(norm(dp - force), 0.0, 1e-4);
    }
}

TEST(Trajectory, StateBetweenSamples) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    const auto tr = integrate_trajectory({0.0, 0.0}, {17.0, 7.0}, pot, grid);
    FlowState s0 = tr.sample(0);
    for (double t : {0.12345, 1.70004, 3.1415}) {
        const auto ref = integrate_flow(s0, 0.0, t, pot, 1e-4);
        const auto got = tr.state_at(t);
        EXPECT_LT(norm(got.q - ref.q), 1e-9) << t;
        EXPECT_LT(norm(got.p - ref.p), 1e-9) << t;
    }
    EXPECT_THROW(tr.state_at(4.0), RangeError);
}

TEST(Trajectory, AnchoredAtFinalSample) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    const auto fwd = integrate_trajectory({0.0, 0.0}, {17.0, 7.0}, pot, grid);
    const std::size_t last = fwd.size() - 1;
    const auto back = integrate_trajectory_anchored(fwd.q(last), fwd.p(last), pot, grid, last);
    double worst = 0.0;
    for (std::size_t k = 0; k < fwd.size(); ++k) worst = std::max(worst, norm(back.q(k) - fwd.q(k)));
    EXPECT_LT(worst, 1e-9);
}

TEST(Trajectory, CsvLayout) {
    const TimeGrid grid(0.0, 0.01, 1e-3);
    const auto tr = integrate_trajectory({0.0, 0.0}, {1.0, 2.0}, default_potential(), grid);
    std::ostringstream os;
    tr.write_csv(os);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header.rfind("t,qx,qy,px,py", 0), 0u) << header;
    std::size_t rows = 0;
    for (std::string line; std::getline(is, line);) ++rows;
    EXPECT_EQ(rows, tr.size());
}

// ---------------------------------------------------------------------------

TEST(Ermakov, StationaryPinneySolution) {
    const double w0 = 1.3;
    const TimeGrid grid(0.0, 10.0, 1e-3);
    const auto e = ermakov_solve(harmonic(w0), 0, 1.0 / std::sqrt(w0), 0.0, grid);
    for (std::size_t k = 0; k < e.rho.size(); ++k) EXPECT_NEAR(e.rho[k], 1.0 / std::sqrt(w0), 1e-10);
}

TEST(Ermakov, InvariantConservedInHarmonicLimit) {
    const double w0 = 1.3;
    const auto pot = harmonic(w0);
    const TimeGrid grid(0.0, 10.0, 1e-3);
    const auto e = ermakov_solve(pot, 0, 1.0 / std::sqrt(w0), 0.0, grid);
    const auto tr = integrate_trajectory({0.7, 0.0}, {0.4, 0.0}, pot, grid);
    const double I0 = e.invariant(0, tr.q(0).x, tr.p(0).x);
    for (std::size_t k = 0; k < tr.size(); ++k) EXPECT_NEAR(e.invariant(k, tr.q(k).x, tr.p(k).x), I0, 1e-8);
}

TEST(Ermakov, InvariantConservedForDrivenOscillator) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    const auto tr = integrate_trajectory({0.0, 0.0}, {17.0, 7.0}, pot, grid);
    for (std::size_t axis : {0u, 1u}) {
        const auto e = ermakov_solve(pot, axis, 1.0, 0.0, grid);
        const double I0 = e.invariant(0, tr.q(0)[axis], tr.p(0)[axis]);
        for (std::size_t k = 0; k < tr.size(); ++k)
            EXPECT_NEAR(e.invariant(k, tr.q(k)[axis], tr.p(k)[axis]), I0, 1e-8 * std::max(1.0, I0));
    }
}

TEST(Ermakov, ReconstructionMatchesIntegration) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    const auto tr = integrate_trajectory({0.0, 0.0}, {17.0, 7.0}, pot, grid);
    for (std::size_t axis : {0u, 1u}) {
        const auto e = ermakov_solve(pot, axis, 0.8, 0.1, grid);
        const auto x = e.reconstruct(tr.q(0)[axis], tr.p(0)[axis]);
        double worst = 0.0;
        for (std::size_t k = 0; k < tr.size(); ++k) worst = std::max(worst, std::abs(x[k] - tr.q(k)[axis]));
        EXPECT_LT(worst, 1e-6);
    }
}

TEST(Ermakov, RejectsBadInput) {
    const TimeGrid grid(0.0, 1.0, 1e-3);
    EXPECT_THROW(ermakov_solve(default_potential(), 0, 0.0, 0.0, grid), ConfigError);
    EXPECT_THROW(ermakov_solve(default_potential(), 2, 1.0, 0.0, grid), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Calibration, ConstantFrequencyHasAnalyticRoot) {
    // V = xi with xi/omega^2 = 1/2: x'' = -omega^2 x, first zero at pi/omega.
    const AxisPotential tmpl{0.5, 0.0, 1.0};
    const auto pot = calibrate_return_time(PotentialParams::isotropic(tmpl), kReturnTime);
    EXPECT_NEAR(pot.axis[0].omega, kPi / kReturnTime, 1e-7);
    EXPECT_NEAR(pot.axis[0].xi, 0.5 * pot.axis[0].omega * pot.axis[0].omega, 1e-12);
}

TEST(Calibration, DrivenOscillatorZeroIsExact) {
    const auto pot = default_potential();
    for (std::size_t a = 0; a < 2; ++a) {
        const auto& ax = pot.axis[a];
        EXPECT_NEAR(ax.xi / (ax.omega * ax.omega), 1.0, 1e-12);
        EXPECT_NEAR(ax.ups / (ax.omega * ax.omega), 0.3, 1e-12);
        const auto probe = probe_fundamental(ax, kReturnTime, 1e-4);
        EXPECT_LT(std::abs(probe.value), 1e-8) << "axis " << a;
    }
    // x returns at its second zero, y at its first.
    EXPECT_EQ(probe_fundamental(pot.axis[0], kReturnTime, 1e-4).zeros_before, 1);
    EXPECT_EQ(probe_fundamental(pot.axis[1], kReturnTime, 1e-4).zeros_before, 0);
}

TEST(Calibration, DefaultPotentialValues) {
    const auto pot = default_potential();
    EXPECT_NEAR(pot.axis[0].omega, 1.603834125, 1e-6);
    EXPECT_NEAR(pot.axis[1].omega, 0.7391770366, 1e-6);
}

TEST(Calibration, OmegaPerturbationBreaksReturn) {
    auto pot = default_potential();
    for (auto& a : pot.axis) a.omega *= 1.01;
    const TimeGrid grid(0.0, kReturnTime, 1e-3);
    const auto tr = integrate_trajectory({0.0, 0.0}, {17.0, 7.0}, pot, grid);
    EXPECT_GT(norm(tr.q(tr.size() - 1)), 1e-3);
}

TEST(Calibration, RejectsBadTarget) {
    EXPECT_THROW(calibrate_return_time(default_potential(), -1.0), ConfigError);
}
