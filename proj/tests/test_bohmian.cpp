#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "weaktraj/bohmian.hpp"
#include "weaktraj/oracle.hpp"

using namespace weaktraj;

namespace {

const Superposition& three_branch() {
    static const Superposition psi = testing_support::three_branch_state();
    return psi;
}

Superposition single_branch() {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    return propagate_superposition({{1.0, {-7.0, 15.0}}}, {0.0, 0.0}, 1.0, pot, grid);
}

// Im(grad psi / psi) by central differences of the analytic field.
Vec2 fd_velocity(const Superposition& psi, Vec2 r, double t, double h = 1e-6) {
    const Complex v = evaluate_superposition(psi, r, t);
    const Complex dx = (evaluate_superposition(psi, {r.x + h, r.y}, t) - evaluate_superposition(psi, {r.x - h, r.y}, t)) / (2 * h);
    const Complex dy = (evaluate_superposition(psi, {r.x, r.y + h}, t) - evaluate_superposition(psi, {r.x, r.y - h}, t)) / (2 * h);
    return {(dx / v).imag(), (dy / v).imag()};
}

}  // namespace

TEST(Velocity, SingleBranchCentreMovesWithMomentum) {
    const auto psi = single_branch();
    for (double t : {0.0, 0.9, 2.2, 3.6}) {
        const auto s = psi[0].state_at(t);
        EXPECT_NEAR(norm(velocity(psi, s.q, t) - s.p), 0.0, 1e-10) << t;
    }
}

TEST(Velocity, MirrorBranchesHaveNoNormalComponent) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 2.0, 1e-3);
    const auto psi = propagate_superposition({{0.5, {5.0, 3.0}}, {0.5, {-5.0, 3.0}}}, {0.0, 0.0}, 1.0, pot, grid);
    for (double t : {0.3, 1.0, 1.7})
        for (double y : {-1.0, 0.5, 2.0}) EXPECT_NEAR(velocity(psi, {0.0, y}, t).x, 0.0, 1e-12);
}

TEST(Velocity, MatchesFiniteDifferencesInInterferenceRegion) {
    const auto& psi = three_branch();
    // Near trajectory II at t = 2, and in the overlap region near the origin early on.
    const Vec2 q2 = psi[1].state_at(2.0).q;
    for (Vec2 r : {q2, q2 + Vec2{0.3, -0.2}}) EXPECT_LT(norm(velocity(psi, r, 2.0) - fd_velocity(psi, r, 2.0)), 1e-4);
    for (Vec2 r : {Vec2{0.1, 0.2}, Vec2{-0.4, 0.3}}) EXPECT_LT(norm(velocity(psi, r, 0.05) - fd_velocity(psi, r, 0.05)), 1e-4);
}

TEST(WeakMomentum, SingleBranchCentreIsRealMomentum) {
    const auto psi = single_branch();
    const auto s = psi[0].state_at(1.3);
    const auto w = weak_momentum_value(psi, s.q, 1.3);
    EXPECT_NEAR(std::abs(w.x - s.p.x), 0.0, 1e-10);
    EXPECT_NEAR(std::abs(w.y - s.p.y), 0.0, 1e-10);
}

TEST(WeakMomentum, ImaginaryPartIsLogDensityGradient) {
    const auto psi = single_branch();
    const auto s = psi[0].state_at(1.3);
    const double d = 0.37;
    const auto w = weak_momentum_value(psi, s.q + Vec2{d, 0.0}, 1.3);
    EXPECT_NEAR(w.x.imag(), 2.0 * s.alpha[0].real() * d, 1e-12);
    EXPECT_NEAR(w.y.imag(), 0.0, 1e-12);
}

TEST(WeakMomentum, MatchesSpectralDerivative) {
    const auto& psi = three_branch();
    const double t = 0.05;
    oracle::Mesh2 mesh;
    mesh.n = {512, 512};
    mesh.lo = {-10.0, -10.0};
    mesh.length = {20.0, 20.0};
    const auto g = oracle::sample(mesh, psi, t);
    const auto dx = oracle::spectral_derivative(g, 0);
    const auto dy = oracle::spectral_derivative(g, 1);
    double worst = 0.0;
    int checked = 0;
    for (std::size_t i = 0; i < mesh.n[0]; i += 7) {
        for (std::size_t j = 0; j < mesh.n[1]; j += 7) {
            const Vec2 r{mesh.coord(0, i), mesh.coord(1, j)};
            if (norm(r) > 1.5) continue;
            const std::size_t idx = i * mesh.n[1] + j;
            const CVec2 ref{Complex{0.0, -1.0} * dx[idx] / g.values[idx], Complex{0.0, -1.0} * dy[idx] / g.values[idx]};
            worst = std::max(worst, abs_max(weak_momentum_value(psi, r, t) - ref));
            ++checked;
        }
    }
    EXPECT_GT(checked, 50);
    EXPECT_LT(worst, 1e-5);
}

TEST(Velocity, NodeIsReported) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 1.0, 1e-3);
    const auto psi = propagate_superposition({{1.0, {2.0, 0.0}}, {-1.0, {2.0, 0.0}}}, {0.0, 0.0}, 1.0, pot, grid);
    EXPECT_THROW(velocity(psi, {0.1, 0.1}, 0.5), NodeError);
    const auto tr = integrate_average_trajectory(psi, {0.1, 0.1}, 1.0, 0.0);
    EXPECT_TRUE(tr.aborted);
}

TEST(NearestBranch, LargestWeightedAmplitudeWins) {
    const auto& psi = three_branch();
    EXPECT_EQ(nearest_branch(psi, psi[0].state_at(1.0).q, 1.0), 0u);
    EXPECT_EQ(nearest_branch(psi, psi[1].state_at(1.0).q, 1.0), 1u);
    EXPECT_EQ(nearest_branch(psi, psi[2].state_at(1.0).q, 1.0), 2u);
    // Identical branches with equal weights: lowest index.
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 1.0, 1e-3);
    const auto twin = propagate_superposition({{0.5, {1.0, 0.0}}, {0.5, {1.0, 0.0}}}, {0.0, 0.0}, 1.0, pot, grid);
    EXPECT_EQ(nearest_branch(twin, {0.2, 0.0}, 0.5), 0u);
}

// ---------------------------------------------------------------------------

TEST(AverageTrajectory, SingleBranchRetracesClassicalPath) {
    const auto psi = single_branch();
    const Vec2 r_f = psi[0].state_at(3.65).q;
    const auto tr = integrate_average_trajectory(psi, r_f, 3.65, 0.0);
    ASSERT_FALSE(tr.aborted);
    double worst = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k) worst = std::max(worst, norm(tr.r[k] - psi[0].guide().state_at(tr.t[k]).q));
    EXPECT_LT(worst, 1e-6);
    EXPECT_NEAR(tr.t.back(), 0.0, 1e-12);
}

TEST(AverageTrajectory, BackwardForwardRoundTrip) {
    const auto& psi = three_branch();
    const Vec2 r_f = psi[0].state_at(3.65).q + Vec2{0.05, -0.05};
    const auto back = integrate_average_trajectory(psi, r_f, 3.65, 1.5);
    ASSERT_FALSE(back.aborted);
    const auto fwd = integrate_average_trajectory(psi, back.r.back(), 1.5, 3.65);
    ASSERT_FALSE(fwd.aborted);
    EXPECT_LT(norm(fwd.r.back() - r_f), 1e-6);
}

TEST(AverageTrajectory, FamilyVisitsThreeBranches) {
    const auto& psi = three_branch();
    const Vec2 r_f = psi[0].state_at(3.65).q;
    const auto tr = integrate_average_trajectory(psi, r_f, 3.65, 0.0);
    ASSERT_FALSE(tr.aborted);
    EXPECT_EQ(tr.r.front(), r_f);
    const auto it = itinerary(tr);
    ASSERT_EQ(it.size(), 3u);
    EXPECT_EQ(it[0], 2u);  // III
    EXPECT_EQ(it[1], 1u);  // II
    EXPECT_EQ(it[2], 0u);  // I
    EXPECT_EQ(tr.unconverged_steps, 0u);
}

TEST(AverageTrajectory, FamilyMembersDoNotCross) {
    const auto& psi = three_branch();
    const Vec2 r_f = psi[0].state_at(3.65).q;
    const auto fam = trajectory_family(psi, r_f, 3.65, 2.0);
    ASSERT_EQ(fam.size(), 9u);
    EXPECT_EQ(fam[4].r.front(), r_f);
    double worst_err = 0.0;
    for (const auto& tr : fam) {
        ASSERT_FALSE(tr.aborted);
        worst_err = std::max(worst_err, local_step_error(psi, tr));
    }
    double min_sep = 1e300;
    for (std::size_t a = 0; a < fam.size(); ++a)
        for (std::size_t b = a + 1; b < fam.size(); ++b)
            for (std::size_t k = 0; k < fam[a].size(); ++k) min_sep = std::min(min_sep, norm(fam[a].r[k] - fam[b].r[k]));
    EXPECT_GT(min_sep, 10.0 * worst_err);
    EXPECT_GT(min_sep, 0.0);
}

TEST(AverageTrajectory, ItineraryIgnoresUnresolvedSamples) {
    AverageTrajectory tr;
    tr.t = {0.0, 1.0, 2.0, 3.0, 4.0};
    tr.nearest = {1, 0, 1, 1, 0};
    tr.dominance = {5.0, 1.1, 3.0, 4.0, 2.5};
    const auto it = itinerary(tr);
    EXPECT_EQ(it, (std::vector<std::size_t>{1, 0}));
}

TEST(AverageTrajectory, CsvHasOneRowPerSample) {
    const auto psi = single_branch();
    const auto tr = integrate_average_trajectory(psi, psi[0].state_at(0.1).q, 0.1, 0.0);
    std::ostringstream os;
    write_average_trajectories_csv(os, {tr});
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "trajectory,t,x,y,nearest_branch,abs2_psi,abort_flag");
    std::size_t rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, tr.size());
}

TEST(Continuity, ResidualIsSmall) {
    const auto& psi = three_branch();
    for (double t : {0.4, 1.6}) {
        const Vec2 c = psi[1].state_at(t).q;
        const SnapshotMesh mesh{c - Vec2{3.0, 3.0}, c + Vec2{3.0, 3.0}, 24, 24};
        EXPECT_LT(continuity_residual(psi, t, mesh), 1e-5) << t;
    }
}
