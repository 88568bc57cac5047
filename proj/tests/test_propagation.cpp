#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "weaktraj/oracle.hpp"
#include "weaktraj/propagation.hpp"

using namespace weaktraj;

namespace {

double max_field_error(const ComplexGaussian& a, const ComplexGaussian& b) {
    double worst = 0.0;
    const Vec2 s = position_sigma(b);
    for (double u : {-2.0, -0.5, 0.0, 1.0, 2.5})
        for (double v : {-1.5, 0.0, 0.7, 2.0})
            worst = std::max(worst, std::abs(evaluate(a, {b.q.x + u * s.x, b.q.y + v * s.y}) -
                                             evaluate(b, {b.q.x + u * s.x, b.q.y + v * s.y})));
    return worst;
}

}  // namespace

TEST(Propagation, FreeParticleSpreading) {
    const auto pot = PotentialParams::isotropic({0.0, 0.0, 1.0});
    const TimeGrid grid(0.0, 3.0, 1e-3);
    const auto s0 = make_wavepacket({0.0, 0.0}, {0.0, 0.0}, 1.0);
    const auto b = propagate_forward(s0, pot, grid);
    for (double t : {0.5, 1.0, 2.0, 3.0}) {
        const auto s = b.state_at(t);
        const Complex expect = s0.alpha[0] / (1.0 + Complex{0.0, 2.0} * s0.alpha[0] * t);
        EXPECT_NEAR(std::abs(s.alpha[0] - expect), 0.0, 1e-10) << t;
        EXPECT_NEAR(std::abs(s.alpha[1] - expect), 0.0, 1e-10) << t;
        EXPECT_NEAR(norm(s.q), 0.0, 1e-14);
        EXPECT_NEAR(norm2(s), 1.0, 1e-10);
    }
}

TEST(Propagation, CoherentStateKeepsItsWidth) {
    const double w0 = 1.4;
    const auto pot = PotentialParams::isotropic({0.5 * w0 * w0, 0.0, 1.0});
    const TimeGrid grid(0.0, 6.0, 1e-3);
    const auto s0 = make_wavepacket({1.0, -0.5}, {0.3, 0.8}, std::sqrt(2.0 / w0));
    ASSERT_NEAR(s0.alpha[0].real(), 0.5 * w0, 1e-14);
    const auto b = propagate_forward(s0, pot, grid);
    for (std::size_t k = 0; k < b.size(); k += 250) {
        const auto& s = b.state(k);
        const double t = grid[k];
        EXPECT_NEAR(std::abs(s.alpha[0] - s0.alpha[0]), 0.0, 1e-10);
        EXPECT_NEAR(std::abs(s.alpha[1] - s0.alpha[1]), 0.0, 1e-10);
        EXPECT_NEAR(s.q.x, 1.0 * std::cos(w0 * t) + 0.3 / w0 * std::sin(w0 * t), 1e-10);
    }
}

TEST(Propagation, NormAndWidthPositivity) {
    const auto psi = testing_support::three_branch_state();
    for (const auto& b : psi.branches) {
        for (std::size_t k = 0; k < b.size(); ++k) {
            const auto& s = b.state(k);
            ASSERT_GT(s.alpha[0].real(), 0.0);
            ASSERT_GT(s.alpha[1].real(), 0.0);
            ASSERT_NEAR(norm2(s), 1.0, 1e-10) << "k = " << k;
        }
    }
}

TEST(Propagation, GroupVelocityMatchesCentreMomentum) {
    const auto psi = testing_support::three_branch_state();
    for (const auto& b : psi.branches) {
        const double h = b.grid().step();
        for (std::size_t k = 1; k + 1 < b.size(); k += 73) {
            const Vec2 v = (1.0 / (2.0 * h)) * (b.state(k + 1).q - b.state(k - 1).q);
            EXPECT_NEAR(norm(v - b.state(k).p), 0.0, 1e-4 * norm(b.state(k).p) + 1e-6);
        }
    }
}

TEST(Propagation, StateBetweenSamplesIsSmooth) {
    const auto psi = testing_support::three_branch_state();
    const auto fine = testing_support::three_branch_state(3.65, 1e-4);
    for (double t : {0.70049, 2.00031, 3.14977}) {
        for (std::size_t j = 0; j < psi.size(); ++j)
            EXPECT_LT(max_field_error(psi[j].state_at(t), fine[j].state_at(t)), 1e-8) << t;
    }
}

TEST(Superposition, SingleBranchIsForwardPropagation) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 3.65, 1e-3);
    const auto single = propagate_superposition({{1.0, {17.0, 7.0}}}, {0.0, 0.0}, 1.0, pot, grid);
    const auto b = propagate_forward(make_wavepacket({0.0, 0.0}, {17.0, 7.0}, 1.0), pot, grid);
    for (double t : {0.0, 0.7, 2.0, 3.65}) {
        const Vec2 r = b.state_at(t).q + Vec2{0.3, -0.2};
        EXPECT_EQ(evaluate_superposition(single, r, t), evaluate(b.state_at(t), r));
    }
    EXPECT_THROW(propagate_superposition({}, {0.0, 0.0}, 1.0, pot, grid), ConfigError);
}

TEST(Superposition, CoincidentBranchesInterfereConstructively) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 2.0, 1e-3);
    const Complex c{0.4, 0.1};
    const auto two = propagate_superposition({{c, {3.0, 1.0}}, {c, {3.0, 1.0}}}, {0.0, 0.0}, 1.0, pot, grid);
    for (double t : {0.0, 1.0, 2.0}) {
        const Vec2 r = two[0].state_at(t).q;
        EXPECT_NEAR(std::abs(evaluate_superposition(two, r, t) - 2.0 * c * evaluate(two[0].state_at(t), r)), 0.0,
                    1e-14);
    }
}

TEST(Superposition, InitialNormMatchesQuadrature) {
    const auto pot = default_potential();
    const TimeGrid grid(0.0, 1.0, 1e-3);
    const double c = 1.0 / std::sqrt(2.0);
    const auto psi = propagate_superposition({{c, {2.0, 0.0}}, {c, {-1.0, 0.5}}}, {0.0, 0.0}, 1.0, pot, grid);
    Complex analytic{};
    for (const auto& a : psi.branches)
        for (const auto& b : psi.branches)
            analytic += std::conj(a.coefficient()) * b.coefficient() * overlap(a.state(0), b.state(0));
    const Complex quad = testing_support::Quad2{{-9.0, -9.0}, {9.0, 9.0}, 512}(
        [&](Vec2 r) { return Complex{std::norm(evaluate_superposition(psi, r, 0.0))}; });
    EXPECT_NEAR(analytic.real(), quad.real(), 1e-8);
    EXPECT_GT(std::abs(analytic.real() - 1.0), 1e-3);  // branches are not orthogonal
}

TEST(Postselection, BackwardRoundTrip) {
    const auto psi = testing_support::three_branch_state();
    const auto& I = psi[0];
    const std::size_t last = I.size() - 1;
    const auto chi = backward_postselected(I.state(last), 3.65, default_potential(), I.grid());
    for (std::size_t k = 0; k < I.size(); k += 50) EXPECT_LT(max_field_error(chi.state(k), I.state(k)), 1e-10) << k;
}

TEST(Postselection, RetracingGuideFollowsBranch) {
    const auto psi = testing_support::three_branch_state();
    const auto& I = psi[0];
    const auto chi = backward_postselected(testing_support::retrace_state(I, 3.65), 3.65, default_potential(), I.grid());
    double worst = 0.0;
    for (std::size_t k = 0; k < I.size(); ++k) worst = std::max(worst, norm(chi.guide().q(k) - I.guide().q(k)));
    EXPECT_LT(worst, 1e-9);
}

TEST(Postselection, EarlierPostselectionTime) {
    const auto psi = testing_support::three_branch_state();
    const auto chi0 = make_wavepacket(psi[0].state_at(2.84).q, {0.0, 0.0}, 1.0);
    const auto chi = backward_postselected(chi0, 2.84, default_potential(), psi[0].grid());
    EXPECT_NEAR(chi.grid().end(), 2.84, 1e-12);
    EXPECT_LT(max_field_error(chi.state_at(2.84), chi0), 1e-12);
    EXPECT_THROW(backward_postselected(chi0, 5.0, default_potential(), psi[0].grid()), RangeError);
}

TEST(Snapshot, CsvRowsAndColumns) {
    const auto psi = testing_support::three_branch_state(1.0);
    SnapshotMesh mesh{{-2.0, -2.0}, {2.0, 2.0}, 5, 4};
    std::ostringstream os;
    write_snapshot_csv(os, mesh, [&](Vec2 r) { return evaluate_superposition(psi, r, 0.5); });
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "x,y,re_psi,im_psi,abs2_psi");
    std::size_t rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 20u);
}

// ---------------------------------------------------------------------------
// Against the split-step grid oracle.

TEST(PropagationOracle, ThreeBranchStateMatchesGrid) {
    const auto pot = default_potential();
    const auto psi = testing_support::three_branch_state();
    const auto mesh = oracle::auto_mesh({&psi[0], &psi[1], &psi[2]}, 512);
    auto g = oracle::sample(mesh, psi, 0.0);
    const auto model = oracle::tdlo_model(pot);

    grid_propagate(g, model, 2.0, 5e-4);
    const auto ref2 = oracle::sample(mesh, psi, 2.0);
    EXPECT_LT(oracle::l2_distance(g, ref2), 1e-4);

    grid_propagate(g, model, 3.15, 5e-4);
    const auto ref = oracle::sample(mesh, psi, 3.15);
    // 128 x 128 probe points.
    double worst = 0.0;
    for (std::size_t i = 0; i < mesh.n[0]; i += 4)
        for (std::size_t j = 0; j < mesh.n[1]; j += 4) {
            const std::size_t idx = i * mesh.n[1] + j;
            worst = std::max(worst, std::abs(g.values[idx] - ref.values[idx]));
        }
    EXPECT_LT(worst, 1e-4);
}

TEST(PropagationOracle, BackwardPostselectedMatchesGrid) {
    const auto pot = default_potential();
    const auto psi = testing_support::three_branch_state();
    auto chi0 = psi[0].state_at(3.65);
    chi0.q.x += 0.3;
    chi0.p.y -= 0.5;
    const auto chi = backward_postselected(normalize(chi0), 3.65, pot, psi[0].grid());
    const auto mesh = oracle::auto_mesh({&chi}, 512);
    auto g = oracle::sample(mesh, chi.state_at(3.65), 3.65);
    grid_propagate(g, oracle::tdlo_model(pot), 2.0, 5e-4);
    EXPECT_LT(oracle::l2_distance(g, oracle::sample(mesh, chi.state_at(2.0), 2.0)), 1e-4);
}
