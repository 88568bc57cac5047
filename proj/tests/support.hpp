#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "weaktraj/propagation.hpp"

namespace testing_support {

using weaktraj::Complex;
using weaktraj::Vec2;

// Midpoint-rule quadrature on a rectangle. For smooth functions that decay
// well inside the box this is spectrally accurate.
struct Quad2 {
    Vec2 lo;
    Vec2 hi;
    std::size_t n = 512;

    template <class F>
    Complex operator()(F&& f) const {
        const double hx = (hi.x - lo.x) / static_cast<double>(n);
        const double hy = (hi.y - lo.y) / static_cast<double>(n);
        Complex s{};
        for (std::size_t i = 0; i < n; ++i) {
            const double x = lo.x + (static_cast<double>(i) + 0.5) * hx;
            for (std::size_t j = 0; j < n; ++j) s += f(Vec2{x, lo.y + (static_cast<double>(j) + 0.5) * hy});
        }
        return s * hx * hy;
    }
};

// Box holding every state with `sigmas` position spreads to spare.
inline Quad2 box_for(const std::vector<weaktraj::ComplexGaussian>& states, std::size_t n, double sigmas = 12.0) {
    Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
    for (const auto& s : states) {
        const Vec2 sg = weaktraj::position_sigma(s);
        for (std::size_t a = 0; a < 2; ++a) {
            lo[a] = std::min(lo[a], s.q[a] - sigmas * sg[a]);
            hi[a] = std::max(hi[a], s.q[a] + sigmas * sg[a]);
        }
    }
    return {lo, hi, n};
}

inline Complex quad_overlap(const weaktraj::ComplexGaussian& a, const weaktraj::ComplexGaussian& b, std::size_t n) {
    return box_for({a, b}, n)([&](Vec2 r) { return std::conj(weaktraj::evaluate(a, r)) * weaktraj::evaluate(b, r); });
}

inline double quad_norm(const weaktraj::ComplexGaussian& a, std::size_t n) {
    return box_for({a}, n)([&](Vec2 r) { return Complex{std::norm(weaktraj::evaluate(a, r))}; }).real();
}

// Three-branch state of the bundled scenarios: origin, delta = 1, default potential.
inline weaktraj::Superposition three_branch_state(double t_end = 3.65, double step = 1e-3) {
    const auto pot = weaktraj::default_potential();
    const weaktraj::TimeGrid grid(0.0, t_end, step);
    return weaktraj::propagate_superposition({{0.32, {17.0, 7.0}}, {0.35, {-7.0, 15.0}}, {0.33, {0.0, 15.0}}},
                                             {0.0, 0.0}, 1.0, pot, grid);
}

// Gaussian sitting on branch b at t with the branch's own width and momentum.
inline weaktraj::ComplexGaussian retrace_state(const weaktraj::Branch& b, double t) {
    return weaktraj::normalize(b.state_at(t));
}

}  // namespace testing_support
