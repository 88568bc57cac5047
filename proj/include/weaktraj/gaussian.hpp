#pragma once

// Closed-form calculus for separable 2D complex Gaussian wavepackets
//
//   g(r) = exp( phase + sum_i [ -alpha_i (r_i - q_i)^2 + i p_i (r_i - q_i) / hbar ] )
//
// The phase is a complex log-prefactor: its real part carries the
// normalisation, its imaginary part the accumulated action and the
// stability prefactor. Keeping it in log form avoids overflow when a
// branch has decayed far below the others.

#include <array>
#include <cmath>
#include <complex>

#include "core.hpp"

namespace weaktraj {

struct ComplexGaussian {
    Vec2 q;
    Vec2 p;
    std::array<Complex, 2> alpha{Complex{1.0}, Complex{1.0}};
    Complex phase{};

    bool normalizable() const { return alpha[0].real() > 0.0 && alpha[1].real() > 0.0; }
};

/// Localised real-width wavepacket (2/(pi delta^2))^{1/2} exp(-(r-r0)^2/delta^2) exp(i p0.(r-r0)).
inline ComplexGaussian make_wavepacket(Vec2 r0, Vec2 p0, double delta) {
    if (!(delta > 0.0)) throw InvalidStateError("wavepacket width must be positive");
    ComplexGaussian g;
    g.q = r0;
    g.p = p0;
    const double a = 1.0 / (delta * delta);
    g.alpha = {Complex{a}, Complex{a}};
    g.phase = Complex{0.5 * std::log(2.0 / (kPi * delta * delta))};
    return g;
}

inline Complex log_evaluate(const ComplexGaussian& s, Vec2 r) {
    Complex e = s.phase;
    for (std::size_t i = 0; i < kDim; ++i) {
        const double d = r[i] - s.q[i];
        e += -s.alpha[i] * (d * d) + Complex{0.0, s.p[i] * d / kHbar};
    }
    return e;
}

inline Complex evaluate(const ComplexGaussian& s, Vec2 r) { return std::exp(log_evaluate(s, r)); }

/// grad g / g, analytic.
inline CVec2 log_gradient(const ComplexGaussian& s, Vec2 r) {
    CVec2 out;
    for (std::size_t i = 0; i < kDim; ++i) {
        const double d = r[i] - s.q[i];
        out[i] = -2.0 * s.alpha[i] * d + Complex{0.0, s.p[i] / kHbar};
    }
    return out;
}

namespace detail {

// One axis of <bra|ket>, shifted to the ket centre so the quadratic
// form never carries large offsets:  integral of exp(-A u^2 + B u + C).
struct AxisIntegral {
    Complex a;
    Complex b;
    Complex c;
};

inline AxisIntegral axis_integral(const ComplexGaussian& bra, const ComplexGaussian& ket, std::size_t i) {
    const Complex abar = std::conj(bra.alpha[i]);
    const double d = ket.q[i] - bra.q[i];
    AxisIntegral out;
    out.a = abar + ket.alpha[i];
    out.b = -2.0 * abar * d + Complex{0.0, (ket.p[i] - bra.p[i]) / kHbar};
    out.c = -abar * (d * d) - Complex{0.0, bra.p[i] * d / kHbar};
    if (!(out.a.real() > 0.0) || !std::isfinite(out.a.real()) || !std::isfinite(out.a.imag())) {
        throw InvalidStateError("combined quadratic form is not positive definite");
    }
    return out;
}

}  // namespace detail

/// log <bra|ket>; the bra is conjugated.
inline Complex log_overlap(const ComplexGaussian& bra, const ComplexGaussian& ket) {
    Complex e = std::conj(bra.phase) + ket.phase;
    for (std::size_t i = 0; i < kDim; ++i) {
        const auto ax = detail::axis_integral(bra, ket, i);
        e += 0.5 * std::log(kPi / ax.a) + ax.b * ax.b / (4.0 * ax.a) + ax.c;
    }
    return e;
}

inline Complex overlap(const ComplexGaussian& bra, const ComplexGaussian& ket) {
    return std::exp(log_overlap(bra, ket));
}

/// <bra|r|ket> / <bra|ket>: the stationary point of the combined quadratic form.
inline CVec2 mean_r(const ComplexGaussian& bra, const ComplexGaussian& ket) {
    CVec2 out;
    for (std::size_t i = 0; i < kDim; ++i) {
        const auto ax = detail::axis_integral(bra, ket, i);
        out[i] = ket.q[i] + ax.b / (2.0 * ax.a);
    }
    return out;
}

/// <bra|r|ket>.
inline CVec2 moment_r(const ComplexGaussian& bra, const ComplexGaussian& ket) {
    return overlap(bra, ket) * mean_r(bra, ket);
}

inline double log_norm2(const ComplexGaussian& s) {
    if (!s.normalizable()) throw InvalidStateError("Re(alpha) must be positive on both axes");
    double e = 2.0 * s.phase.real();
    for (std::size_t i = 0; i < kDim; ++i) e += 0.5 * std::log(kPi / (2.0 * s.alpha[i].real()));
    return e;
}

inline double norm2(const ComplexGaussian& s) { return std::exp(log_norm2(s)); }

/// Rescales the real part of the log-prefactor so that <s|s> = 1.
inline ComplexGaussian normalize(ComplexGaussian s) {
    s.phase -= 0.5 * log_norm2(s);
    return s;
}

namespace detail {

// 0.5 * (erf(hi) - erf(lo)) without cancellation in the tails.
inline double erf_interval(double lo, double hi) {
    if (lo >= 0.0) return 0.5 * (std::erfc(lo) - std::erfc(hi));
    if (hi <= 0.0) return 0.5 * (std::erfc(-hi) - std::erfc(-lo));
    return 0.5 * (std::erf(hi) - std::erf(lo));
}

}  // namespace detail

/// Probability of |s|^2 inside the square [centre - half, centre + half]^2.
inline double box_probability(const ComplexGaussian& s, Vec2 centre, double half) {
    double log_p = log_norm2(s);
    for (std::size_t i = 0; i < kDim; ++i) {
        const double k = std::sqrt(2.0 * s.alpha[i].real());
        const double frac = detail::erf_interval(k * (centre[i] - half - s.q[i]), k * (centre[i] + half - s.q[i]));
        if (frac <= 0.0) return 0.0;
        log_p += std::log(frac);
    }
    return std::exp(log_p);
}

/// Position spread (standard deviation of |s|^2) per axis.
inline Vec2 position_sigma(const ComplexGaussian& s) {
    return {0.5 / std::sqrt(s.alpha[0].real()), 0.5 / std::sqrt(s.alpha[1].real())};
}

/// Momentum spread (standard deviation of the momentum density) per axis.
inline Vec2 momentum_sigma(const ComplexGaussian& s) {
    Vec2 out;
    for (std::size_t i = 0; i < kDim; ++i) out[i] = kHbar * std::abs(s.alpha[i]) / std::sqrt(s.alpha[i].real());
    return out;
}

}  // namespace weaktraj
