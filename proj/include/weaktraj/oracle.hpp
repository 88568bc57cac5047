#pragma once

// Brute-force grid propagation: Strang split-step Fourier on a periodic
// uniform mesh, with the potential evaluated at the midpoint of each step.
// Used as the independent reference for the analytic machinery.

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <vector>

#include "classical.hpp"
#include "csv.hpp"
#include "gaussian.hpp"
#include "propagation.hpp"

namespace weaktraj::oracle {

struct MeshTooSmallError : NumericalError {
    explicit MeshTooSmallError(const std::string& what) : NumericalError("oracle", what) {}
};

template <std::size_t D>
struct Mesh {
    std::array<std::size_t, D> n{};
    std::array<double, D> lo{};
    std::array<double, D> length{};

    double dx(std::size_t a) const { return length[a] / static_cast<double>(n[a]); }
    double coord(std::size_t a, std::size_t k) const { return lo[a] + static_cast<double>(k) * dx(a); }
    double cell() const {
        double v = 1.0;
        for (std::size_t a = 0; a < D; ++a) v *= dx(a);
        return v;
    }
    std::size_t total() const {
        std::size_t t = 1;
        for (auto m : n) t *= m;
        return t;
    }
    /// Angular wavenumber of FFT bin k along axis a.
    double wavenumber(std::size_t a, std::size_t k) const {
        const auto N = static_cast<std::ptrdiff_t>(n[a]);
        auto j = static_cast<std::ptrdiff_t>(k);
        if (j >= (N + 1) / 2) j -= N;
        return 2.0 * kPi * static_cast<double>(j) / length[a];
    }
};

using Mesh1 = Mesh<1>;
using Mesh2 = Mesh<2>;

/// Row-major values, axis 0 slowest.
template <std::size_t D>
struct GridState {
    Mesh<D> mesh;
    std::vector<Complex> values;
    double t = 0.0;
};

using Grid1 = GridState<1>;
using Grid2 = GridState<2>;

// ---------------------------------------------------------------------------

namespace detail {

inline std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

// In-place forward/backward transforms on an fftw_malloc'd buffer.
class Fft {
public:
    template <std::size_t D>
    explicit Fft(const Mesh<D>& mesh) : size_(mesh.total()) {
        buf_ = reinterpret_cast<Complex*>(fftw_malloc(sizeof(fftw_complex) * size_));
        if (!buf_) throw std::bad_alloc();
        std::array<int, D> dims{};
        for (std::size_t a = 0; a < D; ++a) dims[a] = static_cast<int>(mesh.n[a]);
        std::lock_guard lock(planner_mutex());
        auto* p = reinterpret_cast<fftw_complex*>(buf_);
        fwd_ = fftw_plan_dft(static_cast<int>(D), dims.data(), p, p, FFTW_FORWARD, FFTW_MEASURE);
        bwd_ = fftw_plan_dft(static_cast<int>(D), dims.data(), p, p, FFTW_BACKWARD, FFTW_MEASURE);
    }
    Fft(const Fft&) = delete;
    Fft& operator=(const Fft&) = delete;
    ~Fft() {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        fftw_free(buf_);
    }

    Complex* data() { return buf_; }
    std::size_t size() const { return size_; }
    void forward() { fftw_execute(fwd_); }
    /// Inverse transform including the 1/N normalisation.
    void backward() {
        fftw_execute(bwd_);
        const double s = 1.0 / static_cast<double>(size_);
        for (std::size_t i = 0; i < size_; ++i) buf_[i] *= s;
    }

private:
    std::size_t size_;
    Complex* buf_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan bwd_ = nullptr;
};

// Outer product of per-axis factors, row-major.
template <std::size_t D>
void outer(const Mesh<D>& mesh, const std::array<std::vector<Complex>, D>& f, std::vector<Complex>& out) {
    out.resize(mesh.total());
    if constexpr (D == 1) {
        out = f[0];
    } else {
        static_assert(D == 2, "meshes are 1D or 2D");
        for (std::size_t i = 0; i < mesh.n[0]; ++i)
            for (std::size_t j = 0; j < mesh.n[1]; ++j) out[i * mesh.n[1] + j] = f[0][i] * f[1][j];
    }
}

template <std::size_t D>
std::array<std::size_t, D> unravel(const Mesh<D>& mesh, std::size_t idx) {
    std::array<std::size_t, D> k{};
    for (std::size_t a = D; a-- > 0;) {
        k[a] = idx % mesh.n[a];
        idx /= mesh.n[a];
    }
    return k;
}

}  // namespace detail

/// H = sum_a [ inv_mass_a p_a^2 / 2 + U_a(t, x_a) ] + f(t) W(x).
template <std::size_t D>
struct Model {
    std::array<double, D> inv_mass{};
    std::array<std::function<double(double, double)>, D> potential{};
    std::function<double(double)> coupling;  // f(t); empty means none
    std::vector<double> coupling_shape;      // W on the mesh
    double max_omega = 0.0;                  // for the time-step check
};

/// Model of the quadratic potential on a 2D mesh.
inline Model<2> tdlo_model(const PotentialParams& pot) {
    pot.validate();
    Model<2> m;
    for (std::size_t a = 0; a < 2; ++a) {
        const AxisPotential ax = pot.axis[a];
        const double mass = pot.m;
        m.inv_mass[a] = 1.0 / mass;
        m.potential[a] = [ax, mass](double t, double x) { return mass * ax(t) * x * x; };
        m.max_omega = std::max(m.max_omega, ax.omega);
    }
    return m;
}

inline Model<1> axis_model(const AxisPotential& ax, double mass) {
    Model<1> m;
    m.inv_mass[0] = 1.0 / mass;
    m.potential[0] = [ax, mass](double t, double x) { return mass * ax(t) * x * x; };
    m.max_omega = ax.omega;
    return m;
}

struct PropagateOptions {
    double tail_tolerance = 1e-8;
    std::size_t check_every = 200;
    double band = 0.05;  // fraction of the spectrum / mesh treated as the tail
};

namespace detail {

// Largest amplitude in the outer band relative to the peak. In the spectral
// check, axes without a kinetic term are skipped: nothing moves along them,
// so their spectrum cannot alias.
template <std::size_t D>
double band_ratio(const Mesh<D>& mesh, const Complex* v, bool spectral, double band,
                  const std::array<double, D>& inv_mass) {
    double peak = 0.0, tail = 0.0;
    const std::size_t N = mesh.total();
    for (std::size_t idx = 0; idx < N; ++idx) {
        const double a = std::abs(v[idx]);
        peak = std::max(peak, a);
        const auto k = unravel(mesh, idx);
        bool in_band = false;
        for (std::size_t ax = 0; ax < D && !in_band; ++ax) {
            const double n = static_cast<double>(mesh.n[ax]);
            const double kk = static_cast<double>(k[ax]);
            if (spectral) {
                if (inv_mass[ax] == 0.0) continue;
                const double j = kk >= n / 2 ? n - kk : kk;  // |bin| from zero frequency
                in_band = j >= (0.5 - band) * n;
            } else {
                in_band = kk < band * n || kk >= (1.0 - band) * n;
            }
        }
        if (in_band) tail = std::max(tail, a);
    }
    return peak > 0.0 ? tail / peak : 0.0;
}

}  // namespace detail

/// Evolves `state` to t1 in steps of magnitude at most |dt|.
template <std::size_t D>
void grid_propagate(GridState<D>& state, const Model<D>& model, double t1, double dt, const PropagateOptions& opt = {}) {
    if (!(std::abs(dt) > 0.0)) throw ConfigError("oracle: dt must be non-zero");
    if (model.max_omega > 0.0 && std::abs(dt) > 2.0 * kPi / (40.0 * model.max_omega))
        throw ConfigError("oracle: dt does not resolve the potential oscillation");
    const double t0 = state.t;
    if (t1 == t0) return;
    const auto& mesh = state.mesh;
    const std::size_t N = mesh.total();
    if (state.values.size() != N) throw ConfigError("oracle: state size does not match mesh");

    const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(std::abs(t1 - t0) / std::abs(dt) - 1e-9)));
    const double h = (t1 - t0) / static_cast<double>(steps);

    auto kinetic = [&](double tau) {
        std::array<std::vector<Complex>, D> f;
        for (std::size_t a = 0; a < D; ++a) {
            f[a].resize(mesh.n[a]);
            for (std::size_t k = 0; k < mesh.n[a]; ++k) {
                const double kk = mesh.wavenumber(a, k);
                f[a][k] = std::exp(Complex{0.0, -tau * kHbar * model.inv_mass[a] * kk * kk / 2.0});
            }
        }
        std::vector<Complex> out;
        detail::outer(mesh, f, out);
        return out;
    };
    const auto K_half = kinetic(0.5 * h);
    const auto K_full = kinetic(h);

    std::array<std::vector<Complex>, D> vf;
    for (std::size_t a = 0; a < D; ++a) vf[a].resize(mesh.n[a]);
    auto apply_potential = [&](Complex* buf, double t) {
        for (std::size_t a = 0; a < D; ++a) {
            for (std::size_t k = 0; k < mesh.n[a]; ++k) {
                const double u = model.potential[a] ? model.potential[a](t, mesh.coord(a, k)) : 0.0;
                vf[a][k] = std::exp(Complex{0.0, -h * u / kHbar});
            }
        }
        if constexpr (D == 1) {
            for (std::size_t i = 0; i < N; ++i) buf[i] *= vf[0][i];
        } else {
            const std::size_t n1 = mesh.n[1];
            for (std::size_t i = 0; i < mesh.n[0]; ++i) {
                Complex* row = buf + i * n1;
                const Complex vx = vf[0][i];
                for (std::size_t j = 0; j < n1; ++j) row[j] *= vx * vf[1][j];
            }
        }
        if (model.coupling) {
            const double f = model.coupling(t);
            if (f != 0.0)
                for (std::size_t i = 0; i < N; ++i)
                    buf[i] *= std::exp(Complex{0.0, -h * f * model.coupling_shape[i] / kHbar});
        }
    };

    detail::Fft fft(mesh);
    Complex* buf = fft.data();
    std::copy(state.values.begin(), state.values.end(), buf);

    auto check = [&](bool spectral) {
        const double r = detail::band_ratio(mesh, buf, spectral, opt.band, model.inv_mass);
        if (r > opt.tail_tolerance) {
            char msg[160];
            std::snprintf(msg, sizeof msg, "%s tail %.3g of peak exceeds %.3g; enlarge the mesh",
                          spectral ? "spectral" : "edge", r, opt.tail_tolerance);
            throw MeshTooSmallError(msg);
        }
    };

    fft.forward();
    check(true);
    for (std::size_t i = 0; i < N; ++i) buf[i] *= K_half[i];
    for (std::size_t s = 0; s < steps; ++s) {
        fft.backward();
        apply_potential(buf, t0 + (static_cast<double>(s) + 0.5) * h);
        fft.forward();
        const bool last = s + 1 == steps;
        const auto& K = last ? K_half : K_full;
        for (std::size_t i = 0; i < N; ++i) buf[i] *= K[i];
        if (last || (s + 1) % opt.check_every == 0) check(true);
    }
    fft.backward();
    check(false);
    std::copy(buf, buf + N, state.values.begin());
    state.t = t1;
}

// ---------------------------------------------------------------------------

template <std::size_t D, class Field>
GridState<D> sample(const Mesh<D>& mesh, double t, Field&& field) {
    GridState<D> g{mesh, std::vector<Complex>(mesh.total()), t};
    for (std::size_t idx = 0; idx < g.values.size(); ++idx) {
        const auto k = detail::unravel(mesh, idx);
        std::array<double, D> x{};
        for (std::size_t a = 0; a < D; ++a) x[a] = mesh.coord(a, k[a]);
        g.values[idx] = field(x);
    }
    return g;
}

inline Grid2 sample(const Mesh2& mesh, const ComplexGaussian& s, double t) {
    return sample<2>(mesh, t, [&](const std::array<double, 2>& x) { return evaluate(s, {x[0], x[1]}); });
}

inline Grid2 sample(const Mesh2& mesh, const Superposition& psi, double t) {
    std::vector<ComplexGaussian> st;
    std::vector<Complex> c;
    for (const auto& b : psi.branches) {
        st.push_back(b.state_at(t));
        c.push_back(b.coefficient());
    }
    return sample<2>(mesh, t, [&](const std::array<double, 2>& x) {
        Complex v{};
        for (std::size_t j = 0; j < st.size(); ++j) v += c[j] * evaluate(st[j], {x[0], x[1]});
        return v;
    });
}

template <std::size_t D>
Complex inner(const GridState<D>& a, const GridState<D>& b) {
    Complex s{};
    for (std::size_t i = 0; i < a.values.size(); ++i) s += std::conj(a.values[i]) * b.values[i];
    return s * a.mesh.cell();
}

template <std::size_t D>
double norm2(const GridState<D>& a) {
    double s = 0.0;
    for (const auto& v : a.values) s += std::norm(v);
    return s * a.mesh.cell();
}

template <std::size_t D>
double l2_distance(const GridState<D>& a, const GridState<D>& b) {
    if (a.values.size() != b.values.size()) throw ConfigError("oracle: mesh mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += std::norm(a.values[i] - b.values[i]);
    return std::sqrt(s * a.mesh.cell());
}

/// <r>_W by grid quadrature of <chi|r|psi> / <chi|psi>.
inline CVec2 quadrature_weak_value(const Grid2& chi, const Grid2& psi) {
    Complex den{}, nx{}, ny{};
    const auto& m = psi.mesh;
    for (std::size_t i = 0; i < m.n[0]; ++i) {
        for (std::size_t j = 0; j < m.n[1]; ++j) {
            const std::size_t idx = i * m.n[1] + j;
            const Complex v = std::conj(chi.values[idx]) * psi.values[idx];
            den += v;
            nx += m.coord(0, i) * v;
            ny += m.coord(1, j) * v;
        }
    }
    return {nx / den, ny / den};
}

/// d/dx_a by spectral differentiation.
template <std::size_t D>
std::vector<Complex> spectral_derivative(const GridState<D>& g, std::size_t axis) {
    detail::Fft fft(g.mesh);
    std::copy(g.values.begin(), g.values.end(), fft.data());
    fft.forward();
    for (std::size_t idx = 0; idx < g.values.size(); ++idx) {
        const auto k = detail::unravel(g.mesh, idx);
        fft.data()[idx] *= Complex{0.0, g.mesh.wavenumber(axis, k[axis])};
    }
    fft.backward();
    return {fft.data(), fft.data() + g.values.size()};
}

/// Snapshot CSV in the same layout as the analytic snapshots (x fastest).
inline void write_snapshot_csv(std::ostream& os, const Grid2& g) {
    csv::Writer w(os);
    w.header({"x", "y", "re_psi", "im_psi", "abs2_psi"});
    for (std::size_t j = 0; j < g.mesh.n[1]; ++j) {
        for (std::size_t i = 0; i < g.mesh.n[0]; ++i) {
            const Complex v = g.values[i * g.mesh.n[1] + j];
            w << g.mesh.coord(0, i) << g.mesh.coord(1, j) << v.real() << v.imag() << std::norm(v);
            w.end_row();
        }
    }
}

// ---------------------------------------------------------------------------
// Mesh sizing from the classical guides.

struct AxisFootprint {
    double q_min = 1e300, q_max = -1e300;
    double p_min = 1e300, p_max = -1e300;
    double sigma_q = 0.0, sigma_p = 0.0;

    void add(double q, double p, double sq, double sp) {
        q_min = std::min(q_min, q);
        q_max = std::max(q_max, q);
        p_min = std::min(p_min, p);
        p_max = std::max(p_max, p);
        sigma_q = std::max(sigma_q, sq);
        sigma_p = std::max(sigma_p, sp);
    }
};

inline void add_branch(std::array<AxisFootprint, 2>& fp, const Branch& b) {
    for (std::size_t k = 0; k < b.size(); ++k) {
        const auto& s = b.state(k);
        const Vec2 sq = position_sigma(s);
        const Vec2 sp = momentum_sigma(s);
        for (std::size_t a = 0; a < 2; ++a) fp[a].add(s.q[a], s.p[a], sq[a], sp[a]);
    }
}

/// Chooses lo/length for n points so that both the position footprint and the
/// momentum footprint fit with `margin` spreads to spare.
inline void size_axis(const AxisFootprint& fp, std::size_t n, double margin, double& lo, double& length) {
    const double need_x = (fp.q_max - fp.q_min) + 2.0 * margin * fp.sigma_q;
    const double k_need = std::max(std::abs(fp.p_min), std::abs(fp.p_max)) / kHbar + margin * fp.sigma_p / kHbar;
    const double max_len = static_cast<double>(n) * kPi / k_need;
    if (need_x > max_len) {
        char msg[200];
        std::snprintf(msg, sizeof msg, "%zu points cannot hold extent %.3g with wavenumbers up to %.3g", n, need_x,
                      k_need);
        throw MeshTooSmallError(msg);
    }
    length = std::sqrt(need_x * max_len);
    lo = 0.5 * (fp.q_min + fp.q_max) - 0.5 * length;
}

inline Mesh2 auto_mesh(const std::vector<const Branch*>& branches, std::size_t n, double margin = 10.0) {
    std::array<AxisFootprint, 2> fp;
    for (const auto* b : branches) add_branch(fp, *b);
    Mesh2 m;
    for (std::size_t a = 0; a < 2; ++a) {
        m.n[a] = n;
        size_axis(fp[a], n, margin, m.lo[a], m.length[a]);
    }
    return m;
}

// ---------------------------------------------------------------------------
// 1D system coupled to a 1D pointer through gamma(t) x R theta(4 Delta - |x - R|).

struct CoupledSetup {
    AxisPotential axis;
    double mass = 1.0;

    double q0 = 0.0, p0 = 0.0, delta = 1.0;              // system at t = 0
    double chi_q = 0.0, chi_p = 0.0, chi_delta = 1.0;    // postselection at t_f
    double t_f = 1.0;

    double R0 = 0.0, Delta = 1.0, g = 0.01;
    double t_k = 0.5;
    double tau = 1e-2;     // pulse width; 0 gives an instantaneous kick at t_k
    double window = 1e-2;  // fine-stepped interval centred on t_k, >= tau

    std::size_t n_system = 512;
    std::size_t n_meter = 256;
    double dt = 5e-4;
    std::size_t window_steps = 40;
    double margin = 10.0;
    // The hard 4 Delta gate cuts the joint state where the pointer amplitude is
    // about exp(-16), so its spectral tail sits near 1e-7 by construction.
    double joint_tail_tolerance = 1e-6;
};

struct CoupledResult {
    Mesh1 pointer_mesh;
    std::vector<Complex> pointer;  // conditional pointer, normalised
    double mean_position = 0.0;
    double mean_momentum = 0.0;
    double position_shift = 0.0;
    double momentum_shift = 0.0;
    double fidelity_initial = 0.0;  // |<phi_0|pointer>|^2
    Complex postselection_amplitude;
};

inline double pulse(double t, double t_k, double tau, double g) {
    const double u = t - t_k;
    if (std::abs(u) > 0.5 * tau) return 0.0;
    return (kHbar * g / tau) * (1.0 + std::cos(2.0 * kPi * u / tau));
}

inline CoupledResult coupled_meter_simulate(const CoupledSetup& s) {
    if (!(s.window >= s.tau)) throw ConfigError("coupled oracle: window must cover the pulse");
    if (s.window_steps < 2 || s.window_steps % 2) throw ConfigError("coupled oracle: window_steps must be even");
    const double t_a = s.t_k - 0.5 * s.window;
    const double t_b = s.t_k + 0.5 * s.window;
    if (!(t_a > 0.0 && t_b < s.t_f)) throw ConfigError("coupled oracle: interaction window outside (0, t_f)");

    // System mesh from the forward and backward guides.
    const PotentialParams pot = PotentialParams::isotropic(s.axis, s.mass);
    const TimeGrid grid(0.0, s.t_f, 1e-3);
    const Branch fwd = propagate_forward(make_wavepacket({s.q0, s.q0}, {s.p0, s.p0}, s.delta), pot, grid);
    const Branch bwd = backward_postselected(make_wavepacket({s.chi_q, s.chi_q}, {s.chi_p, s.chi_p}, s.chi_delta),
                                             s.t_f, pot, grid);
    std::array<AxisFootprint, 2> fp;
    add_branch(fp, fwd);
    add_branch(fp, bwd);
    Mesh1 sys;
    sys.n[0] = s.n_system;
    size_axis(fp[0], s.n_system, s.margin, sys.lo[0], sys.length[0]);

    Mesh1 ptr;
    ptr.n[0] = s.n_meter;
    ptr.length[0] = 12.0 * s.Delta;
    ptr.lo[0] = s.R0 - 6.0 * s.Delta;

    const double a_sys = 1.0 / (s.delta * s.delta);
    const double a_chi = 1.0 / (s.chi_delta * s.chi_delta);
    const double a_ptr = 1.0 / (s.Delta * s.Delta);
    auto gauss1 = [](double x, double q, double p, double a) {
        const double d = x - q;
        return std::pow(2.0 * a / kPi, 0.25) * std::exp(Complex{-a * d * d, p * d / kHbar});
    };

    const Model<1> m1 = axis_model(s.axis, s.mass);

    // System alone up to the window.
    Grid1 psi = sample<1>(sys, 0.0, [&](const std::array<double, 1>& x) { return gauss1(x[0], s.q0, s.p0, a_sys); });
    grid_propagate(psi, m1, t_a, s.dt);

    // Postselected state back to the end of the window.
    Grid1 chi = sample<1>(sys, s.t_f, [&](const std::array<double, 1>& x) { return gauss1(x[0], s.chi_q, s.chi_p, a_chi); });
    grid_propagate(chi, m1, t_b, -s.dt);

    // Joint state.
    Mesh2 jm;
    jm.n = {sys.n[0], ptr.n[0]};
    jm.lo = {sys.lo[0], ptr.lo[0]};
    jm.length = {sys.length[0], ptr.length[0]};
    std::vector<Complex> phi0(ptr.n[0]);
    for (std::size_t j = 0; j < ptr.n[0]; ++j) phi0[j] = gauss1(ptr.coord(0, j), s.R0, 0.0, a_ptr);
    Grid2 joint{jm, std::vector<Complex>(jm.total()), t_a};
    std::vector<double> shape(jm.total());
    const double range = 4.0 * s.Delta;
    for (std::size_t i = 0; i < jm.n[0]; ++i) {
        const double x = jm.coord(0, i);
        for (std::size_t j = 0; j < jm.n[1]; ++j) {
            const double R = jm.coord(1, j);
            joint.values[i * jm.n[1] + j] = psi.values[i] * phi0[j];
            shape[i * jm.n[1] + j] = std::abs(x - R) < range ? x * R : 0.0;
        }
    }

    Model<2> m2;
    m2.inv_mass = {1.0 / s.mass, 0.0};
    m2.potential[0] = m1.potential[0];
    m2.max_omega = s.axis.omega;
    m2.coupling_shape = shape;
    const double h_w = s.window / static_cast<double>(s.window_steps);
    PropagateOptions jopt;
    jopt.tail_tolerance = s.joint_tail_tolerance;
    if (s.tau > 0.0) {
        m2.coupling = [&](double t) { return pulse(t, s.t_k, s.tau, s.g); };
        grid_propagate(joint, m2, t_b, h_w, jopt);
    } else {
        grid_propagate(joint, m2, s.t_k, h_w, jopt);
        for (std::size_t i = 0; i < joint.values.size(); ++i)
            joint.values[i] *= std::exp(Complex{0.0, -s.g * shape[i]});
        grid_propagate(joint, m2, t_b, h_w, jopt);
    }

    // Project onto chi column by column.
    CoupledResult out;
    out.pointer_mesh = ptr;
    out.pointer.assign(ptr.n[0], Complex{});
    for (std::size_t i = 0; i < jm.n[0]; ++i) {
        const Complex c = std::conj(chi.values[i]) * sys.dx(0);
        for (std::size_t j = 0; j < jm.n[1]; ++j) out.pointer[j] += c * joint.values[i * jm.n[1] + j];
    }
    Grid1 ptr_state{ptr, out.pointer, t_b};
    const double n2 = norm2(ptr_state);
    if (!(n2 > 0.0)) throw NumericalError("oracle", "postselection annihilates the joint state");
    {
        Complex amp{};
        for (std::size_t j = 0; j < ptr.n[0]; ++j) amp += std::conj(phi0[j]) * out.pointer[j];
        out.postselection_amplitude = amp * ptr.dx(0);
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& v : out.pointer) v *= inv;
    ptr_state.values = out.pointer;

    double mx = 0.0;
    for (std::size_t j = 0; j < ptr.n[0]; ++j) mx += ptr.coord(0, j) * std::norm(out.pointer[j]);
    out.mean_position = mx * ptr.dx(0);
    const auto d = spectral_derivative(ptr_state, 0);
    Complex mp{};
    for (std::size_t j = 0; j < ptr.n[0]; ++j) mp += std::conj(out.pointer[j]) * Complex{0.0, -kHbar} * d[j];
    out.mean_momentum = (mp * ptr.dx(0)).real();
    out.position_shift = out.mean_position - s.R0;
    out.momentum_shift = out.mean_momentum;

    Complex f{};
    for (std::size_t j = 0; j < ptr.n[0]; ++j) f += std::conj(phi0[j]) * out.pointer[j];
    out.fidelity_initial = std::norm(f * ptr.dx(0));
    return out;
}

}  // namespace weaktraj::oracle
