#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace weaktraj {

using Complex = std::complex<double>;

// Atomic units throughout.
inline constexpr double kHbar = 1.0;
inline constexpr double kPi = 3.14159265358979323846;

inline constexpr std::size_t kDim = 2;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    constexpr double operator[](std::size_t i) const { return i == 0 ? x : y; }
    constexpr double& operator[](std::size_t i) { return i == 0 ? x : y; }

    friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
    friend constexpr bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct CVec2 {
    Complex x{};
    Complex y{};

    Complex operator[](std::size_t i) const { return i == 0 ? x : y; }
    Complex& operator[](std::size_t i) { return i == 0 ? x : y; }

    friend CVec2 operator+(const CVec2& a, const CVec2& b) { return {a.x + b.x, a.y + b.y}; }
    friend CVec2 operator-(const CVec2& a, const CVec2& b) { return {a.x - b.x, a.y - b.y}; }
    friend CVec2 operator*(Complex s, const CVec2& a) { return {s * a.x, s * a.y}; }
};

inline Vec2 real(const CVec2& v) { return {v.x.real(), v.y.real()}; }
inline Vec2 imag(const CVec2& v) { return {v.x.imag(), v.y.imag()}; }
inline CVec2 to_complex(Vec2 v) { return {v.x, v.y}; }
inline double abs_max(const CVec2& v) { return std::max(std::abs(v.x), std::abs(v.y)); }

// Error hierarchy. The CLI maps ConfigError to exit code 2 and every
// NumericalError to exit code 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    NumericalError(std::string module, const std::string& what)
        : std::runtime_error(module + ": " + what), module_(std::move(module)) {}
    const std::string& module() const { return module_; }

private:
    std::string module_;
};

struct InvalidStateError : NumericalError {
    explicit InvalidStateError(const std::string& what) : NumericalError("gaussian_states", what) {}
};

struct RangeError : NumericalError {
    RangeError(std::string module, const std::string& what) : NumericalError(std::move(module), what) {}
};

}  // namespace weaktraj
