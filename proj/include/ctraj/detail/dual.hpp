#pragma once

#include <cmath>

namespace ctraj::detail {

// Forward-mode dual number with a single infinitesimal. Nesting Dual<Dual<double>>
// yields mixed second directional derivatives.
template <typename T>
struct Dual {
  T v{};
  T d{};

  Dual() = default;
  Dual(T value) : v(value), d(T(0)) {}  // NOLINT: implicit lift of constants
  Dual(T value, T deriv) : v(value), d(deriv) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }

  friend Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
  friend Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
  friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
  friend Dual operator/(const Dual& a, const Dual& b) {
    T inv = T(1) / b.v;
    return {a.v * inv, (a.d - a.v * inv * b.d) * inv};
  }
};

template <typename T>
Dual<T> sin(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {sin(x.v), cos(x.v) * x.d};
}

template <typename T>
Dual<T> cos(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {cos(x.v), -sin(x.v) * x.d};
}

inline double scalar_value(double x) { return x; }

template <typename T>
double scalar_value(const Dual<T>& x) {
  return scalar_value(x.v);
}

}  // namespace ctraj::detail
