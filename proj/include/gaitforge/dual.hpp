#pragma once

// Forward-mode dual numbers used to differentiate the templated kinematics.
// Dual<double> carries one directional derivative; Dual<Dual<double>> carries
// two directions plus their mixed second derivative.

#include <cmath>
#include <type_traits>

#include <Eigen/Core>

namespace gaitforge {

template <typename T>
struct Dual {
  T a{};  // value
  T b{};  // derivative along the seeded direction

  Dual() : a(0.0), b(0.0) {}
  Dual(double v) : a(v), b(0.0) {}  // NOLINT(google-explicit-constructor)
  template <typename U = T>
    requires(!std::is_same_v<U, double>)
  Dual(const T& v) : a(v), b(0.0) {}  // NOLINT(google-explicit-constructor)
  Dual(const T& v, const T& d) : a(v), b(d) {}

  Dual& operator+=(const Dual& o) { a += o.a; b += o.b; return *this; }
  Dual& operator-=(const Dual& o) { a -= o.a; b -= o.b; return *this; }
  Dual& operator*=(const Dual& o) { *this = *this * o; return *this; }
  Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }

  friend Dual operator+(const Dual& x, const Dual& y) { return {x.a + y.a, x.b + y.b}; }
  friend Dual operator-(const Dual& x, const Dual& y) { return {x.a - y.a, x.b - y.b}; }
  friend Dual operator-(const Dual& x) { return {-x.a, -x.b}; }
  friend Dual operator*(const Dual& x, const Dual& y) { return {x.a * y.a, x.a * y.b + x.b * y.a}; }
  friend Dual operator/(const Dual& x, const Dual& y) {
    T inv = T(1.0) / y.a;
    T v = x.a * inv;
    return {v, (x.b - v * y.b) * inv};
  }

  friend Dual operator+(const Dual& x, double y) { return {x.a + y, x.b}; }
  friend Dual operator+(double x, const Dual& y) { return {x + y.a, y.b}; }
  friend Dual operator-(const Dual& x, double y) { return {x.a - y, x.b}; }
  friend Dual operator-(double x, const Dual& y) { return {x - y.a, -y.b}; }
  friend Dual operator*(const Dual& x, double y) { return {x.a * y, x.b * y}; }
  friend Dual operator*(double x, const Dual& y) { return {x * y.a, x * y.b}; }
  friend Dual operator/(const Dual& x, double y) { return {x.a / y, x.b / y}; }
  friend Dual operator/(double x, const Dual& y) { return Dual(x) / y; }
};

inline double value(double x) { return x; }
template <typename T>
double value(const Dual<T>& x) { return value(x.a); }

template <typename T> bool operator<(const Dual<T>& x, const Dual<T>& y) { return value(x) < value(y); }
template <typename T> bool operator>(const Dual<T>& x, const Dual<T>& y) { return value(x) > value(y); }
template <typename T> bool operator<=(const Dual<T>& x, const Dual<T>& y) { return value(x) <= value(y); }
template <typename T> bool operator>=(const Dual<T>& x, const Dual<T>& y) { return value(x) >= value(y); }
template <typename T> bool operator<(const Dual<T>& x, double y) { return value(x) < y; }
template <typename T> bool operator>(const Dual<T>& x, double y) { return value(x) > y; }
template <typename T> bool operator==(const Dual<T>& x, const Dual<T>& y) { return x.a == y.a && x.b == y.b; }
template <typename T> bool operator!=(const Dual<T>& x, const Dual<T>& y) { return !(x == y); }

using std::atan2;
using std::cos;
using std::sin;
using std::sqrt;

template <typename T>
Dual<T> sin(const Dual<T>& x) { return {sin(x.a), cos(x.a) * x.b}; }
template <typename T>
Dual<T> cos(const Dual<T>& x) { return {cos(x.a), -sin(x.a) * x.b}; }
template <typename T>
Dual<T> sqrt(const Dual<T>& x) {
  T r = sqrt(x.a);
  return {r, x.b / (2.0 * r)};
}
template <typename T>
Dual<T> atan2(const Dual<T>& y, const Dual<T>& x) {
  T den = x.a * x.a + y.a * y.a;
  return {atan2(y.a, x.a), (x.a * y.b - y.a * x.b) / den};
}
template <typename T>
Dual<T> abs(const Dual<T>& x) { return value(x) < 0.0 ? -x : x; }

}  // namespace gaitforge

namespace Eigen {

template <typename T>
struct NumTraits<gaitforge::Dual<T>> : NumTraits<double> {
  using Real = gaitforge::Dual<T>;
  using NonInteger = gaitforge::Dual<T>;
  using Nested = gaitforge::Dual<T>;
  using Literal = gaitforge::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2,
    AddCost = 4,
    MulCost = 8
  };
};

}  // namespace Eigen
