#pragma once

// Forward-mode automatic differentiation carrying a value, gradient and full
// Hessian with respect to N seed variables. N is small here (at most one year
// of survival parameters plus one overdispersion effect), so the dense
// N x N Hessian is cheaper than any tape.

#include <array>
#include <cmath>
#include <cstddef>
#include <type_traits>

namespace childsurv::ad {

template <std::size_t N>
struct Dual2 {
  double v = 0.0;
  std::array<double, N> g{};
  std::array<double, N * N> h{};

  constexpr Dual2() = default;
  constexpr Dual2(double value) : v(value) {}  // NOLINT: implicit constant

  static Dual2 variable(double value, std::size_t index) {
    Dual2 d(value);
    d.g[index] = 1.0;
    return d;
  }

  double hess(std::size_t i, std::size_t j) const { return h[i * N + j]; }

  Dual2& operator+=(const Dual2& o) {
    v += o.v;
    for (std::size_t i = 0; i < N; ++i) g[i] += o.g[i];
    for (std::size_t i = 0; i < N * N; ++i) h[i] += o.h[i];
    return *this;
  }
  Dual2& operator-=(const Dual2& o) {
    v -= o.v;
    for (std::size_t i = 0; i < N; ++i) g[i] -= o.g[i];
    for (std::size_t i = 0; i < N * N; ++i) h[i] -= o.h[i];
    return *this;
  }
  Dual2& operator*=(double s) {
    v *= s;
    for (auto& x : g) x *= s;
    for (auto& x : h) x *= s;
    return *this;
  }
  Dual2& operator+=(double s) {
    v += s;
    return *this;
  }
};

template <class T>
struct is_dual : std::false_type {};
template <std::size_t N>
struct is_dual<Dual2<N>> : std::true_type {};

inline double value(double x) { return x; }
template <std::size_t N>
double value(const Dual2<N>& x) {
  return x.v;
}

// Chain rule for a scalar function with first and second derivative d1, d2.
template <std::size_t N>
Dual2<N> chain(const Dual2<N>& a, double f, double d1, double d2) {
  Dual2<N> r(f);
  for (std::size_t i = 0; i < N; ++i) r.g[i] = d1 * a.g[i];
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j)
      r.h[i * N + j] = d1 * a.h[i * N + j] + d2 * a.g[i] * a.g[j];
  return r;
}

template <std::size_t N>
Dual2<N> operator-(const Dual2<N>& a) {
  Dual2<N> r = a;
  r *= -1.0;
  return r;
}

template <std::size_t N>
Dual2<N> operator+(Dual2<N> a, const Dual2<N>& b) {
  return a += b;
}
template <std::size_t N>
Dual2<N> operator-(Dual2<N> a, const Dual2<N>& b) {
  return a -= b;
}
template <std::size_t N>
Dual2<N> operator+(Dual2<N> a, double b) {
  return a += b;
}
template <std::size_t N>
Dual2<N> operator+(double a, Dual2<N> b) {
  return b += a;
}
template <std::size_t N>
Dual2<N> operator-(Dual2<N> a, double b) {
  a.v -= b;
  return a;
}
template <std::size_t N>
Dual2<N> operator-(double a, const Dual2<N>& b) {
  Dual2<N> r = -b;
  r.v += a;
  return r;
}
template <std::size_t N>
Dual2<N> operator*(Dual2<N> a, double s) {
  return a *= s;
}
template <std::size_t N>
Dual2<N> operator*(double s, Dual2<N> a) {
  return a *= s;
}

template <std::size_t N>
Dual2<N> operator*(const Dual2<N>& a, const Dual2<N>& b) {
  Dual2<N> r(a.v * b.v);
  for (std::size_t i = 0; i < N; ++i) r.g[i] = a.v * b.g[i] + b.v * a.g[i];
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t k = i * N + j;
      r.h[k] = a.v * b.h[k] + b.v * a.h[k] + a.g[i] * b.g[j] + b.g[i] * a.g[j];
    }
  return r;
}

template <std::size_t N>
Dual2<N> reciprocal(const Dual2<N>& a) {
  const double inv = 1.0 / a.v;
  return chain(a, inv, -inv * inv, 2.0 * inv * inv * inv);
}

template <std::size_t N>
Dual2<N> operator/(const Dual2<N>& a, const Dual2<N>& b) {
  return a * reciprocal(b);
}
template <std::size_t N>
Dual2<N> operator/(const Dual2<N>& a, double b) {
  return a * (1.0 / b);
}
template <std::size_t N>
Dual2<N> operator/(double a, const Dual2<N>& b) {
  return a * reciprocal(b);
}

template <std::size_t N>
Dual2<N> exp(const Dual2<N>& a) {
  const double e = std::exp(a.v);
  return chain(a, e, e, e);
}
template <std::size_t N>
Dual2<N> expm1(const Dual2<N>& a) {
  const double e = std::exp(a.v);
  return chain(a, std::expm1(a.v), e, e);
}
template <std::size_t N>
Dual2<N> log(const Dual2<N>& a) {
  const double inv = 1.0 / a.v;
  return chain(a, std::log(a.v), inv, -inv * inv);
}
template <std::size_t N>
Dual2<N> log1p(const Dual2<N>& a) {
  const double inv = 1.0 / (1.0 + a.v);
  return chain(a, std::log1p(a.v), inv, -inv * inv);
}
template <std::size_t N>
Dual2<N> sqrt(const Dual2<N>& a) {
  const double s = std::sqrt(a.v);
  return chain(a, s, 0.5 / s, -0.25 / (s * a.v));
}

template <std::size_t N>
bool operator<(const Dual2<N>& a, double b) {
  return a.v < b;
}
template <std::size_t N>
bool operator>(const Dual2<N>& a, double b) {
  return a.v > b;
}
template <std::size_t N>
bool operator<=(const Dual2<N>& a, double b) {
  return a.v <= b;
}

}  // namespace childsurv::ad

namespace childsurv {

using ad::value;

// Numerically stable logistic helpers shared by double and dual code paths.
template <class S>
S expit(const S& z) {
  using std::exp;
  if (value(z) >= 0.0) return 1.0 / (1.0 + exp(-z));
  const S e = exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z))
template <class S>
S softplus(const S& z) {
  using std::exp;
  using std::log1p;
  if (value(z) > 0.0) return z + log1p(exp(-z));
  return log1p(exp(z));
}

// log(expit(z))
template <class S>
S log_expit(const S& z) {
  return -softplus(-z);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace childsurv
