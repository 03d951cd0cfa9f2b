// Small shared numerics: quadrature, root finding, smooth bump blends.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>

namespace sra {

inline constexpr double kPi = 3.14159265358979323846264338327950288;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Folds an angle difference into [0, pi].
inline double angle_separation(double theta) {
  double a = std::fmod(std::abs(theta), 2.0 * kPi);
  return a <= kPi ? a : 2.0 * kPi - a;
}

/// Wraps an angle into [0, 2*pi).
inline double wrap_2pi(double theta) {
  double a = std::fmod(theta, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a;
}

/// Wraps an angle into (-pi, pi].
inline double wrap_pi(double theta) {
  double a = std::fmod(theta, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

// ---------------------------------------------------------------------------
// Quadrature

namespace detail {
template <class F>
double simpson(F&& f, double a, double fa, double b, double fb, double m, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <class F>
double adaptive_simpson_rec(F&& f, double a, double fa, double b, double fb, double m,
                            double fm, double whole, double tol, int depth) {
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = simpson(f, a, fa, m, fm, lm, flm);
  double right = simpson(f, m, fm, b, fb, rm, frm);
  double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

/// Adaptive Simpson quadrature of f over [a, b]. tol is treated as an
/// absolute target scaled by a crude magnitude estimate, which is adequate
/// for the smooth integrands used here.
template <class F>
double integrate(F&& f, double a, double b, double tol = 1e-11, int max_depth = 48) {
  if (a == b) return 0.0;
  double m = 0.5 * (a + b);
  double fa = f(a), fb = f(b), fm = f(m);
  double whole = detail::simpson(f, a, fa, b, fb, m, fm);
  double scale = std::max(1.0, std::abs(whole));
  return detail::adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, tol * scale,
                                      max_depth);
}

// ---------------------------------------------------------------------------
// Root finding

/// Illinois-damped regula falsi on a bracketing interval [a, b] with
/// fa * fb <= 0. Returns the abscissa once the bracket width or residual
/// drops below xtol.
template <class F>
double find_root(F&& f, double a, double b, double fa, double fb, double xtol,
                 int max_iter = 120) {
  if (fa == 0) return a;
  if (fb == 0) return b;
  if (fa * fb > 0) throw std::invalid_argument("find_root: not a bracket");
  int side = 0;
  double x = a;
  for (int it = 0; it < max_iter; ++it) {
    x = (fa * b - fb * a) / (fa - fb);
    if (!(x > a && x < b)) x = 0.5 * (a + b);
    double fx = f(x);
    if (std::isnan(fx)) {  // fall back to pure bisection around the midpoint
      x = 0.5 * (a + b);
      fx = f(x);
      if (std::isnan(fx)) throw std::runtime_error("find_root: objective undefined");
    }
    if (fx == 0 || b - a < xtol) return x;
    if ((fx > 0) == (fa > 0)) {
      a = x;
      fa = fx;
      if (side == -1) fb *= 0.5;
      side = -1;
    } else {
      b = x;
      fb = fx;
      if (side == 1) fa *= 0.5;
      side = 1;
    }
  }
  return x;
}

/// Bisection for a monotone predicate: returns the boundary between the
/// prefix where pred is false and the suffix where it is true.
template <class P>
double bisect_boundary(P&& pred, double lo, double hi, double xtol) {
  while (hi - lo > xtol) {
    double mid = 0.5 * (lo + hi);
    if (pred(mid))
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Smooth blends built from exp(-1/x)

/// C-infinity step rising from 0 at x<=0 to 1 at x>=1, with first and second
/// derivatives.
struct SmoothStep {
  static double h(double x) { return x > 0 ? std::exp(-1.0 / x) : 0.0; }
  static double h1(double x) { return x > 0 ? h(x) / (x * x) : 0.0; }
  static double h2(double x) {
    return x > 0 ? h(x) * (1.0 / (x * x * x * x) - 2.0 / (x * x * x)) : 0.0;
  }

  static void eval(double x, double& s, double& s1, double& s2) {
    if (x <= 0) {
      s = s1 = s2 = 0;
      return;
    }
    if (x >= 1) {
      s = 1;
      s1 = s2 = 0;
      return;
    }
    double a = h(x), b = h(1 - x);
    double a1 = h1(x), b1 = -h1(1 - x);
    double a2 = h2(x), b2 = h2(1 - x);
    double denom = a + b;
    s = a / denom;
    s1 = (a1 * b - a * b1) / (denom * denom);
    s2 = ((a2 * b - a * b2) * denom - 2.0 * (a1 * b - a * b1) * (a1 + b1)) /
         (denom * denom * denom);
  }
};

/// Smooth decreasing transition: 1 for x <= lo, 0 for x >= hi.
struct SmoothDecrease {
  double lo, hi;
  void eval(double x, double& v, double& v1, double& v2) const {
    double w = hi - lo;
    double s, s1, s2;
    SmoothStep::eval((x - lo) / w, s, s1, s2);
    v = 1.0 - s;
    v1 = -s1 / w;
    v2 = -s2 / (w * w);
  }
};

// ---------------------------------------------------------------------------
// Deterministic seeding

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Per-item seed derivation so parallel sweeps draw identical streams
/// regardless of scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 1));
}

}  // namespace sra
