#include "sra/profile.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "sra/ode.hpp"

namespace sra {

namespace {

// Five-point central differences used by the validation cross-checks.
double fd_first(const std::function<double(double)>& f, double r, double h) {
  return (f(r - 2 * h) - 8 * f(r - h) + 8 * f(r + h) - f(r + 2 * h)) / (12 * h);
}

void check(ValidationReport& rep, bool ok, const char* cond, double r, double value) {
  if (!ok) {
    rep.passed = false;
    rep.violations.push_back({cond, r, value});
  }
}

}  // namespace

ValidationReport validate_profile(const Profile& p, int grid_size, double tol) {
  if (grid_size < 16) throw std::invalid_argument("validate_profile: grid_size < 16");
  ValidationReport rep;

  double end = p.domain_end();
  if (p.closed() && !(std::isfinite(p.ell) && p.ell > 0)) {
    check(rep, false, "closed profile requires finite ell > 0", 0, p.ell);
    return rep;
  }

  check(rep, std::abs(p.y(0.0)) <= tol, "y(0) = 0", 0.0, p.y(0.0));
  check(rep, std::abs(p.y1(0.0) - 1.0) <= tol, "y'(0) = 1", 0.0, p.y1(0.0));
  if (p.closed()) {
    check(rep, std::abs(p.y(p.ell)) <= tol, "y(ell) = 0", p.ell, p.y(p.ell));
    check(rep, std::abs(p.y1(p.ell) + 1.0) <= tol, "y'(ell) = -1", p.ell, p.y1(p.ell));
  }

  double h = std::min(1e-3, end / (8.0 * grid_size));
  for (int i = 1; i <= grid_size; ++i) {
    double r = end * i / (grid_size + 1.0);
    double yr = p.y(r);
    check(rep, yr > 0, "y > 0 on (0, ell)", r, yr);
    if (r > 3 * h && r < end - 3 * h) {
      double d1 = fd_first(p.y, r, h);
      check(rep, std::abs(d1 - p.y1(r)) <= tol * std::max(1.0, std::abs(d1)),
            "y' consistent with finite differences of y", r, p.y1(r) - d1);
      double d2 = fd_first(p.y1, r, h);
      check(rep, std::abs(d2 - p.y2(r)) <= tol * std::max(1.0, std::abs(d2)),
            "y'' consistent with finite differences of y'", r, p.y2(r) - d2);
    }
  }
  return rep;
}

double curvature(const Profile& p, double r) {
  if (!(r > 0.0) || !(r < p.domain_end()))
    throw std::domain_error("curvature: r outside (0, ell)");
  double yr = p.y(r);
  if (!(yr > 0.0)) throw std::domain_error("curvature: y(r) <= 0");
  return -p.y2(r) / yr;
}

// ---------------------------------------------------------------------------
// Perturbation y_delta = m_delta * y

namespace {

struct BlendFactor {
  double delta = 0;
  double r1 = 0;
  bool capped = false;       // closed case: blend to the linear cap
  double ell_delta = 0;      // ell - delta
  double cap_scale = 0;      // y(ell - delta)
  SmoothDecrease phi;        // 1 near 0, 0 beyond r1
  SmoothDecrease psi;        // 1 up to past r3, 0 near ell - delta

  void eval(double r, double& m, double& m1, double& m2) const {
    double E = std::exp(-delta * r);
    if (r <= r1) {
      double f, f1, f2;
      phi.eval(r, f, f1, f2);
      m = f + (1 - f) * E;
      m1 = f1 * (1 - E) - (1 - f) * delta * E;
      m2 = f2 * (1 - E) + 2 * f1 * delta * E + (1 - f) * delta * delta * E;
      return;
    }
    if (!capped) {
      m = E;
      m1 = -delta * E;
      m2 = delta * delta * E;
      return;
    }
    double L = (ell_delta - r) / cap_scale;
    double L1 = -1.0 / cap_scale;
    double s, s1, s2;
    psi.eval(r, s, s1, s2);
    m = s * E + (1 - s) * L;
    m1 = s1 * (E - L) - s * delta * E + (1 - s) * L1;
    m2 = s2 * (E - L) + 2 * s1 * (-delta * E - L1) + s * delta * delta * E;
  }
};

}  // namespace

Profile perturb_profile(const Profile& p, double delta, double r1, double r2) {
  if (!(delta > 0)) throw std::invalid_argument("perturb_profile: delta must be > 0");
  if (!(0 < r1 && r1 < r2 && r2 < p.domain_end()))
    throw std::invalid_argument("perturb_profile: need 0 < r1 < r2 < ell");

  auto blend = std::make_shared<BlendFactor>();
  blend->delta = delta;
  blend->r1 = r1;
  blend->phi = SmoothDecrease{r1 / 3.0, 2.0 * r1 / 3.0};

  Profile out;
  out.name = p.name + "+delta";
  out.r_max = p.r_max;
  if (p.closed()) {
    double ell_d = p.ell - delta;
    if (!(ell_d > r2))
      throw std::invalid_argument("perturb_profile: delta too large (ell - delta <= r2)");
    double cap = p.y(ell_d);
    // crossover radius r3: e^{-delta r} - (ell - delta - r)/y(ell - delta)
    // changes sign once on (0, ell - delta)
    auto q = [&](double r) { return std::exp(-delta * r) - (ell_d - r) / cap; };
    double lo = 1e-12, hi = ell_d - 1e-12;
    double r3;
    if (q(lo) >= 0)
      r3 = lo;
    else
      r3 = find_root(q, lo, hi, q(lo), q(hi), 1e-12 * ell_d);
    if (!(r3 > r2))
      throw std::invalid_argument(
          "perturb_profile: delta too large for closed profile (crossover <= r2)");
    double w = (ell_d - r3) / 4.0;
    blend->capped = true;
    blend->ell_delta = ell_d;
    blend->cap_scale = cap;
    blend->psi = SmoothDecrease{r3 + w, ell_d - w};
    out.ell = ell_d;
    out.kind = ProfileKind::closed;
  } else {
    out.ell = kInf;
    out.kind = ProfileKind::open;
  }

  auto base_y = p.y, base_y1 = p.y1, base_y2 = p.y2;
  out.y = [blend, base_y](double r) {
    double m, m1, m2;
    blend->eval(r, m, m1, m2);
    return m * base_y(r);
  };
  out.y1 = [blend, base_y, base_y1](double r) {
    double m, m1, m2;
    blend->eval(r, m, m1, m2);
    return m1 * base_y(r) + m * base_y1(r);
  };
  out.y2 = [blend, base_y, base_y1, base_y2](double r) {
    double m, m1, m2;
    blend->eval(r, m, m1, m2);
    return m2 * base_y(r) + 2 * m1 * base_y1(r) + m * base_y2(r);
  };
  return out;
}

// ---------------------------------------------------------------------------
// Built-in families

namespace {

Profile make_plane() {
  Profile p;
  p.name = "plane";
  p.y = [](double r) { return r; };
  p.y1 = [](double) { return 1.0; };
  p.y2 = [](double) { return 0.0; };
  p.ell = kInf;
  p.kind = ProfileKind::open;
  return p;
}

Profile make_sphere(double k) {
  if (!(k > 0)) throw std::invalid_argument("sphere profile: curvature must be > 0");
  double s = std::sqrt(k);
  Profile p;
  p.name = "sphere";
  p.y = [s](double r) { return std::sin(s * r) / s; };
  p.y1 = [s](double r) { return std::cos(s * r); };
  p.y2 = [s](double r) { return -s * std::sin(s * r); };
  p.ell = kPi / s;
  p.kind = ProfileKind::closed;
  return p;
}

Profile make_hyperbolic(double k) {
  if (!(k > 0)) throw std::invalid_argument("hyperbolic profile: curvature must be > 0");
  double s = std::sqrt(k);
  Profile p;
  p.name = "hyperbolic";
  p.y = [s](double r) { return std::sinh(s * r) / s; };
  p.y1 = [s](double r) { return std::cosh(s * r); };
  p.y2 = [s](double r) { return s * std::sinh(s * r); };
  p.ell = kInf;
  p.kind = ProfileKind::open;
  return p;
}

// Meridian of an ellipsoid of revolution with equatorial semi-axis a and
// polar semi-axis b, parameterized by arclength r from a pole:
//   point (a sin u, b cos u), r = int_0^u sqrt(a^2 cos^2 + b^2 sin^2),
//   y(r) = a sin u(r).
struct EllipsoidMeridian {
  double a, b;
  double ell;
  std::vector<double> ts;              // arclength nodes
  std::vector<double> us;              // u at the nodes

  double g(double u) const {
    double c = std::cos(u), s = std::sin(u);
    return std::sqrt(a * a * c * c + b * b * s * s);
  }
  double gp(double u) const { return (b * b - a * a) * std::sin(u) * std::cos(u) / g(u); }

  double u_at(double r) const {
    if (r <= 0) return 0.0;
    if (r >= ell) return kPi;
    auto it = std::upper_bound(ts.begin(), ts.end(), r);
    size_t i = std::max<size_t>(1, it - ts.begin()) - 1;
    if (i + 1 >= ts.size()) i = ts.size() - 2;
    double t0 = ts[i], t1 = ts[i + 1];
    double u0 = us[i], u1 = us[i + 1];
    auto uprime = [this](double u) { return 1.0 / g(u); };
    auto uprime2 = [this](double u) {
      double gg = g(u);
      return -gp(u) / (gg * gg * gg);
    };
    Hermite5 hm{u0, uprime(u0), uprime2(u0), u1, uprime(u1), uprime2(u1), t1 - t0};
    return hm.value(r - t0);
  }
};

Profile make_ellipsoid(const char* name, double a, double b) {
  if (!(a > 0 && b > 0)) throw std::invalid_argument("ellipsoid profile: semi-axes must be > 0");

  auto mer = std::make_shared<EllipsoidMeridian>();
  mer->a = a;
  mer->b = b;

  // Integrate u(r) until u = pi; the endpoint is refined from the last step.
  OdeOptions opt;
  opt.tol = 1e-12;
  opt.max_step = 0.002 * std::max(a, b);
  double prev_t = 0, prev_u = 0;
  bool done = false;
  auto rhs = [&](double, const std::array<double, 1>& u, std::array<double, 1>& du) {
    du[0] = 1.0 / mer->g(std::min(u[0], kPi));
  };
  integrate_dp54<1>(
      rhs, {0.0}, 0.0, 20.0 * (a + b), opt, [&](double t, const std::array<double, 1>& u) {
        if (u[0] >= kPi) {
          // linear-in-u backtrack is accurate enough here because du/dr is
          // smooth and bounded away from zero
          double frac = (kPi - prev_u) / (u[0] - prev_u);
          mer->ts.push_back(prev_t + frac * (t - prev_t));
          mer->us.push_back(kPi);
          done = true;
          return false;
        }
        mer->ts.push_back(t);
        mer->us.push_back(u[0]);
        prev_t = t;
        prev_u = u[0];
        return true;
      });
  if (!done) throw std::runtime_error("ellipsoid profile: meridian integration failed");
  mer->ell = mer->ts.back();

  Profile p;
  p.name = name;
  p.ell = mer->ell;
  p.kind = ProfileKind::closed;
  p.y = [mer](double r) { return mer->a * std::sin(mer->u_at(r)); };
  p.y1 = [mer](double r) {
    double u = mer->u_at(r);
    return mer->a * std::cos(u) / mer->g(u);
  };
  p.y2 = [mer](double r) {
    double u = mer->u_at(r);
    double gg = mer->g(u);
    double up = 1.0 / gg;
    double upp = -mer->gp(u) / (gg * gg * gg);
    return -mer->a * std::sin(u) * up * up + mer->a * std::cos(u) * upp;
  };
  return p;
}

}  // namespace

Profile builtin_profile(const std::string& name, const std::vector<double>& params) {
  auto need = [&](size_t n) {
    if (params.size() != n)
      throw std::invalid_argument("builtin_profile: wrong parameter count for " + name);
  };
  if (name == "plane") {
    need(0);
    return make_plane();
  }
  if (name == "sphere") {
    need(1);
    return make_sphere(params[0]);
  }
  if (name == "hyperbolic") {
    need(1);
    return make_hyperbolic(params[0]);
  }
  if (name == "prolate") {
    need(2);
    if (!(params[1] > params[0]))
      throw std::invalid_argument("prolate profile: requires polar semi-axis b > a");
    return make_ellipsoid("prolate", params[0], params[1]);
  }
  if (name == "oblate") {
    need(2);
    if (!(params[1] < params[0]))
      throw std::invalid_argument("oblate profile: requires polar semi-axis b < a");
    return make_ellipsoid("oblate", params[0], params[1]);
  }
  throw std::invalid_argument("builtin_profile: unknown family '" + name + "'");
}

// ---------------------------------------------------------------------------
// Tabulated profiles

namespace {

// Natural cubic spline with clamped left slope (y'(0) = 1 by the chart
// normalization); the right end is clamped to -1 when the profile closes.
struct CubicSpline {
  std::vector<double> x, y, m;  // m holds second derivatives at the nodes

  void build(double left_slope, bool clamp_right, double right_slope) {
    size_t n = x.size();
    std::vector<double> a(n), bdiag(n), c(n), d(n);
    bdiag[0] = 2 * (x[1] - x[0]);
    c[0] = x[1] - x[0];
    d[0] = 6 * ((y[1] - y[0]) / (x[1] - x[0]) - left_slope);
    for (size_t i = 1; i + 1 < n; ++i) {
      double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
      a[i] = h0;
      bdiag[i] = 2 * (h0 + h1);
      c[i] = h1;
      d[i] = 6 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    double hn = x[n - 1] - x[n - 2];
    if (clamp_right) {
      a[n - 1] = hn;
      bdiag[n - 1] = 2 * hn;
      d[n - 1] = 6 * (right_slope - (y[n - 1] - y[n - 2]) / hn);
    } else {
      a[n - 1] = 0;
      bdiag[n - 1] = 1;
      d[n - 1] = 0;
    }
    for (size_t i = 1; i < n; ++i) {
      double w = a[i] / bdiag[i - 1];
      bdiag[i] -= w * c[i - 1];
      d[i] -= w * d[i - 1];
    }
    m.resize(n);
    m[n - 1] = d[n - 1] / bdiag[n - 1];
    for (size_t i = n - 1; i-- > 0;) m[i] = (d[i] - c[i] * m[i + 1]) / bdiag[i];
  }

  size_t segment(double r) const {
    auto it = std::upper_bound(x.begin(), x.end(), r);
    size_t i = std::max<size_t>(1, it - x.begin()) - 1;
    return std::min(i, x.size() - 2);
  }
  double value(double r) const {
    size_t i = segment(r);
    double h = x[i + 1] - x[i], t = r - x[i], u = x[i + 1] - r;
    return (m[i] * u * u * u + m[i + 1] * t * t * t) / (6 * h) +
           (y[i] / h - m[i] * h / 6) * u + (y[i + 1] / h - m[i + 1] * h / 6) * t;
  }
  double deriv(double r) const {
    size_t i = segment(r);
    double h = x[i + 1] - x[i], t = r - x[i], u = x[i + 1] - r;
    return (-m[i] * u * u + m[i + 1] * t * t) / (2 * h) +
           (y[i + 1] - y[i]) / h - (m[i + 1] - m[i]) * h / 6;
  }
  double deriv2(double r) const {
    size_t i = segment(r);
    double h = x[i + 1] - x[i];
    return (m[i] * (x[i + 1] - r) + m[i + 1] * (r - x[i])) / h;
  }
};

}  // namespace

Profile profile_from_samples(const std::vector<std::pair<double, double>>& samples) {
  if (samples.size() < 8)
    throw std::invalid_argument("profile_from_samples: need at least 8 samples");
  if (std::abs(samples.front().first) > 1e-12 || std::abs(samples.front().second) > 1e-9)
    throw std::invalid_argument("profile_from_samples: samples must start at (0, 0)");

  auto sp = std::make_shared<CubicSpline>();
  for (auto& [r, v] : samples) {
    if (!sp->x.empty() && !(r > sp->x.back()))
      throw std::invalid_argument("profile_from_samples: r must be strictly increasing");
    sp->x.push_back(r);
    sp->y.push_back(v);
  }
  bool closes = std::abs(sp->y.back()) <= 1e-9 * std::max(1.0, sp->x.back());
  sp->build(1.0, closes, -1.0);

  Profile p;
  p.name = "table";
  p.y = [sp](double r) { return sp->value(r); };
  p.y1 = [sp](double r) { return sp->deriv(r); };
  p.y2 = [sp](double r) { return sp->deriv2(r); };
  if (closes) {
    p.ell = sp->x.back();
    p.kind = ProfileKind::closed;
  } else {
    p.ell = kInf;
    p.kind = ProfileKind::open;
    p.r_max = sp->x.back();
  }
  return p;
}

}  // namespace sra
