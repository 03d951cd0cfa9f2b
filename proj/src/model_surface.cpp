#include "sra/model_surface.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <cstdio>
#include <cstdlib>

#include "sra/ode.hpp"

namespace sra {

namespace {

constexpr double kCutExcessThreshold = 1e-7;  // arclength excess declaring non-minimizing
constexpr double kTinyTheta = 1e-9;
constexpr int kDefaultAtlasAngles = 192;
constexpr double kShooterMaxStep = 0.15;  // interpolation error stays below 1e-10
constexpr double kTraceMaxStep = 0.05;    // stored paths interpolate to ~1e-12

double model_hard_cap(const ModelSurface& m, double r1) {
  return m.closed() ? 2.2 * m.ell() : 1.02 * (r1 + m.profile().r_max);
}

PathSample make_sample(const Profile& p, double nu, double t, double r, double v,
                       double theta) {
  double y = p.y(r), y1 = p.y1(r);
  double inv2 = 1.0 / (y * y);
  PathSample s;
  s.t = t;
  s.u = r;
  s.v = theta;
  s.du = v;
  s.dv = nu * inv2;
  s.d2u = nu * nu * y1 * inv2 / y;
  s.d2v = -2.0 * nu * y1 * v * inv2 / y;
  return s;
}

Hermite5 hermite_u(const PathSample& a, const PathSample& b) {
  return Hermite5{a.u, a.du, a.d2u, b.u, b.du, b.d2u, b.t - a.t};
}
Hermite5 hermite_v(const PathSample& a, const PathSample& b) {
  return Hermite5{a.v, a.dv, a.d2v, b.v, b.dv, b.d2v, b.t - a.t};
}

// Root of hm.value(t) = target on [0, h] by bisection; assumes a bracket.
double hermite_value_root(const Hermite5& hm, double lo, double hi, double target) {
  double flo = hm.value(lo) - target;
  for (int i = 0; i < 60 && hi - lo > 1e-14 * (1.0 + hi); ++i) {
    double mid = 0.5 * (lo + hi);
    double fm = hm.value(mid) - target;
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Meridian geodesics (phi = 0 or pi): piecewise linear, passing through the
// vertices with the reflection theta -> theta + pi.

struct MeridianPiece {
  double t0, t1;   // parameter range
  double r0;       // r at t0
  double slope;    // +-1
  double theta;    // constant on the piece
};

std::vector<MeridianPiece> meridian_pieces(const ModelSurface& m, double r1,
                                           bool outward, double t_max) {
  std::vector<MeridianPiece> pieces;
  double t = 0, r = r1, slope = outward ? 1.0 : -1.0, theta = 0.0;
  double end = m.domain_end();
  while (t < t_max && pieces.size() < 64) {
    double t_next;
    if (slope > 0) {
      t_next = m.closed() ? t + (end - r) : t_max;
    } else {
      t_next = t + r;
    }
    t_next = std::min(t_next, t_max);
    pieces.push_back({t, t_next, r, slope, theta});
    r = r + slope * (t_next - t);
    t = t_next;
    if (t >= t_max) break;
    // reflection through a vertex (r = 0 or r = ell)
    slope = -slope;
    theta = wrap_2pi(theta + kPi);
  }
  return pieces;
}

GeodesicPath meridian_trace(const ModelSurface& m, double r1, bool outward,
                            double t_max) {
  GeodesicPath path;
  path.clairaut = 0.0;
  path.err_bound = 1e-14 * (1.0 + t_max);
  auto pieces = meridian_pieces(m, r1, outward, t_max);
  path.pole_crossing = pieces.size() > 1;
  for (const auto& pc : pieces) {
    int n = std::max(2, (int)std::ceil((pc.t1 - pc.t0) / kTraceMaxStep) + 1);
    for (int i = 0; i < n; ++i) {
      double t = pc.t0 + (pc.t1 - pc.t0) * i / (n - 1.0);
      PathSample s{t, pc.r0 + pc.slope * (t - pc.t0), pc.theta, pc.slope, 0, 0, 0};
      path.samples.push_back(s);
    }
  }
  return path;
}

double meridian_r_at(const ModelSurface& m, double r1, bool outward, double t) {
  auto pieces = meridian_pieces(m, r1, outward, t + 1e-12);
  const auto& pc = pieces.back();
  return pc.r0 + pc.slope * (std::min(t, pc.t1) - pc.t0);
}

// ---------------------------------------------------------------------------
// Flat-plane fast path: geodesics are straight lines.

GeodesicPath plane_trace(double r1, double phi, double t_max) {
  GeodesicPath path;
  double nu = r1 * std::sin(phi);
  path.clairaut = nu;
  path.err_bound = 1e-14 * (1.0 + t_max);
  int n = std::max(2, (int)std::ceil(t_max / kTraceMaxStep) + 1);
  double c = std::cos(phi), s = std::sin(phi);
  for (int i = 0; i < n; ++i) {
    double t = t_max * i / (n - 1.0);
    double x = r1 + t * c, y = t * s;
    double r = std::hypot(x, y);
    double theta = wrap_2pi(std::atan2(y, x));
    double v = (t + r1 * c) / r;
    PathSample smp{t, r, theta, v, nu / (r * r), nu * nu / (r * r * r),
                   -2.0 * nu * v / (r * r * r)};
    path.samples.push_back(smp);
  }
  return path;
}

double plane_distance(double r1, double r2, double theta) {
  return std::sqrt(std::max(0.0, r1 * r1 + r2 * r2 - 2 * r1 * r2 * std::cos(theta)));
}

// Straight segment from (r1, 0) to (r2, theta) as a polar-coordinate path.
GeodesicPath plane_segment(double r1, double r2, double theta) {
  double d = plane_distance(r1, r2, theta);
  if (d < 1e-15) return plane_trace(r1, 0.0, 1e-12);
  // initial angle with the outward meridian
  double cosphi = (r2 * std::cos(theta) - r1) / d;
  double phi = std::acos(std::min(1.0, std::max(-1.0, cosphi)));
  return plane_trace(r1, phi, d);
}

// ---------------------------------------------------------------------------
// Generic traces

struct StopFlags {
  bool truncated = false;
};

// Integrates the reduced geodesic system (r, v, theta) with Clairaut constant
// nu, recording samples. Halts on domain escape.
GeodesicPath generic_trace(const ModelSurface& m, double r1, double phi, double t_max,
                           double max_step, StopFlags* flags = nullptr) {
  const Profile& p = m.profile();
  double nu = p.y(r1) * std::sin(phi);
  GeodesicPath path;
  path.clairaut = nu;

  double r_lo = 1e-7;
  double r_hi = m.closed() ? m.ell() - 1e-7 : 1.5 * p.r_max;

  auto rhs2 = [&p, nu](double, const std::array<double, 3>& s, std::array<double, 3>& d) {
    double y = p.y(s[0]), y1 = p.y1(s[0]);
    double inv2 = 1.0 / (y * y);
    d[0] = s[1];
    d[1] = nu * nu * y1 * inv2 / y;
    d[2] = nu * inv2;
  };

  OdeOptions opt;
  opt.tol = m.integ_tol();
  opt.max_step = max_step;
  double defect = 0.0;
  integrate_dp54<3>(rhs2, {r1, std::cos(phi), 0.0}, 0.0, t_max, opt,
                    [&](double t, const std::array<double, 3>& s) {
                      path.samples.push_back(make_sample(p, nu, t, s[0], s[1], s[2]));
                      double y = p.y(s[0]);
                      defect = std::max(defect,
                                        std::abs(s[1] * s[1] + nu * nu / (y * y) - 1.0));
                      if (s[0] < r_lo || s[0] > r_hi) {
                        if (flags) flags->truncated = true;
                        return false;
                      }
                      return true;
                    });
  path.err_bound = std::max(defect * 2.0, 10.0 * m.integ_tol());
  return path;
}

}  // namespace

PathSample GeodesicPath::at(double t) const {
  if (samples.empty()) throw NumericalFailure("GeodesicPath::at: empty path");
  if (t <= samples.front().t) return samples.front();
  if (t >= samples.back().t) return samples.back();
  auto it = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double x, const PathSample& s) { return x < s.t; });
  size_t j = it - samples.begin();
  const PathSample& b = samples[j];
  const PathSample& a = samples[j - 1];
  if (b.t - a.t < 1e-15) return a;
  Hermite5 hu = hermite_u(a, b), hv = hermite_v(a, b);
  double dt = t - a.t;
  PathSample out;
  out.t = t;
  out.u = hu.value(dt);
  out.v = hv.value(dt);
  out.du = hu.derivative(dt);
  out.dv = hv.derivative(dt);
  out.d2u = a.d2u;
  out.d2v = a.d2v;
  return out;
}

// ---------------------------------------------------------------------------
// ModelSurface

struct ModelSurface::AtlasCache {
  std::mutex mu;
  std::map<std::pair<double, int>,
           std::shared_future<std::shared_ptr<const GeodesicAtlas>>>
      entries;
};

ModelSurface::ModelSurface(Profile profile, double integ_tol)
    : profile_(std::move(profile)),
      integ_tol_(integ_tol),
      is_plane_(profile_.name == "plane"),
      cache_(std::make_shared<AtlasCache>()) {}

double ModelSurface::scan_horizon() const {
  return closed() ? 2.2 * ell() : 2.0 * profile_.r_max;
}

std::shared_ptr<const GeodesicAtlas> ModelSurface::atlas(double r1, int n_angles) const {
  if (n_angles <= 0) n_angles = kDefaultAtlasAngles;
  auto key = std::make_pair(r1, n_angles);
  std::promise<std::shared_ptr<const GeodesicAtlas>> prom;
  std::shared_future<std::shared_ptr<const GeodesicAtlas>> fut;
  bool builder = false;
  {
    std::lock_guard<std::mutex> lock(cache_->mu);
    auto it = cache_->entries.find(key);
    if (it == cache_->entries.end()) {
      fut = prom.get_future().share();
      cache_->entries.emplace(key, fut);
      builder = true;
    } else {
      fut = it->second;
    }
  }
  if (builder) {
    try {
      prom.set_value(std::make_shared<GeodesicAtlas>(*this, r1, n_angles));
    } catch (...) {
      prom.set_exception(std::current_exception());
    }
  }
  return fut.get();
}

// ---------------------------------------------------------------------------
// Public traces

GeodesicPath geodesic_trace(const ModelSurface& m, double r1, double phi,
                            double t_max) {
  if (!(r1 > 0 && r1 < m.domain_end()))
    throw std::domain_error("geodesic_trace: r1 outside (0, ell)");
  if (!(phi >= 0 && phi <= kPi)) throw std::domain_error("geodesic_trace: phi outside [0, pi]");
  if (!(t_max > 0) || !std::isfinite(t_max))
    throw std::domain_error("geodesic_trace: t_max must be positive and finite");
  if (phi < 1e-12) return meridian_trace(m, r1, true, t_max);
  if (kPi - phi < 1e-12) return meridian_trace(m, r1, false, t_max);
  if (m.analytic_plane()) return plane_trace(r1, phi, t_max);
  return generic_trace(m, r1, phi, t_max, kTraceMaxStep);
}

double r_phi(const ModelSurface& m, double r1, double phi, double t) {
  if (t == 0) return r1;
  if (phi < 1e-12) return meridian_r_at(m, r1, true, t);
  if (kPi - phi < 1e-12) return meridian_r_at(m, r1, false, t);
  if (m.analytic_plane())
    return std::sqrt(r1 * r1 + t * t + 2 * r1 * t * std::cos(phi));

  const Profile& p = m.profile();
  double nu = p.y(r1) * std::sin(phi);
  auto rhs = [&p, nu](double, const std::array<double, 3>& s, std::array<double, 3>& d) {
    double y = p.y(s[0]), y1 = p.y1(s[0]);
    double inv2 = 1.0 / (y * y);
    d[0] = s[1];
    d[1] = nu * nu * y1 * inv2 / y;
    d[2] = nu * inv2;
  };
  OdeOptions opt;
  opt.tol = m.integ_tol();
  opt.max_step = kInf;
  double r_end = r1;
  integrate_dp54<3>(rhs, {r1, std::cos(phi), 0.0}, 0.0, t, opt,
                    [&](double, const std::array<double, 3>& s) {
                      r_end = s[0];
                      return true;
                    });
  return r_end;
}

// ---------------------------------------------------------------------------
// Atlas construction: fan of geodesics with Jacobi fields, truncated shortly
// after the first theta = pi crossing or conjugate point.

namespace {

struct AtlasBuildResult {
  GeodesicPath path;
  double t_conj = kInf;
  double t_pi = kInf;
};

AtlasBuildResult trace_with_events(const ModelSurface& m, double r1, double phi,
                                   double hard_cap, double max_step,
                                   bool stop_on_pi = true) {
  const Profile& p = m.profile();
  double nu = p.y(r1) * std::sin(phi);
  AtlasBuildResult out;
  out.path.clairaut = nu;

  double r_lo = 1e-7;
  double r_hi = m.closed() ? m.ell() - 1e-7 : 1.5 * p.r_max;

  auto rhs = [&p, nu](double, const std::array<double, 5>& s, std::array<double, 5>& d) {
    double y = p.y(s[0]), y1 = p.y1(s[0]), y2 = p.y2(s[0]);
    double inv2 = 1.0 / (y * y);
    d[0] = s[1];
    d[1] = nu * nu * y1 * inv2 / y;
    d[2] = nu * inv2;
    d[3] = s[4];
    d[4] = (y2 / y) * s[3];  // J'' = -K J with K = -y''/y
  };

  OdeOptions opt;
  opt.tol = m.integ_tol();
  opt.max_step = max_step;

  std::array<double, 5> prev{r1, std::cos(phi), 0.0, 0.0, 1.0};
  double prev_t = 0.0;
  double stop_after = kInf;
  double defect = 0.0;

  integrate_dp54<5>(rhs, prev, 0.0, hard_cap, opt,
                    [&](double t, const std::array<double, 5>& s) {
                      out.path.samples.push_back(make_sample(p, nu, t, s[0], s[1], s[2]));
                      double y = p.y(s[0]);
                      defect = std::max(defect,
                                        std::abs(s[1] * s[1] + nu * nu / (y * y) - 1.0));
                      if (t > 0) {
                        if (std::isinf(out.t_pi) && prev[2] < kPi && s[2] >= kPi) {
                          const auto& b = out.path.samples.back();
                          const auto& a = out.path.samples[out.path.samples.size() - 2];
                          out.t_pi = a.t + hermite_value_root(hermite_v(a, b), 0,
                                                              b.t - a.t, kPi);
                        }
                        if (std::isinf(out.t_conj) && prev[3] * s[3] <= 0 && prev[3] > 0) {
                          double ya = p.y(prev[0]), yb = p.y(s[0]);
                          Hermite5 hj{prev[3], prev[4], (p.y2(prev[0]) / ya) * prev[3],
                                      s[3],    s[4],    (p.y2(s[0]) / yb) * s[3],
                                      t - prev_t};
                          out.t_conj =
                              prev_t + hermite_value_root(hj, 0, t - prev_t, 0.0);
                        }
                        double ev = stop_on_pi ? std::min(out.t_pi, out.t_conj)
                                               : out.t_conj;
                        if (std::isinf(stop_after) && !std::isinf(ev))
                          stop_after = ev + std::max(0.1, 0.02 * ev);
                      }
                      prev = s;
                      prev_t = t;
                      if (t >= stop_after) return false;
                      if (s[0] < r_lo || s[0] > r_hi) return false;
                      return true;
                    });
  out.path.err_bound = std::max(defect * 2.0, 10.0 * m.integ_tol());
  return out;
}

}  // namespace

GeodesicAtlas::GeodesicAtlas(const ModelSurface& m, double r1, int n_angles)
    : m_(&m), r1_(r1) {
  traces_.resize(n_angles);
  double hard = model_hard_cap(m, r1);
  for (int i = 0; i < n_angles; ++i) {
    double phi = kPi * (i + 0.5) / n_angles;
    auto res = trace_with_events(m, r1, phi, hard, kShooterMaxStep);
    traces_[i].phi = phi;
    traces_[i].path = std::move(res.path);
    traces_[i].t_conj = res.t_conj;
    traces_[i].t_pi = res.t_pi;
    traces_[i].t_bound = std::min({res.t_conj, res.t_pi, hard});
  }
}

// ---------------------------------------------------------------------------
// Crossings of r = r2 along a traced or freshly shot geodesic

namespace {

struct Crossing {
  double t;
  double theta;
};

// Appends the roots of u(t) = r2 inside the sample segment [a, b].
void segment_crossings(const PathSample& a, const PathSample& b, double r2,
                       std::vector<Crossing>& out) {
  double h = b.t - a.t;
  if (h <= 1e-15) return;
  Hermite5 hu = hermite_u(a, b);
  Hermite5 hv = hermite_v(a, b);
  double fa = a.u - r2, fb = b.u - r2;

  auto add_root = [&](double lo, double hi, double flo, double fhi) {
    if (flo == 0) {
      out.push_back({a.t + lo, hv.value(lo)});
      return;
    }
    if (flo * fhi > 0) return;
    double troot = hermite_value_root(hu, lo, hi, r2);
    out.push_back({a.t + troot, hv.value(troot)});
  };

  if (a.du * b.du < 0) {
    // turning point inside the segment: split at the radial extremum
    double lo = 0, hi = h, dlo = a.du;
    for (int i = 0; i < 50; ++i) {
      double mid = 0.5 * (lo + hi);
      double dm = hu.derivative(mid);
      if ((dm > 0) == (dlo > 0)) {
        lo = mid;
        dlo = dm;
      } else {
        hi = mid;
      }
    }
    double tm = 0.5 * (lo + hi);
    double fm = hu.value(tm) - r2;
    add_root(0, tm, fa, fm);
    add_root(tm, h, fm, fb);
  } else {
    add_root(0, h, fa, fb);
  }
}

std::vector<Crossing> path_crossings(const GeodesicPath& path, double r2,
                                     double theta_cap = kPi + 0.02,
                                     int max_count = 6) {
  std::vector<Crossing> out;
  for (size_t j = 1; j < path.samples.size(); ++j) {
    segment_crossings(path.samples[j - 1], path.samples[j], r2, out);
    if ((int)out.size() >= max_count) break;
    if (path.samples[j].v > theta_cap) break;
  }
  while (!out.empty() && out.back().theta > theta_cap) out.pop_back();
  if ((int)out.size() > max_count) out.resize(max_count);
  return out;
}

// Shoots the phi geodesic without storing the full path and returns the
// crossings of r = r2 up to t_cap.
std::vector<Crossing> shoot_crossings(const ModelSurface& m, double r1, double phi,
                                      double r2, double t_cap, int max_count = 6,
                                      double theta_cap = kPi + 0.02) {
  const Profile& p = m.profile();
  double nu = p.y(r1) * std::sin(phi);
  std::vector<Crossing> out;

  double r_lo = 1e-7;
  double r_hi = m.closed() ? m.ell() - 1e-7 : 1.5 * p.r_max;

  auto rhs = [&p, nu](double, const std::array<double, 3>& s, std::array<double, 3>& d) {
    double y = p.y(s[0]), y1 = p.y1(s[0]);
    double inv2 = 1.0 / (y * y);
    d[0] = s[1];
    d[1] = nu * nu * y1 * inv2 / y;
    d[2] = nu * inv2;
  };

  OdeOptions opt;
  opt.tol = m.integ_tol();
  opt.max_step = kShooterMaxStep;

  PathSample prev = make_sample(p, nu, 0.0, r1, std::cos(phi), 0.0);
  integrate_dp54<3>(rhs, {r1, std::cos(phi), 0.0}, 0.0, t_cap, opt,
                    [&](double t, const std::array<double, 3>& s) {
                      PathSample cur = make_sample(p, nu, t, s[0], s[1], s[2]);
                      if (t > 0) segment_crossings(prev, cur, r2, out);
                      prev = cur;
                      if ((int)out.size() >= max_count) return false;
                      if (cur.v > theta_cap) return false;
                      if (s[0] < r_lo || s[0] > r_hi) return false;
                      return true;
                    });
  while (!out.empty() && out.back().theta > theta_cap) out.pop_back();
  if ((int)out.size() > max_count) out.resize(max_count);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// d_theta

namespace {

struct ShotCandidate {
  double length;
  double phi;        // initial angle; meridian routes use 0 / pi
  bool via_vertex;   // meridian route through a vertex
  bool outward;      // for meridian routes
};

// Entry used during bracketing: crossing angles per atlas trace.
struct TraceCrossings {
  double phi;
  std::vector<Crossing> crossings;
};

void refine_root(const ModelSurface& m, double r1, double r2, double theta, size_t k,
                 double phi_a, double fa, double phi_b, double fb, double t_cap,
                 std::vector<ShotCandidate>& candidates) {
  if (fa * fb > 0) return;
  if (phi_a > phi_b) {
    std::swap(phi_a, phi_b);
    std::swap(fa, fb);
  }
  double t_at_root = 0;
  auto objective = [&](double phi) {
    auto cr = shoot_crossings(m, r1, phi, r2, t_cap, (int)k + 1);
    if (cr.size() <= k) return std::nan("");
    t_at_root = cr[k].t;
    return cr[k].theta - theta;
  };
  try {
    double phi_root = find_root(objective, phi_a, phi_b, fa, fb, 3e-11);
    double resid = objective(phi_root);
    if (std::isnan(resid) || std::abs(resid) > 1e-6) return;
    double t_root = t_at_root, f_root = resid;
    double length = t_root;
    // first-order correction for the residual angular miss, from a nearby shot
    double dphi = 1e-7 * (1.0 + std::abs(phi_root));
    double probe = phi_root + (phi_root + dphi <= kPi ? dphi : -dphi);
    double f_probe = objective(probe);
    if (!std::isnan(f_probe) && std::abs(f_probe - f_root) > 1e-9) {
      double dt_dtheta = (t_at_root - t_root) / (f_probe - f_root);
      double corr = -f_root * dt_dtheta;
      if (std::abs(corr) < 1e-4) length = t_root + corr;
    }
    candidates.push_back({length, phi_root, false, false});
  } catch (const std::exception&) {
    // bracket dissolved (crossing pair born/died inside); skip
  }
}

void collect_roots(const ModelSurface& m, double r1, double r2, double theta,
                   const std::vector<TraceCrossings>& sweep, double t_cap,
                   std::vector<ShotCandidate>& candidates) {
  size_t max_ord = 0;
  for (const auto& tc : sweep) max_ord = std::max(max_ord, tc.crossings.size());

  for (size_t k = 0; k < max_ord; ++k) {
    for (size_t i = 0; i + 1 < sweep.size(); ++i) {
      const auto& A = sweep[i];
      const auto& B = sweep[i + 1];
      if (A.crossings.size() <= k || B.crossings.size() <= k) continue;
      double fa = A.crossings[k].theta - theta;
      double fb = B.crossings[k].theta - theta;
      if (fa * fb > 0) continue;
      double local_cap =
          std::min(t_cap, 1.3 * std::max(A.crossings[k].t, B.crossings[k].t) + 0.2);
      refine_root(m, r1, r2, theta, k, A.phi, fa, B.phi, fb, local_cap, candidates);
    }
  }

  // When the target circle becomes tangent to the geodesic family between two
  // sweep angles, a pair of crossings merges and dies there; the angles the
  // pair sweeps out next to the tangency are not bracketed by plain adjacent
  // pairs. Locate the tangency angle and bracket against it.
  for (size_t i = 0; i + 1 < sweep.size(); ++i) {
    const auto* richer = &sweep[i];
    const auto* poorer = &sweep[i + 1];
    if (richer->crossings.size() < poorer->crossings.size()) std::swap(richer, poorer);
    size_t cb = poorer->crossings.size();
    if (richer->crossings.size() < cb + 2) continue;
    for (size_t k1 = cb; k1 + 1 < richer->crossings.size(); k1 += 2) {
      size_t k2 = k1 + 1;
      // the dying pair only sweeps angles between its two theta values
      double th_lo = std::min(richer->crossings[k1].theta, richer->crossings[k2].theta);
      double th_hi = std::max(richer->crossings[k1].theta, richer->crossings[k2].theta);
      if (theta < th_lo - 1e-9 || theta > th_hi + 1e-9) continue;
      auto has_pair = [&](double phi) {
        return shoot_crossings(m, r1, phi, r2, t_cap, (int)k2 + 1).size() >= k2 + 1;
      };
      double lo = richer->phi, hi = poorer->phi;  // has_pair(lo), !has_pair(hi)
      for (int it = 0; it < 26 && std::abs(hi - lo) > 1e-9; ++it) {
        double mid = 0.5 * (lo + hi);
        (has_pair(mid) ? lo : hi) = mid;
      }
      auto near_cr = shoot_crossings(m, r1, lo, r2, t_cap, (int)k2 + 1);
      if (near_cr.size() < k2 + 1) continue;
      double f1 = richer->crossings[k1].theta - theta;
      double g1 = near_cr[k1].theta - theta;
      double f2 = richer->crossings[k2].theta - theta;
      double g2 = near_cr[k2].theta - theta;
      double cap = std::min(t_cap, 1.3 * std::max(near_cr[k2].t,
                                                  richer->crossings[k2].t) + 0.2);
      refine_root(m, r1, r2, theta, k1, richer->phi, f1, lo, g1, cap, candidates);
      refine_root(m, r1, r2, theta, k2, richer->phi, f2, lo, g2, cap, candidates);
    }
  }
}

GeodesicPath candidate_path(const ModelSurface& m, double r1, const ShotCandidate& c) {
  if (c.via_vertex) return meridian_trace(m, r1, c.outward, c.length);
  return geodesic_trace(m, r1, c.phi, c.length);
}

}  // namespace

ModelDistance d_theta_full(const ModelSurface& m, double r1, double r2, double theta,
                           bool want_paths,
                           std::shared_ptr<const GeodesicAtlas> atlas) {
  if (!(r1 > 0 && r1 < m.domain_end()))
    throw std::domain_error("d_theta: r1 outside (0, ell)");
  if (!(r2 >= 0 && r2 < m.domain_end()))
    throw std::domain_error("d_theta: r2 outside [0, ell)");
  theta = angle_separation(theta);

  ModelDistance out;
  if (r2 < 1e-12) {
    out.distance = r1;
    if (want_paths) out.paths.push_back(meridian_trace(m, r1, false, r1));
    return out;
  }
  if (theta < kTinyTheta) {
    double mid = 0.5 * (m.profile().y(r1) + m.profile().y(r2));
    out.distance = std::hypot(r1 - r2, mid * theta);
    if (want_paths)
      out.paths.push_back(
          meridian_trace(m, r1, r2 > r1, std::max(std::abs(r1 - r2), 1e-12)));
    return out;
  }
  if (m.analytic_plane()) {
    out.distance = plane_distance(r1, r2, theta);
    if (want_paths) out.paths.push_back(plane_segment(r1, r2, theta));
    return out;
  }

  bool target_pi = kPi - theta < 1e-12;
  double bound_vertex = r1 + r2;
  double bound_far = m.closed() ? 2 * m.ell() - r1 - r2 : kInf;
  double t_cap = std::min(bound_vertex, bound_far) * 1.0001 + 1e-9;

  std::vector<ShotCandidate> candidates;
  if (target_pi) {
    candidates.push_back({bound_vertex, kPi, true, false});
    if (m.closed()) candidates.push_back({bound_far, 0.0, true, true});
  }

  if (!atlas) atlas = m.atlas(r1);

  for (int attempt = 0; attempt < 3; ++attempt) {
    std::vector<TraceCrossings> sweep;
    const auto& traces = atlas->traces();
    int refine = 1 << attempt;  // densify between atlas angles on retries
    double dphi_edge = std::min(1e-3, kPi / (4.0 * traces.size() * refine));

    // near-meridian boundary traces capture arrivals with theta -> 0
    if (r2 >= r1 - 1e-12)
      sweep.push_back({dphi_edge, shoot_crossings(m, r1, dphi_edge, r2, t_cap)});
    for (size_t i = 0; i < traces.size(); ++i) {
      if (attempt == 0) {
        sweep.push_back({traces[i].phi, path_crossings(traces[i].path, r2)});
      } else {
        for (int s = 0; s < refine; ++s) {
          double phi = traces[i].phi + (s ? s * (kPi / traces.size()) / refine : 0.0);
          if (phi >= kPi) continue;
          sweep.push_back({phi, shoot_crossings(m, r1, phi, r2, t_cap)});
        }
      }
    }
    if (r2 <= r1 + 1e-12)
      sweep.push_back(
          {kPi - dphi_edge, shoot_crossings(m, r1, kPi - dphi_edge, r2, t_cap)});

    size_t before = candidates.size();
    collect_roots(m, r1, r2, theta, sweep, t_cap, candidates);
    if (std::getenv("SRA_DEBUG_SWEEP") && candidates.empty()) {
      std::fprintf(stderr, "sweep dump r1=%g r2=%g th=%g t_cap=%g\n", r1, r2, theta,
                   t_cap);
      for (auto& tc : sweep) {
        std::fprintf(stderr, "  phi=%.6f:", tc.phi);
        for (auto& c : tc.crossings) std::fprintf(stderr, " (t=%.4f th=%.4f)", c.t, c.theta);
        std::fprintf(stderr, "\n");
      }
    }
    if (candidates.size() > before || !candidates.empty()) break;
  }

  if (candidates.empty())
    throw NumericalFailure("d_theta: no connecting geodesic bracketed");

  double best = kInf;
  for (const auto& c : candidates) best = std::min(best, c.length);

  out.distance = best;
  out.multiplicity = 0;
  for (const auto& c : candidates) {
    if (c.length <= best + 1e-7) {
      ++out.multiplicity;
      // a non-meridian arrival on the opposite meridian has a mirror twin
      if (target_pi && !c.via_vertex) ++out.multiplicity;
      if (want_paths) out.paths.push_back(candidate_path(m, r1, c));
    }
  }
  if (want_paths) {
    std::sort(out.paths.begin(), out.paths.end(),
              [](const GeodesicPath& a, const GeodesicPath& b) {
                return a.length() < b.length();
              });
  }
  return out;
}

double d_theta(const ModelSurface& m, double r1, double r2, double theta) {
  return d_theta_full(m, r1, r2, theta).distance;
}

// ---------------------------------------------------------------------------
// Conjugate and cut times

double conjugate_time(const ModelSurface& m, double r1, double phi, double t_max) {
  if (m.analytic_plane()) return kInf;
  if (t_max <= 0) t_max = m.scan_horizon();

  if (phi < 1e-12 || kPi - phi < 1e-12) {
    // Jacobi equation along a meridian, r(t) piecewise linear
    bool outward = phi < 1e-12;
    const Profile& p = m.profile();
    auto pieces = meridian_pieces(m, r1, outward, t_max);
    auto r_at = [&](double t) {
      for (const auto& pc : pieces)
        if (t <= pc.t1) return std::max(1e-9, pc.r0 + pc.slope * (t - pc.t0));
      const auto& pc = pieces.back();
      return std::max(1e-9, pc.r0 + pc.slope * (t - pc.t0));
    };
    auto rhs = [&](double t, const std::array<double, 2>& s, std::array<double, 2>& d) {
      double r = r_at(t);
      d[0] = s[1];
      d[1] = (p.y2(r) / p.y(r)) * s[0];
    };
    OdeOptions opt;
    opt.tol = m.integ_tol();
    opt.max_step = kShooterMaxStep;
    double conj = kInf;
    double pt = 0, pJ = 0, pJp = 1;
    integrate_dp54<2>(rhs, {0.0, 1.0}, 0.0, t_max, opt,
                      [&](double t, const std::array<double, 2>& s) {
                        if (t > 0 && pJ > 0 && s[0] <= 0) {
                          Hermite5 hj{pJ,   pJp,  (p.y2(r_at(pt)) / p.y(r_at(pt))) * pJ,
                                      s[0], s[1], (p.y2(r_at(t)) / p.y(r_at(t))) * s[0],
                                      t - pt};
                          conj = pt + hermite_value_root(hj, 0, t - pt, 0.0);
                          return false;
                        }
                        pt = t;
                        pJ = s[0];
                        pJp = s[1];
                        return true;
                      });
    return conj;
  }

  auto res = trace_with_events(m, r1, phi, t_max, kShooterMaxStep,
                               /*stop_on_pi=*/false);
  return res.t_conj;
}

double cut_time(const ModelSurface& m, double r1, double phi,
                std::shared_ptr<const GeodesicAtlas> atlas) {
  if (m.analytic_plane()) return kInf;
  if (!(r1 > 0 && r1 < m.domain_end()))
    throw std::domain_error("cut_time: r1 outside (0, ell)");

  bool meridian = phi < 1e-12 || kPi - phi < 1e-12;
  double horizon = m.scan_horizon();

  double t_up;
  GeodesicPath path;
  if (meridian) {
    double cap = m.closed() ? m.ell() : horizon;
    double conj = conjugate_time(m, r1, phi, 1.02 * cap);
    t_up = std::min(conj, cap);
    path = meridian_trace(m, r1, phi < 1e-12, std::min(t_up * 1.01 + 0.1, horizon));
  } else {
    auto res = trace_with_events(m, r1, phi, horizon, kShooterMaxStep);
    t_up = std::min({res.t_conj, res.t_pi, horizon});
    path = std::move(res.path);
  }

  if (!atlas) atlas = m.atlas(r1);
  auto excess = [&](double t) {
    auto s = path.at(t);
    double d = d_theta_full(m, r1, s.u, angle_separation(s.v), false, atlas).distance;
    return t - d;
  };

  bool unbounded = std::isinf(t_up);
  double probe = unbounded ? horizon * 0.999 : t_up - 1e-6;
  if (probe <= 0) return t_up;
  if (excess(probe) <= kCutExcessThreshold) return unbounded ? kInf : t_up;

  double tc = bisect_boundary([&](double t) { return excess(t) > kCutExcessThreshold; },
                              1e-6, probe, 1e-7);
  return tc;
}

// ---------------------------------------------------------------------------
// Cut locus tree, injectivity radius, reference map

CutLocusTree cut_locus_tree(const ModelSurface& m, double r1, int n_angles, Exec exec) {
  if (!(r1 > 0 && r1 < m.domain_end()))
    throw std::domain_error("cut_locus_tree: r1 outside (0, ell)");
  CutLocusTree tree;
  tree.base_r = r1;
  tree.angle_grid.resize(n_angles);
  tree.cut_times.assign(n_angles, kInf);
  tree.cut_points.assign(n_angles, {kInf, 0.0});
  tree.trunk_mask.assign(n_angles, 0);
  tree.failed.assign(n_angles, 0);
  for (int i = 0; i < n_angles; ++i)
    tree.angle_grid[i] = n_angles == 1 ? 0.0 : kPi * i / (n_angles - 1.0);

  auto atlas = m.analytic_plane() ? nullptr : m.atlas(r1);

  for_each_index(exec, n_angles, [&](std::int64_t i) {
    double phi = tree.angle_grid[i];
    try {
      double tc = cut_time(m, r1, phi, atlas);
      tree.cut_times[i] = tc;
      if (std::isfinite(tc)) {
        PathSample s;
        if (phi < 1e-12 || kPi - phi < 1e-12) {
          s = meridian_trace(m, r1, phi < 1e-12, tc).samples.back();
        } else {
          s = geodesic_trace(m, r1, phi, tc).samples.back();
        }
        tree.cut_points[i] = {s.u, wrap_2pi(s.v)};
        tree.trunk_mask[i] = std::abs(wrap_pi(s.v - kPi)) < 1e-4 ? 1 : 0;
      }
    } catch (const std::exception&) {
      tree.failed[i] = 1;
    }
  });

  // positive branches: consecutive runs of finite non-trunk cut points,
  // each ordered by distance from the base point (toward the trunk)
  int i = 0;
  while (i < n_angles) {
    if (tree.failed[i] || tree.trunk_mask[i] || !std::isfinite(tree.cut_times[i])) {
      ++i;
      continue;
    }
    std::vector<int> arc;
    while (i < n_angles && !tree.failed[i] && !tree.trunk_mask[i] &&
           std::isfinite(tree.cut_times[i])) {
      arc.push_back(i);
      ++i;
    }
    std::sort(arc.begin(), arc.end(),
              [&](int a, int b) { return tree.cut_times[a] < tree.cut_times[b]; });
    tree.branch_arcs.push_back(std::move(arc));
  }
  return tree;
}

double injectivity_radius(const ModelSurface& m, double r1, int n_angles, Exec exec) {
  if (m.analytic_plane()) return kInf;
  auto atlas = m.atlas(r1);
  std::vector<double> times(n_angles, kInf);
  for_each_index(exec, n_angles, [&](std::int64_t i) {
    double phi = kPi * i / (n_angles - 1.0);
    times[i] = cut_time(m, r1, phi, atlas);
  });
  int arg = 0;
  for (int i = 1; i < n_angles; ++i)
    if (times[i] < times[arg]) arg = i;
  double best = times[arg];
  if (std::isinf(best)) return kInf;

  if (arg > 0 && arg + 1 < n_angles && std::isfinite(times[arg - 1]) &&
      std::isfinite(times[arg + 1])) {
    // parabolic refinement through the three bracketing samples
    double h = kPi / (n_angles - 1.0);
    double denom = times[arg - 1] - 2 * times[arg] + times[arg + 1];
    if (std::abs(denom) > 1e-14) {
      double shift = 0.5 * h * (times[arg - 1] - times[arg + 1]) / denom;
      if (std::abs(shift) < h) {
        double phi = kPi * arg / (n_angles - 1.0) + shift;
        phi = std::min(kPi, std::max(0.0, phi));
        best = std::min(best, cut_time(m, r1, phi, atlas));
      }
    }
  }
  return best;
}

ReferencePoint reference_map_model(const ModelSurface& m, double r1,
                                   std::pair<double, double> point) {
  auto [r, theta] = point;
  return ReferencePoint{d_theta(m, r1, r, angle_separation(theta)), r};
}

}  // namespace sra
