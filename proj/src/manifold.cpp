#include "sra/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "sra/ode.hpp"

namespace sra {

namespace {

constexpr double kPoleEps = 1e-12;

GeodesicPath line_path(Point2 a, Point2 b, int min_samples = 64) {
  GeodesicPath path;
  double len = std::hypot(b.a - a.a, b.b - a.b);
  path.err_bound = 1e-15 * (1.0 + len);
  if (len < 1e-15) len = 1e-15;
  double du = (b.a - a.a) / len, dv = (b.b - a.b) / len;
  int n = std::max(min_samples, (int)std::ceil(len / 0.05) + 1);
  for (int i = 0; i < n; ++i) {
    double t = len * i / (n - 1.0);
    path.samples.push_back({t, a.a + t * du, a.b + t * dv, du, dv, 0, 0});
  }
  return path;
}

// Radial segment in a polar chart along the meridian theta, from r0 to r1.
GeodesicPath radial_path(double r0, double r1, double theta) {
  GeodesicPath path;
  double len = std::abs(r1 - r0);
  path.err_bound = 1e-15 * (1.0 + len);
  double slope = r1 >= r0 ? 1.0 : -1.0;
  int n = std::max(2, (int)std::ceil(len / 0.05) + 1);
  for (int i = 0; i < n; ++i) {
    double t = len * i / (n - 1.0);
    path.samples.push_back({t, r0 + slope * t, theta, slope, 0, 0, 0});
  }
  return path;
}

void check_polar_point(const PolarSurface& ps, Point2 p, const char* who) {
  if (!(p.a >= 0) || !(p.a < ps.r_dom))
    throw std::domain_error(std::string(who) + ": point outside the polar chart");
}

// Remaps a solver path starting at (r, 0) into chart coordinates: theta runs
// from theta0 with the given orientation.
GeodesicPath remap_model_path(GeodesicPath path, double theta0, double sign) {
  for (auto& s : path.samples) {
    s.v = theta0 + sign * s.v;
    s.dv *= sign;
    s.d2v *= sign;
  }
  return path;
}

void chart_guard(const PolarSurface& ps, const GeodesicPath& path) {
  if (ps.full_model) return;
  for (const auto& s : path.samples)
    if (s.u >= ps.r_dom)
      throw ChartExceeded("geodesic leaves the polar chart (r >= r_dom)");
}

// ---------------------------------------------------------------------------
// Generic polar-surface geodesics (non-symmetric f)

struct PolarOde {
  const PolarSurface* ps;

  void rhs(const std::array<double, 4>& s, std::array<double, 4>& d) const {
    double f = ps->f(s[0], s[1]);
    double fr = ps->f_r(s[0], s[1]);
    double ft = ps->f_theta ? ps->f_theta(s[0], s[1]) : 0.0;
    d[0] = s[2];
    d[1] = s[3];
    d[2] = f * fr * s[3] * s[3];
    d[3] = -2.0 * (fr / f) * s[2] * s[3] - (ft / f) * s[3] * s[3];
  }

  PathSample sample(double t, const std::array<double, 4>& s) const {
    std::array<double, 4> d;
    rhs(s, d);
    return PathSample{t, s[0], s[1], s[2], s[3], d[2], d[3]};
  }
};

GeodesicPath generic_polar_trace(const PolarSurface& ps, Point2 a, double psi,
                                 double t_max, double max_step = 0.05) {
  PolarOde sys{&ps};
  double f0 = ps.f(a.a, a.b);
  std::array<double, 4> y0{a.a, a.b, std::cos(psi), std::sin(psi) / f0};
  GeodesicPath path;
  path.err_bound = 1e-8;
  OdeOptions opt;
  opt.tol = 1e-10;
  opt.max_step = max_step;
  auto rhs = [&sys](double, const std::array<double, 4>& s, std::array<double, 4>& d) {
    sys.rhs(s, d);
  };
  integrate_dp54<4>(rhs, y0, 0.0, t_max, opt,
                    [&](double t, const std::array<double, 4>& s) {
                      path.samples.push_back(sys.sample(t, s));
                      return s[0] > 1e-7 && s[0] < ps.r_dom;
                    });
  return path;
}

// Shooting solver for non-symmetric polar surfaces: sweep the initial angle,
// then Newton on (psi, t) against the target chart point.
ManifoldDistanceResult generic_polar_distance(const PolarSurface& ps, Point2 a,
                                              Point2 b, bool want_paths) {
  double theta_b = a.b + wrap_pi(b.b - a.b);
  double cap = std::min(1.05 * (a.a + b.a) + 0.1, 2.5 * ps.r_dom);

  struct Candidate {
    double psi, t;
  };
  std::vector<Candidate> seeds;
  int n_sweep = 240;
  for (int i = 0; i < n_sweep; ++i) {
    double psi = -kPi + 2 * kPi * (i + 0.5) / n_sweep;
    auto path = generic_polar_trace(ps, a, psi, cap, 0.05);
    double best = kInf, best_t = 0;
    for (const auto& s : path.samples) {
      double miss = std::hypot(s.u - b.a, 0.5 * (s.u + b.a) * (s.v - theta_b));
      if (miss < best) {
        best = miss;
        best_t = s.t;
      }
    }
    if (best < 0.15) seeds.push_back({psi, best_t});
  }

  std::vector<Candidate> roots;
  for (auto seed : seeds) {
    double psi = seed.psi, t = seed.t;
    bool ok = false;
    for (int it = 0; it < 12; ++it) {
      auto P = [&](double ps_, double t_) {
        auto path = generic_polar_trace(ps, a, ps_, std::max(t_, 1e-6) * 1.0001, 0.05);
        auto s = path.at(std::min(t_, path.length()));
        return std::pair<double, double>(s.u - b.a, s.v - theta_b);
      };
      auto [F1, F2] = P(psi, t);
      if (std::hypot(F1, F2) < 1e-10) {
        ok = true;
        break;
      }
      double h = 1e-7;
      auto [G1, G2] = P(psi + h, t);
      auto [H1, H2] = P(psi, t + h);
      double a11 = (G1 - F1) / h, a12 = (H1 - F1) / h;
      double a21 = (G2 - F2) / h, a22 = (H2 - F2) / h;
      double det = a11 * a22 - a12 * a21;
      if (std::abs(det) < 1e-14) break;
      double dpsi = (-F1 * a22 + F2 * a12) / det;
      double dt = (-F2 * a11 + F1 * a21) / det;
      double damp = std::min(1.0, 0.3 / std::max(std::abs(dpsi), std::abs(dt)));
      psi += damp * dpsi;
      t += damp * dt;
      if (t < 1e-9 || t > cap) break;
    }
    if (ok) {
      bool dup = false;
      for (const auto& r : roots)
        if (std::abs(r.t - t) < 1e-8 && std::abs(wrap_pi(r.psi - psi)) < 1e-5) dup = true;
      if (!dup) roots.push_back({psi, t});
    }
  }
  if (roots.empty())
    throw NumericalFailure("manifold_distance: shooting failed to reach the target");

  double best = kInf;
  for (const auto& r : roots) best = std::min(best, r.t);
  ManifoldDistanceResult out;
  out.distance = best;
  for (const auto& r : roots) {
    if (r.t > best + 1e-7) continue;
    if (want_paths) {
      auto path = generic_polar_trace(ps, a, r.psi, r.t, 0.05);
      chart_guard(ps, path);
      out.geodesics.push_back(std::move(path));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cylinder helpers

std::vector<double> cylinder_wraps(double dphi_raw) {
  double w = wrap_pi(dphi_raw);
  std::vector<double> cands{w};
  cands.push_back(w > 0 ? w - 2 * kPi : w + 2 * kPi);
  return cands;
}

}  // namespace

// ---------------------------------------------------------------------------
// Factories

PolarSurface polar_from_profile(const Profile& p, double integ_tol) {
  PolarSurface ps;
  ps.f = [p](double r, double) { return p.y(r); };
  ps.f_r = [p](double r, double) { return p.y1(r); };
  ps.f_rr = [p](double r, double) { return p.y2(r); };
  ps.f_theta = nullptr;
  ps.r_dom = p.domain_end();
  ps.rotationally_symmetric = true;
  ps.full_model = true;
  ps.analytic = p.name != "table";
  ps.radial = p;
  ps.solver = std::make_shared<ModelSurface>(p, integ_tol);
  return ps;
}

PolarSurface polar_chart(const Profile& p, double r_dom, double integ_tol) {
  PolarSurface ps = polar_from_profile(p, integ_tol);
  if (!(r_dom > 0 && r_dom <= p.domain_end()))
    throw std::invalid_argument("polar_chart: r_dom outside (0, ell]");
  ps.r_dom = r_dom;
  ps.full_model = false;
  return ps;
}

PolarSurface polar_bumpy(double eps, double r_dom) {
  PolarSurface ps;
  ps.f = [eps](double r, double th) { return r * (1 + eps * r * r * std::cos(2 * th)); };
  ps.f_r = [eps](double r, double th) { return 1 + 3 * eps * r * r * std::cos(2 * th); };
  ps.f_rr = [eps](double r, double th) { return 6 * eps * r * std::cos(2 * th); };
  ps.f_theta = [eps](double r, double th) { return -2 * eps * r * r * r * std::sin(2 * th); };
  ps.r_dom = r_dom;
  ps.rotationally_symmetric = false;
  ps.full_model = false;
  if (!(eps >= 0 && eps * r_dom * r_dom < 0.5))
    throw std::invalid_argument("polar_bumpy: eps too large for the chart");
  return ps;
}

// ---------------------------------------------------------------------------
// Distance

ManifoldDistanceResult manifold_distance(const Manifold& man, Point2 a, Point2 b,
                                         bool want_paths) {
  ManifoldDistanceResult out;
  if (const auto* cyl = std::get_if<FlatCylinder>(&man)) {
    (void)cyl;
    double dz = b.b - a.b;
    auto wraps = cylinder_wraps(b.a - a.a);
    double best = kInf;
    for (double w : wraps) best = std::min(best, std::hypot(w, dz));
    out.distance = best;
    for (double w : wraps) {
      if (std::hypot(w, dz) > best + 1e-7) continue;
      if (want_paths)
        out.geodesics.push_back(line_path({a.a, a.b}, {a.a + w, b.b}));
    }
    return out;
  }

  const auto& ps = std::get<PolarSurface>(man);
  check_polar_point(ps, a, "manifold_distance");
  check_polar_point(ps, b, "manifold_distance");

  if (!ps.rotationally_symmetric) return generic_polar_distance(ps, a, b, want_paths);

  // source or target at the pole: radial segment
  if (a.a < kPoleEps || b.a < kPoleEps) {
    out.distance = std::max(a.a, b.a);
    if (want_paths) {
      if (a.a < kPoleEps)
        out.geodesics.push_back(radial_path(0, b.a, b.b));
      else
        out.geodesics.push_back(radial_path(a.a, 0, a.b));
    }
    return out;
  }

  double dth = wrap_pi(b.b - a.b);
  double sign = dth >= 0 ? 1.0 : -1.0;
  auto res = d_theta_full(*ps.solver, a.a, b.a, std::abs(dth), want_paths);
  out.distance = res.distance;
  if (want_paths) {
    for (auto& p : res.paths) {
      auto remapped = remap_model_path(std::move(p), a.b, sign);
      chart_guard(ps, remapped);
      out.geodesics.push_back(std::move(remapped));
    }
  }
  return out;
}

double base_distance(const Manifold& man, Point2 p) {
  if (std::holds_alternative<FlatCylinder>(man))
    return std::hypot(wrap_pi(p.a), p.b);
  const auto& ps = std::get<PolarSurface>(man);
  check_polar_point(ps, p, "base_distance");
  return p.a;
}

// ---------------------------------------------------------------------------
// Dini derivatives

DiniPair dini_derivatives(const Manifold& man, const GeodesicPath& path, double t) {
  auto s = path.at(t);
  auto clamp = [](double x) { return std::min(1.0, std::max(-1.0, x)); };

  if (std::holds_alternative<FlatCylinder>(man)) {
    // minimizing straight lines from o to the (wrapped) point
    double phi = s.u, z = s.v;
    auto wraps = cylinder_wraps(phi);
    double best = kInf;
    for (double w : wraps) best = std::min(best, std::hypot(w, z));
    if (best < 1e-12) throw std::domain_error("dini_derivatives: point equals o");
    double lo = kInf, hi = -kInf;
    for (double w : wraps) {
      double len = std::hypot(w, z);
      if (len > best + 1e-9) continue;
      double ip = (s.du * w + s.dv * z) / len;
      lo = std::min(lo, ip);
      hi = std::max(hi, ip);
    }
    return DiniPair{clamp(hi), clamp(lo)};
  }

  const auto& ps = std::get<PolarSurface>(man);
  check_polar_point(ps, {s.u, s.v}, "dini_derivatives");
  if (s.u < kPoleEps) throw std::domain_error("dini_derivatives: point equals o");
  // within the chart the unique minimizing geodesic from o is radial
  double ip = clamp(s.du);
  return DiniPair{ip, ip};
}

// ---------------------------------------------------------------------------
// Geodesics

GeodesicPath manifold_geodesic(const Manifold& man, Point2 a, Tangent2 dir,
                               double t_max) {
  if (std::holds_alternative<FlatCylinder>(man)) {
    double n = std::hypot(dir.da, dir.db);
    if (n < 1e-15) throw std::invalid_argument("manifold_geodesic: zero direction");
    return line_path(a, {a.a + t_max * dir.da / n, a.b + t_max * dir.db / n});
  }

  const auto& ps = std::get<PolarSurface>(man);
  check_polar_point(ps, a, "manifold_geodesic");
  if (a.a < kPoleEps)
    throw std::invalid_argument("manifold_geodesic: start the path off the pole");

  if (!ps.rotationally_symmetric) {
    double f0 = ps.f(a.a, a.b);
    double n = std::hypot(dir.da, f0 * dir.db);
    double psi = std::atan2(f0 * dir.db / n, dir.da / n);
    auto path = generic_polar_trace(ps, a, psi, t_max);
    chart_guard(ps, path);
    return path;
  }

  double f0 = ps.radial->y(a.a);
  double n = std::hypot(dir.da, f0 * dir.db);
  if (n < 1e-15) throw std::invalid_argument("manifold_geodesic: zero direction");
  double ur = dir.da / n, ut = f0 * dir.db / n;
  double phi = std::atan2(std::abs(ut), ur);
  double sign = ut >= 0 ? 1.0 : -1.0;
  auto path = remap_model_path(geodesic_trace(*ps.solver, a.a, phi, t_max), a.b, sign);
  chart_guard(ps, path);
  return path;
}

// ---------------------------------------------------------------------------
// Mesh distance oracle

namespace {

std::vector<std::pair<int, int>> stencil_moves(int k) {
  std::vector<std::pair<int, int>> moves;
  for (int p = -k; p <= k; ++p)
    for (int q = -k; q <= k; ++q) {
      if (p == 0 && q == 0) continue;
      if (std::gcd(std::abs(p), std::abs(q)) != 1) continue;
      moves.push_back({p, q});
    }
  return moves;
}

// Dijkstra over an implicit graph: edges(u, relax) enumerates neighbors on
// the fly so large stencils never materialize an adjacency list.
template <class EdgeFn>
void dijkstra(int n, int source, EdgeFn&& edges, std::vector<double>& dist,
              std::vector<int>& pred, int stop_node = -1) {
  dist.assign(n, kInf);
  pred.assign(n, -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  dist[source] = 0;
  pq.push({0.0, source});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    if (u == stop_node) return;
    edges(u, [&](int v, double w) {
      double nd = d + w;
      if (nd < dist[v]) {
        dist[v] = nd;
        pred[v] = u;
        pq.push({nd, v});
      }
    });
  }
}

struct PolarGridGeometry {
  int rings = 0;       // inner ring count (r = hr .. rings*hr)
  int ntheta = 0;
  double hr = 0, hth = 0;
  bool far_pole = false;

  int node(int i, int j) const { return 1 + (i - 1) * ntheta + ((j % ntheta) + ntheta) % ntheta; }
  int pole() const { return 0; }
  int far() const { return 1 + rings * ntheta; }
  int count() const { return 1 + rings * ntheta + (far_pole ? 1 : 0); }
};

}  // namespace

Point2 MeshField::node_point(int node) const {
  if (has_pole) {
    if (node == 0) return {0.0, 0.0};
    if (has_far_pole && node == 1 + nu * nv) return {(nu + 1) * du, 0.0};
    int i = (node - 1) / nv + 1;
    int j = (node - 1) % nv;
    return {i * du, j * dv};
  }
  int k = node / nu, j = node % nu;
  return {j * du, v0 + k * dv};
}

int MeshField::nearest_node(Point2 p) const {
  if (has_pole) {
    PolarGridGeometry g{nu, nv, du, dv, has_far_pole};
    int i = (int)std::lround(p.a / du);
    if (i <= 0) return g.pole();
    if (has_far_pole && i > nu) return g.far();
    i = std::min(i, nu);
    int j = (int)std::lround(wrap_2pi(p.b) / dv);
    return g.node(i, j);
  }
  int j = ((int)std::lround(wrap_2pi(p.a) / du)) % nu;
  int k = (int)std::lround((p.b - v0) / dv);
  k = std::max(0, std::min(nv - 1, k));
  return k * nu + j;
}

namespace {

MeshField build_polar_mesh(const PolarSurface& ps, Point2 source, int resolution,
                           int stencil, int stop_node_hint, Point2 target) {
  bool closed_full = ps.full_model && ps.radial && ps.radial->closed();
  double r_end = closed_full ? ps.radial->ell : ps.r_dom;
  int nr = resolution;
  PolarGridGeometry g;
  g.ntheta = resolution;
  g.hr = r_end / nr;
  g.hth = 2 * kPi / g.ntheta;
  g.rings = closed_full ? nr - 1 : nr;
  g.far_pole = closed_full;

  // radial table at half-steps (symmetric surfaces); asymmetric f evaluated
  // directly
  std::vector<double> ftab;
  if (ps.rotationally_symmetric) {
    ftab.resize(2 * g.rings + 3);
    for (size_t k = 0; k < ftab.size(); ++k) ftab[k] = ps.f(0.5 * k * g.hr, 0.0);
  }
  auto fval = [&](double r, double th) {
    if (!ps.rotationally_symmetric) return ps.f(r, th);
    double x = 2 * r / g.hr;
    size_t k = std::min(ftab.size() - 2, (size_t)std::max(0.0, std::floor(x)));
    double frac = x - k;
    return ftab[k] * (1 - frac) + ftab[k + 1] * frac;
  };

  auto moves = stencil_moves(stencil);
  auto edges = [&](int u, auto&& relax) {
    if (u == g.pole()) {
      for (int j = 0; j < g.ntheta; ++j) relax(g.node(1, j), g.hr);
      return;
    }
    if (g.far_pole && u == g.far()) {
      for (int j = 0; j < g.ntheta; ++j) relax(g.node(g.rings, j), g.hr);
      return;
    }
    int i = (u - 1) / g.ntheta + 1;
    int j = (u - 1) % g.ntheta;
    if (i == 1) relax(g.pole(), g.hr);
    if (g.far_pole && i == g.rings) relax(g.far(), g.hr);
    for (auto [p, q] : moves) {
      int i2 = i + p;
      if (i2 < 1 || i2 > g.rings) continue;
      double dr = p * g.hr, dth = q * g.hth;
      auto seg = [&](double s) {
        double r = (i + s * p) * g.hr, th = (j + s * q) * g.hth;
        return std::hypot(dr, fval(r, th) * dth);
      };
      double w = (seg(0.0) + 4 * seg(0.5) + seg(1.0)) / 6.0;
      relax(g.node(i2, j + q), w);
    }
  };

  MeshField field;
  field.nu = g.rings;
  field.nv = g.ntheta;
  field.has_pole = true;
  field.has_far_pole = g.far_pole;
  field.du = g.hr;
  field.dv = g.hth;
  double fmax = 0;
  if (ps.rotationally_symmetric)
    fmax = *std::max_element(ftab.begin(), ftab.end());
  else
    for (int i = 1; i <= g.rings; ++i) fmax = std::max(fmax, ps.f(i * g.hr, 0.0));
  field.cell = std::hypot(g.hr, fmax * g.hth);

  int src = field.nearest_node(source);
  int stop = stop_node_hint ? field.nearest_node(target) : -1;
  dijkstra(g.count(), src, edges, field.dist, field.pred, stop);
  return field;
}

MeshField build_cylinder_mesh(Point2 source, int resolution, int stencil,
                              double z_extent, int stop_node_hint, Point2 target) {
  int nphi = resolution;
  int nz = resolution + 1;
  double hphi = 2 * kPi / nphi;
  double hz = 2 * z_extent / (nz - 1);

  MeshField field;
  field.nu = nphi;
  field.nv = nz;
  field.has_pole = false;
  field.du = hphi;
  field.dv = hz;
  field.v0 = -z_extent;
  field.cell = std::hypot(hphi, hz);

  auto node = [&](int j, int k) { return k * nphi + ((j % nphi) + nphi) % nphi; };
  auto moves = stencil_moves(stencil);
  auto edges = [&](int u, auto&& relax) {
    int k = u / nphi, j = u % nphi;
    for (auto [p, q] : moves) {
      int k2 = k + q;
      if (k2 < 0 || k2 >= nz) continue;
      relax(node(j + p, k2), std::hypot(p * hphi, q * hz));
    }
  };

  int src = field.nearest_node(source);
  int stop = stop_node_hint ? field.nearest_node(target) : -1;
  dijkstra(nphi * nz, src, edges, field.dist, field.pred, stop);
  return field;
}

}  // namespace

MeshField mesh_distance_oracle(const Manifold& man, Point2 source, int resolution,
                               int stencil, double z_extent) {
  if (resolution < 64)
    throw std::invalid_argument("mesh_distance_oracle: resolution < 64");
  if (const auto* ps = std::get_if<PolarSurface>(&man))
    return build_polar_mesh(*ps, source, resolution, stencil, 0, {});
  return build_cylinder_mesh(source, resolution, stencil, z_extent, 0, {});
}

double mesh_distance_between(const Manifold& man, Point2 a, Point2 b, int resolution,
                             int stencil, double z_extent, Point2* snapped_a,
                             Point2* snapped_b) {
  MeshField field;
  if (const auto* ps = std::get_if<PolarSurface>(&man))
    field = build_polar_mesh(*ps, a, resolution, stencil, 1, b);
  else
    field = build_cylinder_mesh(a, resolution, stencil, z_extent, 1, b);
  if (snapped_a) *snapped_a = field.node_point(field.nearest_node(a));
  if (snapped_b) *snapped_b = field.node_point(field.nearest_node(b));
  return field.at(b);
}

}  // namespace sra
