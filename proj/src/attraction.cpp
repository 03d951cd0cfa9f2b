#include "sra/attraction.hpp"

#include <cmath>
#include <random>

#include "sra/ode.hpp"

namespace sra {

namespace {

constexpr double kGridTol = 1e-9;

double curvature_at_origin_man(const PolarSurface& man) {
  double r0 = 1e-3;
  return -man.f_rr(r0, 0.0) / man.f(r0, 0.0);
}

double curvature_at_origin_model(const Profile& p) {
  double r0 = 1e-3;
  return -p.y2(r0) / p.y(r0);
}

double grid_upper_radius(const PolarSurface& man, const ModelSurface& model) {
  return std::min(man.r_dom, model.domain_end()) * (1.0 - 1e-9);
}

}  // namespace

double s_margin(const PolarSurface& man, const ModelSurface& model, double r,
                double theta) {
  double hi = std::min(man.r_dom, model.domain_end());
  if (!(r > 0) || !(r < hi)) throw std::domain_error("s_margin: r outside the chart");
  const Profile& p = model.profile();
  if (r < 1e-5) {
    // f_r/f = 1/r - (kappa(0)/3) r + O(r^3) on both sides; the 1/r parts cancel
    double km = curvature_at_origin_man(man);
    double kt = curvature_at_origin_model(p);
    return (kt - km) * r / 3.0;
  }
  return man.f_r(r, theta) / man.f(r, theta) - p.y1(r) / p.y(r);
}

SraReport sra_pointwise_check(const PolarSurface& man, const ModelSurface& model,
                              int nr, int ntheta, Exec exec) {
  if (nr < 64 || ntheta < 64)
    throw std::invalid_argument("sra_pointwise_check: grid must be at least 64x64");
  double r_hi = grid_upper_radius(man, model);

  std::vector<double> margins((size_t)nr * ntheta);
  for_each_index(exec, nr, [&](std::int64_t i) {
    double r = r_hi * (i + 0.5) / nr;
    for (int j = 0; j < ntheta; ++j) {
      double th = 2 * kPi * j / ntheta;
      margins[(size_t)i * ntheta + j] = s_margin(man, model, r, th);
    }
  });

  SraReport rep;
  rep.method = SraMethod::pointwise_S;
  rep.tol = kGridTol;
  rep.necessary_only = !man.analytic;
  size_t arg = 0;
  for (size_t k = 1; k < margins.size(); ++k)
    if (margins[k] < margins[arg]) arg = k;
  rep.margin_min = margins[arg];
  rep.witness = {r_hi * (arg / ntheta + 0.5) / nr, 2 * kPi * (arg % ntheta) / ntheta};
  rep.holds = rep.margin_min >= -kGridTol;
  return rep;
}

// ---------------------------------------------------------------------------
// Geodesic sampling check

namespace {

// Conservative injectivity radius of the model over the base radii a sweep
// can draw: min over a coarse radial grid.
double conservative_model_inj(const ModelSurface& model, double r_lo, double r_hi) {
  if (model.analytic_plane()) return kInf;
  double best = kInf;
  for (int i = 0; i < 7; ++i) {
    double r = r_lo + (r_hi - r_lo) * i / 6.0;
    best = std::min(best, injectivity_radius(model, r, 33, Exec::serial));
  }
  return best;
}

struct GeodesicDraw {
  Point2 start;
  GeodesicPath path;         // geodesic in man
  double base0 = 0;          // L_o at the start
  double d_right = 0;        // right derivative of L_o along the path at 0
  double smooth_horizon = 0;  // usable parameter range
  bool ok = false;
};

GeodesicDraw draw_geodesic(const Manifold& man, const ModelSurface& model,
                           std::mt19937_64& rng, double t_request) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  GeodesicDraw out;

  if (std::holds_alternative<FlatCylinder>(man)) {
    double phi = 2 * kPi * uni(rng) - kPi;
    double z = 3.0 * uni(rng) - 1.5;
    out.start = {phi, z};
    out.base0 = base_distance(man, out.start);
    if (out.base0 < 1e-3 || out.base0 >= model.domain_end()) return out;
    double alpha = 2 * kPi * uni(rng);
    out.path =
        manifold_geodesic(man, out.start, {std::cos(alpha), std::sin(alpha)}, t_request);
    // two-sided horizon: the path stays smooth for L_o until it meets the
    // cut locus of o (the opposite rule line)
    double b = t_request;
    for (const auto& s : out.path.samples) {
      if (std::abs(wrap_pi(s.u)) > kPi - 1e-6) {
        b = s.t;
        break;
      }
    }
    out.smooth_horizon = b;
  } else {
    const auto& ps = std::get<PolarSurface>(man);
    double hi = std::min(ps.r_dom, model.domain_end());
    double r0 = hi * (0.05 + 0.85 * uni(rng));
    double th0 = 2 * kPi * uni(rng);
    out.start = {r0, th0};
    out.base0 = r0;
    double alpha = 2 * kPi * uni(rng);
    double f0 = ps.f(r0, th0);
    try {
      out.path = manifold_geodesic(man, out.start,
                                   {std::cos(alpha), std::sin(alpha) / f0}, t_request);
    } catch (const ChartExceeded&) {
      return out;
    }
    double b = out.path.length();
    for (const auto& s : out.path.samples) {
      if (s.u >= ps.r_dom * (1 - 1e-9) || s.u <= 1e-6) {
        b = s.t;
        break;
      }
    }
    out.smooth_horizon = b;
  }

  auto dini = dini_derivatives(man, out.path, 0.0);
  out.d_right = dini.right;
  out.ok = out.smooth_horizon > 1e-6;
  return out;
}

}  // namespace

SraReport sra_geodesic_check(const Manifold& man, const ModelSurface& model,
                             int n_samples, double epsilon_frac, std::uint64_t seed,
                             Exec exec) {
  if (n_samples < 10)
    throw std::invalid_argument("sra_geodesic_check: n_samples must be >= 10");

  double hi = model.domain_end();
  if (const auto* ps = std::get_if<PolarSurface>(&man)) hi = std::min(hi, ps->r_dom);
  double inj_floor = conservative_model_inj(model, 0.05 * hi, 0.95 * hi);

  struct Result {
    double margin = kInf;
    Point2 witness;
    bool skipped = true;
  };
  std::vector<Result> results(n_samples);

  for_each_index(exec, n_samples, [&](std::int64_t i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    double t_request = 0.5 * std::min(hi, model.scan_horizon());
    auto draw = draw_geodesic(man, model, rng, t_request);
    if (!draw.ok) return;
    double r0 = draw.base0;
    if (!(r0 > 0) || !(r0 < model.domain_end())) return;

    double eps = epsilon_frac *
                 std::min({draw.smooth_horizon, model.domain_end() - r0, inj_floor});
    if (!(eps > 1e-8)) return;

    double phi = std::acos(std::min(1.0, std::max(-1.0, draw.d_right)));
    GeodesicPath model_path = geodesic_trace(model, r0, phi, eps * 1.0000001);

    double worst = kInf;
    for (int k = 1; k <= 33; ++k) {
      double t = eps * k / 33.0;
      double man_L = base_distance(man, [&] {
        auto s = draw.path.at(t);
        return Point2{s.u, s.v};
      }());
      double model_L = model_path.at(t).u;
      worst = std::min(worst, man_L - model_L);
    }
    results[i] = {worst, draw.start, false};
  });

  SraReport rep;
  rep.method = SraMethod::geodesic_sampling;
  rep.tol = 1e-6;
  rep.margin_min = kInf;
  for (const auto& r : results) {
    if (r.skipped) {
      ++rep.skipped;
      continue;
    }
    if (r.margin < rep.margin_min) {
      rep.margin_min = r.margin;
      rep.witness = r.witness;
    }
  }
  if (rep.skipped == n_samples)
    throw NumericalFailure("sra_geodesic_check: every sample was skipped");
  rep.holds = rep.margin_min >= -rep.tol;
  return rep;
}

// ---------------------------------------------------------------------------
// Radial curvature bound

RadialBoundReport radial_curvature_bound_check(const PolarSurface& man,
                                               const ModelSurface& model, int nr,
                                               int ntheta, Exec exec) {
  if (nr < 64 || ntheta < 64)
    throw std::invalid_argument("radial_curvature_bound_check: grid at least 64x64");
  double r_hi = grid_upper_radius(man, model);
  const Profile& p = model.profile();

  std::vector<double> margins((size_t)nr * ntheta);
  for_each_index(exec, nr, [&](std::int64_t i) {
    double r = std::max(1e-4, r_hi * (i + 0.5) / nr);
    double k_model = -p.y2(r) / p.y(r);
    for (int j = 0; j < ntheta; ++j) {
      double th = 2 * kPi * j / ntheta;
      double k_man = -man.f_rr(r, th) / man.f(r, th);
      margins[(size_t)i * ntheta + j] = k_model - k_man;
    }
  });

  RadialBoundReport out;
  out.bound.method = SraMethod::pointwise_S;
  out.bound.tol = kGridTol;
  size_t arg = 0;
  for (size_t k = 1; k < margins.size(); ++k)
    if (margins[k] < margins[arg]) arg = k;
  out.bound.margin_min = margins[arg];
  out.bound.witness = {r_hi * (arg / ntheta + 0.5) / nr,
                       2 * kPi * (arg % ntheta) / ntheta};
  out.bound.holds = out.bound.margin_min >= -kGridTol;

  out.pointwise = sra_pointwise_check(man, model, nr, ntheta, exec);
  out.implication_ok = !out.bound.holds || out.pointwise.holds;
  return out;
}

// ---------------------------------------------------------------------------
// Conjugate distance check

ConjugateDistanceReport conjugate_distance_check(const PolarSurface& man,
                                                 const ModelSurface& model, int n_rays,
                                                 int n_samples) {
  ConjugateDistanceReport rep;
  rep.horizon = std::min(man.r_dom, model.domain_end()) * (1 - 1e-9);
  const Profile& p = model.profile();

  for (int ray = 0; ray < n_rays; ++ray) {
    double th = 2 * kPi * ray / n_rays;
    auto kappa = [&](double t) {
      double r = std::max(t, 1e-4);
      return -man.f_rr(r, th) / man.f(r, th);
    };
    auto rhs = [&](double t, const std::array<double, 2>& s, std::array<double, 2>& d) {
      d[0] = s[1];
      d[1] = -kappa(t) * s[0];
    };
    OdeOptions opt;
    opt.tol = 1e-11;
    opt.max_step = rep.horizon / n_samples;

    std::vector<std::pair<double, double>> js;  // (t, J)
    double t0 = 1e-6;
    double first_zero = kInf;
    double prev_t = t0, prev_j = t0;
    integrate_dp54<2>(rhs, {t0, 1.0}, t0, rep.horizon, opt,
                      [&](double t, const std::array<double, 2>& s) {
                        js.push_back({t, s[0]});
                        if (prev_j > 0 && s[0] <= 0 && std::isinf(first_zero)) {
                          double frac = prev_j / (prev_j - s[0]);
                          first_zero = prev_t + frac * (t - prev_t);
                        }
                        prev_t = t;
                        prev_j = s[0];
                        return true;
                      });
    rep.min_first_conjugate = std::min(rep.min_first_conjugate, first_zero);

    // y(t) <= |J(t)| at n_samples interior points, by linear interpolation of
    // the dense integration record
    size_t idx = 1;
    for (int k = 1; k < n_samples; ++k) {
      double t = rep.horizon * k / n_samples;
      while (idx + 1 < js.size() && js[idx].first < t) ++idx;
      double t1 = js[idx - 1].first, t2 = js[idx].first;
      double j = js[idx - 1].second +
                 (js[idx].second - js[idx - 1].second) * (t - t1) / (t2 - t1);
      rep.min_jacobi_margin = std::min(rep.min_jacobi_margin, std::abs(j) - p.y(t));
    }
  }

  rep.pass = rep.min_first_conjugate >= rep.horizon - 1e-9 &&
             rep.min_jacobi_margin >= -1e-6;
  return rep;
}

}  // namespace sra
