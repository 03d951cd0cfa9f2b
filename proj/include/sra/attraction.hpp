// Stronger-radial-attraction checks between a model and a pointed manifold.
#pragma once

#include <cstdint>

#include "sra/manifold.hpp"

namespace sra {

enum class SraMethod { pointwise_S, geodesic_sampling };

/// Result of an SRA decision. margin_min is the most negative margin seen:
/// for the pointwise method the sign of -S(X,X) up to a positive factor, for
/// the sampling method the worst of L_o(sigma(t)) - L_o~(sigma~(t)).
struct SraReport {
  bool holds = false;
  double margin_min = 0;
  Point2 witness;            // location of the minimal margin
  SraMethod method = SraMethod::pointwise_S;
  double tol = 0;            // holds <=> margin_min >= -tol
  int skipped = 0;           // chart-exceeded samples (sampling method)
  bool necessary_only = false;  // set for non-analytic manifolds
};

/// Pointwise margin f_r/f - y'/y at (r, theta). S(X,X) <= 0 for every X at
/// the point iff this is >= 0. The r -> 0 limit is handled by series.
double s_margin(const PolarSurface& man, const ModelSurface& model, double r,
                double theta);

/// Evaluates s_margin over an (nr x ntheta) grid on
/// (0, min(r_dom, ell, R_max)) x [0, 2pi). holds iff min >= -1e-9.
SraReport sra_pointwise_check(const PolarSurface& man, const ModelSurface& model,
                              int nr = 64, int ntheta = 64,
                              Exec exec = Exec::parallel);

/// Samples random starts and directions in man, builds the model geodesic
/// with matched base distance and matched one-sided derivative, and verifies
/// L_o(sigma(t)) >= L_o~(sigma~(t)) on [0, eps] with eps = epsilon_frac times
/// min{b, ell - L_o(start), inj(model at start radius)}.
SraReport sra_geodesic_check(const Manifold& man, const ModelSurface& model,
                             int n_samples = 100, double epsilon_frac = 0.9,
                             std::uint64_t seed = 1, Exec exec = Exec::parallel);

/// Radial curvature bound -f_rr/f <= -y''/y on the grid, asserted jointly
/// with the pointwise Hessian consequence.
struct RadialBoundReport {
  SraReport bound;      // curvature margins kappa_model - kappa_man
  SraReport pointwise;  // the implied Hessian check
  bool implication_ok = false;  // bound holds => pointwise holds
};
RadialBoundReport radial_curvature_bound_check(const PolarSurface& man,
                                               const ModelSurface& model, int nr = 64,
                                               int ntheta = 64,
                                               Exec exec = Exec::parallel);

/// Along a fan of radial geodesics from o, solves J'' + K_M(t) J = 0 with
/// J(0) = 0, J'(0) = 1 and asserts (a) no conjugate point before
/// min(ell, horizon) and (b) y(t) <= |J(t)| there.
struct ConjugateDistanceReport {
  bool pass = false;
  double min_first_conjugate = kInf;  // over the fan
  double min_jacobi_margin = kInf;    // min of |J(t)| - y(t)
  double horizon = 0;
};
ConjugateDistanceReport conjugate_distance_check(const PolarSurface& man,
                                                 const ModelSurface& model,
                                                 int n_rays = 16,
                                                 int n_samples = 256);

}  // namespace sra
