// Geodesics, distances, Jacobi fields and cut loci on model surfaces of
// revolution ds^2 = dr^2 + y(r)^2 dtheta^2.
#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sra/parallel.hpp"
#include "sra/profile.hpp"

namespace sra {

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One sample of a unit-speed path in surface coordinates (u, v); on model
/// surfaces u = r and v = theta. First and second parameter derivatives are
/// stored so that segments interpolate with quintic Hermite accuracy.
struct PathSample {
  double t;
  double u, v;
  double du, dv;
  double d2u, d2v;
};

struct GeodesicPath {
  std::vector<PathSample> samples;
  double clairaut = 0.0;    // conserved y(r)^2 * dtheta/dt
  double err_bound = 1e-9;  // bound on unit-speed / Clairaut defects
  bool pole_crossing = false;

  double length() const { return samples.empty() ? 0.0 : samples.back().t; }
  PathSample at(double t) const;
};

struct ReferencePoint {
  double x;  // distance to the marked point p~
  double y;  // distance to the vertex o~
};

/// Discretized cut locus of a point (r1, 0): per-angle cut times and points,
/// trunk membership (opposite meridian), and branch arcs ordered by distance
/// from the base point.
struct CutLocusTree {
  double base_r = 0.0;
  std::vector<double> angle_grid;                    // phi in [0, pi]
  std::vector<double> cut_times;                     // +inf when no cut found
  std::vector<std::pair<double, double>> cut_points; // (r, theta)
  std::vector<char> trunk_mask;
  std::vector<char> failed;
  std::vector<std::vector<int>> branch_arcs;  // angle indices, increasing cut time

  bool trunk_only() const {
    return branch_arcs.empty();
  }
};

class GeodesicAtlas;

/// Immutable model surface (M~, o~). All operations are pure; the internal
/// geodesic atlas cache is shared and thread-safe.
class ModelSurface {
 public:
  explicit ModelSurface(Profile profile, double integ_tol = 1e-10);

  const Profile& profile() const { return profile_; }
  double integ_tol() const { return integ_tol_; }
  double ell() const { return profile_.ell; }
  bool closed() const { return profile_.closed(); }
  /// End of the usable radial domain (ell, or the working radius when open).
  double domain_end() const { return profile_.domain_end(); }
  /// Cap on arclength scans for cut/injectivity searches.
  double scan_horizon() const;
  /// Straight-line fast path for the flat plane profile.
  bool analytic_plane() const { return is_plane_; }

  std::shared_ptr<const GeodesicAtlas> atlas(double r1, int n_angles = 0) const;

 private:
  Profile profile_;
  double integ_tol_;
  bool is_plane_;
  struct AtlasCache;
  std::shared_ptr<AtlasCache> cache_;
};

/// Unit-speed geodesic from (r1, 0) making angle phi in [0, pi] with the
/// outward meridian, integrated in arclength up to t_max. Meridians pass
/// through the vertex by the reflection theta -> theta + pi and are tagged
/// pole_crossing.
GeodesicPath geodesic_trace(const ModelSurface& m, double r1, double phi, double t_max);

/// r-coordinate (= distance to the vertex) at arclength t along the phi
/// geodesic from (r1, 0).
double r_phi(const ModelSurface& m, double r1, double phi, double t);

struct ModelDistance {
  double distance = 0.0;
  int multiplicity = 1;             // minimizing geodesics within 1e-7
  std::vector<GeodesicPath> paths;  // populated when requested
};

/// Minimizing-geodesic distance between (r1, 0) and (r2, theta), theta in
/// [0, pi], by shooting over the initial angle. Throws NumericalFailure when
/// the sweep cannot bracket a connecting geodesic.
ModelDistance d_theta_full(const ModelSurface& m, double r1, double r2, double theta,
                           bool want_paths = false,
                           std::shared_ptr<const GeodesicAtlas> atlas = nullptr);
double d_theta(const ModelSurface& m, double r1, double r2, double theta);

/// First zero of the normal Jacobi field J'' + K(r(t)) J = 0, J(0) = 0,
/// J'(0) = 1, along the phi geodesic; +inf when none before t_max.
double conjugate_time(const ModelSurface& m, double r1, double phi, double t_max = 0);

/// Largest t such that the phi geodesic from (r1, 0) is minimizing up to t:
/// the first parameter where arclength exceeds the distance by 1e-7,
/// bisected, and capped by the conjugate time. +inf when no cut is detected
/// within the scan horizon.
double cut_time(const ModelSurface& m, double r1, double phi,
                std::shared_ptr<const GeodesicAtlas> atlas = nullptr);

CutLocusTree cut_locus_tree(const ModelSurface& m, double r1, int n_angles = 512,
                            Exec exec = Exec::parallel);

/// Distance from (r1, 0) to its cut locus: min over an angle grid of
/// cut_time with one parabolic refinement near the argmin.
double injectivity_radius(const ModelSurface& m, double r1, int n_angles = 129,
                          Exec exec = Exec::parallel);

/// Reference map F~(q~) = (d(p~, q~), d(o~, q~)) for p~ = (r1, 0).
ReferencePoint reference_map_model(const ModelSurface& m, double r1,
                                   std::pair<double, double> point);

// ---------------------------------------------------------------------------
// Geodesic atlas: traced fan of geodesics from (r1, 0) reused by distance
// queries, cut-time bisection and triangle construction.

struct TracedGeodesic {
  double phi = 0.0;
  GeodesicPath path;
  double t_conj = kInf;  // first Jacobi zero
  double t_pi = kInf;    // first theta = pi crossing
  double t_bound = 0.0;  // trace extent
};

class GeodesicAtlas {
 public:
  GeodesicAtlas(const ModelSurface& m, double r1, int n_angles);

  const ModelSurface& surface() const { return *m_; }
  double base_r() const { return r1_; }
  const std::vector<TracedGeodesic>& traces() const { return traces_; }

 private:
  const ModelSurface* m_;
  double r1_;
  std::vector<TracedGeodesic> traces_;
};

}  // namespace sra
