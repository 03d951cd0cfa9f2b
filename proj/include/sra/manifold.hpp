// Pointed test manifolds (M, o): polar-chart surfaces and the flat cylinder.
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "sra/model_surface.hpp"

namespace sra {

struct ChartExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Chart point. Polar surfaces read (a, b) as (r, theta); the cylinder reads
/// (a, b) as (angle phi, height z) with the base point o at (0, 0).
struct Point2 {
  double a = 0, b = 0;
};

/// Tangent components in the chart basis; normalized against the metric by
/// the geodesic routines.
struct Tangent2 {
  double da = 0, db = 0;
};

/// Surface in geodesic polar coordinates about o, metric dr^2 + f(r,theta)^2
/// dtheta^2 with f(0,.) = 0 and f_r(0,.) = 1. Within the chart L_o(r, theta)
/// = r. Rotationally symmetric surfaces carry a backing profile so that
/// distance queries route through the revolution-surface solver; full_model
/// marks charts that cover the whole surface (no chart-exceeded errors).
struct PolarSurface {
  std::function<double(double, double)> f;
  std::function<double(double, double)> f_r;
  std::function<double(double, double)> f_rr;
  std::function<double(double, double)> f_theta;  // zero for symmetric surfaces
  double r_dom = 0;
  bool rotationally_symmetric = true;
  bool full_model = true;
  bool analytic = true;                          // false for tabulated surfaces
  std::optional<Profile> radial;                 // backing profile when symmetric
  std::shared_ptr<const ModelSurface> solver;    // revolution solver view

  double inj_at_origin() const { return r_dom; }
};

/// Rotationally symmetric polar surface backed by a profile; covers the
/// whole surface of revolution.
PolarSurface polar_from_profile(const Profile& p, double integ_tol = 1e-10);
/// Chart-limited variant: operations whose geodesics would leave r < r_dom
/// throw ChartExceeded.
PolarSurface polar_chart(const Profile& p, double r_dom, double integ_tol = 1e-10);
/// Non-symmetric test surface f = r (1 + eps r^2 cos(2 theta)).
PolarSurface polar_bumpy(double eps, double r_dom);

/// S^1 x R with unit circle, base point o = ((1,0), 0), i.e. angle 0.
struct FlatCylinder {
  static constexpr double circumference = 2 * kPi;
};

using Manifold = std::variant<PolarSurface, FlatCylinder>;

struct DiniPair {
  double left = 0;   // max over minimizing geodesics of <c'(s), gamma'(l)>
  double right = 0;  // min over the same set
};

struct ManifoldDistanceResult {
  double distance = 0;
  std::vector<GeodesicPath> geodesics;  // all minimizers within 1e-7
};

/// Distance and minimizing geodesics. Cylinder distances are exact closed
/// forms (both wrap directions when tied); polar surfaces shoot over the
/// initial angle.
ManifoldDistanceResult manifold_distance(const Manifold& man, Point2 a, Point2 b,
                                         bool want_paths = true);

/// L_o(point).
double base_distance(const Manifold& man, Point2 p);

/// One-sided derivatives of L_o along the path at parameter t, clamped to
/// [-1, 1]: right = min and left = max of <sigma'(t), gamma'(l)> over the
/// minimizing geodesics gamma from o to sigma(t).
DiniPair dini_derivatives(const Manifold& man, const GeodesicPath& path, double t);

/// Unit-speed geodesic from a with the given initial tangent.
GeodesicPath manifold_geodesic(const Manifold& man, Point2 a, Tangent2 direction,
                               double t_max);

// ---------------------------------------------------------------------------
// Mesh distance oracle: Dijkstra on a metric grid. Edge stencil uses all
// coprime moves up to `stencil` cells per axis, which keeps the directional
// overestimate of the chamfer metric below ~0.4% at the default.

struct MeshField {
  int nu = 0, nv = 0;        // grid dimensions (radial/angular or angular/height)
  bool has_pole = false;     // polar grids include the origin node
  bool has_far_pole = false; // closed full models include the far vertex
  double du = 0, dv = 0;     // grid spacings
  double v0 = 0;             // first v coordinate (cylinder grids)
  std::vector<double> dist;
  std::vector<int> pred;

  /// Bound on one grid cell diameter; distance queries snap to grid nodes.
  double cell = 0;

  int node_count() const { return (int)dist.size(); }
  int nearest_node(Point2 p) const;
  Point2 node_point(int node) const;
  double at(Point2 p) const { return dist[nearest_node(p)]; }
};

MeshField mesh_distance_oracle(const Manifold& man, Point2 source, int resolution,
                               int stencil = 6, double z_extent = kPi);

/// Single-pair variant: stops the Dijkstra sweep once the target settles.
/// When provided, snapped_a / snapped_b receive the grid nodes actually used,
/// so cross-checks can compare distances between identical points.
double mesh_distance_between(const Manifold& man, Point2 a, Point2 b, int resolution,
                             int stencil = 6, double z_extent = kPi,
                             Point2* snapped_a = nullptr, Point2* snapped_b = nullptr);

}  // namespace sra
