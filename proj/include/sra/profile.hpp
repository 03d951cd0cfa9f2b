// Warping functions y(r) defining rotationally symmetric model surfaces.
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sra/numerics.hpp"

namespace sra {

enum class ProfileKind { open, closed };

/// A warping function y(r) with derivatives. The metric of the associated
/// model surface is dr^2 + y(r)^2 dtheta^2 on (0, ell) x [0, 2*pi).
///
/// Invariants (checked by validate_profile):
///   y > 0 on (0, ell);  y(0) = 0, y'(0) = 1;
///   closed profiles additionally satisfy y(ell) = 0, y'(ell) = -1.
struct Profile {
  std::function<double(double)> y;
  std::function<double(double)> y1;
  std::function<double(double)> y2;
  double ell = kInf;                    // +inf for open profiles
  ProfileKind kind = ProfileKind::open;
  std::string name;
  double r_max = 20.0;                  // working radius when ell = +inf

  bool closed() const { return kind == ProfileKind::closed; }
  /// End of the radial working domain: ell when closed, r_max otherwise.
  double domain_end() const { return closed() ? ell : r_max; }
};

struct ProfileViolation {
  std::string condition;
  double r = 0.0;
  double value = 0.0;
};

struct ValidationReport {
  bool passed = true;
  std::vector<ProfileViolation> violations;
};

/// Checks every Profile invariant on a uniform grid of grid_size points over
/// (0, ell) (clipped to (0, r_max] for open profiles). Derivative fields are
/// cross-checked against finite differences of y. Violations are data, not
/// errors.
ValidationReport validate_profile(const Profile& p, int grid_size = 1024,
                                  double tol = 1e-8);

/// Gaussian curvature -y''(r)/y(r) of the model surface at radius r.
/// Throws std::domain_error outside (0, ell).
double curvature(const Profile& p, double r);

/// Multiplies y by a smooth factor m_delta so that the logarithmic derivative
/// drops by exactly delta on (r1, r2):
///   y_delta'/y_delta + delta = y'/y   on (r1, r2),
///   y_delta'/y_delta <= y'/y          everywhere.
/// Closed profiles are re-capped at ell - delta; throws std::invalid_argument
/// when delta is too large for the cap blend to stay beyond r2.
Profile perturb_profile(const Profile& p, double delta, double r1, double r2);

/// Built-in families:
///   ("plane", {})          y = r, open
///   ("sphere", {k})        y = sin(sqrt(k) r)/sqrt(k), closed, ell = pi/sqrt(k)
///   ("hyperbolic", {k})    y = sinh(sqrt(k) r)/sqrt(k), open
///   ("prolate", {a, b})    ellipsoid of revolution, equatorial semi-axis a,
///                          polar semi-axis b > a; closed
///   ("oblate", {a, b})     same with b < a; closed
/// Throws std::invalid_argument for unknown names or bad parameters.
Profile builtin_profile(const std::string& name, const std::vector<double>& params = {});

/// Profile interpolating tabulated (r, y) samples with cubic-spline
/// derivatives. Samples must start at (0, 0) and be strictly increasing in r.
/// If the final y is (near) zero the profile is closed with ell = r_back.
Profile profile_from_samples(const std::vector<std::pair<double, double>>& samples);

}  // namespace sra
