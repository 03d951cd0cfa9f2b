// Adaptive Dormand-Prince 5(4) integrator for small fixed-size systems.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace sra {

struct OdeOptions {
  double tol = 1e-10;       // absolute and relative error target per step
  double max_step = 0.05;   // cap so stored samples interpolate accurately
  double min_step = 1e-14;  // below this the step controller gives up
};

struct OdeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Integrates y' = rhs(t, y) from t0 to t1 (t1 > t0).
///
/// observer(t, y) is called once with the initial state and then after every
/// accepted step; returning false halts the integration early. Throws
/// OdeError when the controller cannot meet the tolerance.
template <int N, class RhsT, class ObsT>
void integrate_dp54(RhsT&& rhs, std::array<double, N> y, double t0, double t1,
                    const OdeOptions& opt, ObsT&& observer) {
  using State = std::array<double, N>;
  static constexpr double a21 = 1.0 / 5.0;
  static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                          a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
  static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0,
                          a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                          a65 = -5103.0 / 18656.0;
  static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                          b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
  // difference between 5th and embedded 4th order weights
  static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                          e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

  if (!(t1 > t0)) throw OdeError("integrate_dp54: empty interval");

  double t = t0;
  State k1, k2, k3, k4, k5, k6, k7, ytmp, ynew;
  rhs(t, y, k1);
  if (!observer(t, y)) return;

  double h = std::min(opt.max_step, (t1 - t0) / 16.0);
  if (h <= 0) h = opt.max_step;

  int consecutive_rejects = 0;
  while (t < t1) {
    if (t + h > t1) h = t1 - t;

    for (int i = 0; i < N; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
    rhs(t + h / 5.0, ytmp, k2);
    for (int i = 0; i < N; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    rhs(t + 3.0 * h / 10.0, ytmp, k3);
    for (int i = 0; i < N; ++i)
      ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    rhs(t + 4.0 * h / 5.0, ytmp, k4);
    for (int i = 0; i < N; ++i)
      ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    rhs(t + 8.0 * h / 9.0, ytmp, k5);
    for (int i = 0; i < N; ++i)
      ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                            a65 * k5[i]);
    rhs(t + h, ytmp, k6);
    for (int i = 0; i < N; ++i)
      ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
    rhs(t + h, ynew, k7);

    double err = 0.0;
    for (int i = 0; i < N; ++i) {
      double ei = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                       e7 * k7[i]);
      double scale = opt.tol + opt.tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      double r = ei / scale;
      err += r * r;
    }
    err = std::sqrt(err / N);

    if (err <= 1.0 || h <= opt.min_step) {
      t += h;
      y = ynew;
      k1 = k7;  // FSAL
      consecutive_rejects = 0;
      if (!observer(t, y)) return;
    } else {
      if (++consecutive_rejects > 64) throw OdeError("integrate_dp54: step control stalled");
    }

    double factor = 0.9 * std::pow(std::max(err, 1e-16), -0.2);
    factor = std::min(5.0, std::max(0.2, factor));
    h = std::min(opt.max_step, h * factor);
    if (h < opt.min_step) h = opt.min_step;
  }
}

/// Two-point quintic Hermite interpolation on [0, h] from values and first
/// and second derivatives at the endpoints.
struct Hermite5 {
  double f0, d0, s0, f1, d1, s1, h;

  double value(double t) const {
    double s = t / h;
    double s2 = s * s, s3 = s2 * s, s4 = s3 * s, s5 = s4 * s;
    double H0 = 1 - 10 * s3 + 15 * s4 - 6 * s5;
    double H1 = s - 6 * s3 + 8 * s4 - 3 * s5;
    double H2 = 0.5 * (s2 - 3 * s3 + 3 * s4 - s5);
    double H3 = 10 * s3 - 15 * s4 + 6 * s5;
    double H4 = -4 * s3 + 7 * s4 - 3 * s5;
    double H5 = 0.5 * (s3 - 2 * s4 + s5);
    return f0 * H0 + h * d0 * H1 + h * h * s0 * H2 + f1 * H3 + h * d1 * H4 +
           h * h * s1 * H5;
  }

  double derivative(double t) const {
    double s = t / h;
    double s2 = s * s, s3 = s2 * s, s4 = s3 * s;
    double G0 = (-30 * s2 + 60 * s3 - 30 * s4) / h;
    double G1 = 1 - 18 * s2 + 32 * s3 - 15 * s4;
    double G2 = 0.5 * (2 * s - 9 * s2 + 12 * s3 - 5 * s4) * h;
    double G3 = (30 * s2 - 60 * s3 + 30 * s4) / h;
    double G4 = -12 * s2 + 28 * s3 - 15 * s4;
    double G5 = 0.5 * (3 * s2 - 8 * s3 + 5 * s4) * h;
    return f0 * G0 + d0 * G1 + s0 * G2 + f1 * G3 + d1 * G4 + s1 * G5;
  }
};

}  // namespace sra
