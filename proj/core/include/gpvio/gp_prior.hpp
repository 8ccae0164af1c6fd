#pragma once

// White-noise-on-acceleration (WNOA) motion prior on SE(3).
//
// The trajectory between two knots is modelled in the local frame of the
// earlier knot: xi(t) = log(T_k^-1 T(t)), with local velocity
// xi_dot(t) = J_r(xi)^-1 varpi(t). The local state [xi; xi_dot] is a linear
// time-invariant system driven by white noise with power spectral density Qc.

#include "gpvio/lie.hpp"

#include <Eigen/Core>

namespace gpvio {

using Vector12 = Eigen::Matrix<double, 12, 1>;
using Matrix12 = Eigen::Matrix<double, 12, 12>;

/// Pose and body-frame generalized velocity at a knot.
struct TrajectoryState {
  double stamp = 0.0;
  Pose3 pose;
  Twist velocity = Twist::Zero();
};

struct WnoaConfig {
  Matrix6 qc = 0.05 * Matrix6::Identity();

  /// Throws ConfigError unless qc is symmetric positive definite.
  void validate() const;
};

/// Residual [dt*w_k - xi ; w_k - J_r(xi)^-1 w_k1], xi = log(T_k^-1 T_k1).
Vector12 prior_residual(const TrajectoryState& xk, const TrajectoryState& xk1);

struct PriorLinearization {
  Vector12 residual;
  /// Columns: [pose_k (6), twist_k (6), pose_k1 (6), twist_k1 (6)],
  /// poses perturbed on the right.
  Eigen::Matrix<double, 12, 24> jacobian;
};

PriorLinearization linearize_prior(const TrajectoryState& xk, const TrajectoryState& xk1);

/// Transition covariance Q(dt) = [dt^3/3 Qc, dt^2/2 Qc; dt^2/2 Qc, dt Qc].
Matrix12 prior_covariance(const WnoaConfig& cfg, double dt);

/// Posterior-mean blending weights Lambda(tau), Psi(tau) for one query time.
///
/// With Q(dt) = Q1(dt) (x) Qc the weights do not depend on Qc, so only the
/// 2x2 scalar factors are stored; the full 12x12 blocks are kron(., I6).
class WnoaBlend {
 public:
  WnoaBlend(double interval, double offset);

  double interval() const { return interval_; }
  double offset() const { return offset_; }
  const Eigen::Matrix2d& lambda() const { return lambda_; }
  const Eigen::Matrix2d& psi() const { return psi_; }

 private:
  double interval_;
  double offset_;
  Eigen::Matrix2d lambda_;
  Eigen::Matrix2d psi_;
};

struct PoseInterpolation {
  Pose3 pose;
  /// d(pose tangent) / d[pose_k, twist_k, pose_k1, twist_k1].
  Eigen::Matrix<double, 6, 24> jacobian;
};

struct Interpolation {
  Pose3 pose;
  Twist velocity = Twist::Zero();
  /// Rows [pose tangent (6), twist (6)]; columns as PriorLinearization.
  Eigen::Matrix<double, 12, 24> jacobian;
};

/// Shared per-knot-pair quantities, so that many queries inside the same
/// interval reuse the relative log and its derivatives.
class WnoaSegment {
 public:
  WnoaSegment(const TrajectoryState& xk, const TrajectoryState& xk1);

  double start() const { return t0_; }
  double end() const { return t1_; }

  PoseInterpolation pose_at(const WnoaBlend& blend) const;
  Interpolation state_at(const WnoaBlend& blend) const;

  /// Throws ExtrapolationError unless start() <= tau <= end().
  WnoaBlend blend_for(double tau) const;

 private:
  struct Local {
    Vec6T<double> xi;
    Vec6T<double> xi_dot;
    Eigen::Matrix<double, 6, 24> d_xi;
    Eigen::Matrix<double, 6, 24> d_xi_dot;
  };
  Local local_at(const WnoaBlend& blend) const;

  double t0_;
  double t1_;
  Pose3 pose0_;
  Twist twist0_;
  Vector6 xi1_;
  Vector6 xi_dot1_;
  /// d[xi1; xi_dot1] / d[pose_k, twist_k, pose_k1, twist_k1]
  Eigen::Matrix<double, 12, 24> d_gamma1_;
};

/// Posterior-mean interpolation between two knots. Refuses extrapolation.
Interpolation interpolate(const TrajectoryState& xk, const TrajectoryState& xk1, double tau);

/// d(J_r(xi)^-1 u)/d(xi) for SE(3), evaluated with forward-mode dual numbers.
Matrix6 se3_right_jacobian_inv_times_derivative(const Vector6& xi, const Vector6& u);
/// d(J_r(xi) u)/d(xi).
Matrix6 se3_right_jacobian_times_derivative(const Vector6& xi, const Vector6& u);

}  // namespace gpvio
