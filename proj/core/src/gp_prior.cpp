#include "gpvio/gp_prior.hpp"

#include "gpvio/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace gpvio {

namespace {

using Jet6 = ceres::Jet<double, 6>;

Vec6T<Jet6> seed(const Vector6& xi) {
  Vec6T<Jet6> out;
  for (int i = 0; i < 6; ++i) out[i] = Jet6(xi[i], i);
  return out;
}

Matrix6 jacobian_of(const Vec6T<Jet6>& y) {
  Matrix6 J;
  for (int i = 0; i < 6; ++i) J.row(i) = y[i].v.transpose();
  return J;
}

Eigen::Matrix2d q1(double d) {
  Eigen::Matrix2d q;
  q << d * d * d / 3.0, d * d / 2.0, d * d / 2.0, d;
  return q;
}

Eigen::Matrix2d phi1(double d) {
  Eigen::Matrix2d p;
  p << 1.0, d, 0.0, 1.0;
  return p;
}

}  // namespace

void WnoaConfig::validate() const {
  if ((qc - qc.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("WNOA Qc must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix6> es(qc);
  if (es.eigenvalues().minCoeff() <= 0.0) throw ConfigError("WNOA Qc must be positive definite");
}

Matrix6 se3_right_jacobian_inv_times_derivative(const Vector6& xi, const Vector6& u) {
  const Mat6T<Jet6> Jinv = se3_right_jacobian_inv<Jet6>(seed(xi));
  return jacobian_of(Jinv * u.cast<Jet6>());
}

Matrix6 se3_right_jacobian_times_derivative(const Vector6& xi, const Vector6& u) {
  const Mat6T<Jet6> J = se3_right_jacobian<Jet6>(seed(xi));
  return jacobian_of(J * u.cast<Jet6>());
}

Vector12 prior_residual(const TrajectoryState& xk, const TrajectoryState& xk1) {
  return linearize_prior(xk, xk1).residual;
}

PriorLinearization linearize_prior(const TrajectoryState& xk, const TrajectoryState& xk1) {
  const double dt = xk1.stamp - xk.stamp;
  if (!(dt > 0.0)) throw OrderingError("prior_residual: knot stamps must be strictly increasing");

  const Vector6 xi = se3_log<double>(xk.pose.inverse() * xk1.pose);
  const Matrix6 Jinv = se3_right_jacobian_inv<double>(xi);
  const Matrix6 d_xi_d_k = -Jinv * se3_exp<double>(Vector6(-xi)).adjoint();

  PriorLinearization out;
  out.residual.head<6>() = dt * xk.velocity - xi;
  out.residual.tail<6>() = xk.velocity - Jinv * xk1.velocity;

  const Matrix6 M = se3_right_jacobian_inv_times_derivative(xi, xk1.velocity);
  const Matrix6 I = Matrix6::Identity();
  out.jacobian.setZero();
  // d/d pose_k
  out.jacobian.block<6, 6>(0, 0) = -d_xi_d_k;
  out.jacobian.block<6, 6>(6, 0) = -M * d_xi_d_k;
  // d/d twist_k
  out.jacobian.block<6, 6>(0, 6) = dt * I;
  out.jacobian.block<6, 6>(6, 6) = I;
  // d/d pose_k1
  out.jacobian.block<6, 6>(0, 12) = -Jinv;
  out.jacobian.block<6, 6>(6, 12) = -M * Jinv;
  // d/d twist_k1
  out.jacobian.block<6, 6>(6, 18) = -Jinv;
  return out;
}

Matrix12 prior_covariance(const WnoaConfig& cfg, double dt) {
  if (!(dt > 0.0)) throw std::domain_error("prior_covariance: dt must be positive");
  Matrix12 Q;
  Q.block<6, 6>(0, 0) = dt * dt * dt / 3.0 * cfg.qc;
  Q.block<6, 6>(0, 6) = dt * dt / 2.0 * cfg.qc;
  Q.block<6, 6>(6, 0) = dt * dt / 2.0 * cfg.qc;
  Q.block<6, 6>(6, 6) = dt * cfg.qc;
  return Q;
}

WnoaBlend::WnoaBlend(double interval, double offset) : interval_(interval), offset_(offset) {
  if (!(interval > 0.0)) throw std::domain_error("WnoaBlend: interval must be positive");
  if (offset < 0.0 || offset > interval) {
    std::ostringstream os;
    os << "WnoaBlend: offset " << offset << " outside [0, " << interval << "]";
    throw ExtrapolationError(os.str());
  }
  if (offset == 0.0) {
    lambda_.setIdentity();
    psi_.setZero();
  } else if (offset == interval) {
    lambda_.setZero();
    psi_.setIdentity();
  } else {
    psi_ = q1(offset) * phi1(interval - offset).transpose() * q1(interval).inverse();
    lambda_ = phi1(offset) - psi_ * phi1(interval);
  }
}

WnoaSegment::WnoaSegment(const TrajectoryState& xk, const TrajectoryState& xk1)
    : t0_(xk.stamp), t1_(xk1.stamp), pose0_(xk.pose), twist0_(xk.velocity) {
  if (!(t1_ > t0_)) throw OrderingError("WnoaSegment: knot stamps must be strictly increasing");
  xi1_ = se3_log<double>(xk.pose.inverse() * xk1.pose);
  const Matrix6 Jinv = se3_right_jacobian_inv<double>(xi1_);
  xi_dot1_ = Jinv * xk1.velocity;

  const Matrix6 d_xi_d_k = -Jinv * se3_exp<double>(Vector6(-xi1_)).adjoint();
  const Matrix6 M = se3_right_jacobian_inv_times_derivative(xi1_, xk1.velocity);
  d_gamma1_.setZero();
  d_gamma1_.block<6, 6>(0, 0) = d_xi_d_k;
  d_gamma1_.block<6, 6>(0, 12) = Jinv;
  d_gamma1_.block<6, 6>(6, 0) = M * d_xi_d_k;
  d_gamma1_.block<6, 6>(6, 12) = M * Jinv;
  d_gamma1_.block<6, 6>(6, 18) = Jinv;
}

WnoaBlend WnoaSegment::blend_for(double tau) const {
  if (tau < t0_ || tau > t1_) {
    std::ostringstream os;
    os << "WNOA interpolation at " << tau << " outside [" << t0_ << ", " << t1_ << "]";
    throw ExtrapolationError(os.str());
  }
  return WnoaBlend(t1_ - t0_, tau - t0_);
}

WnoaSegment::Local WnoaSegment::local_at(const WnoaBlend& blend) const {
  const Eigen::Matrix2d& L = blend.lambda();
  const Eigen::Matrix2d& P = blend.psi();
  Local out;
  // gamma_k = [0; twist_k]
  out.xi = L(0, 1) * twist0_ + P(0, 0) * xi1_ + P(0, 1) * xi_dot1_;
  out.xi_dot = L(1, 1) * twist0_ + P(1, 0) * xi1_ + P(1, 1) * xi_dot1_;

  out.d_xi = P(0, 0) * d_gamma1_.topRows<6>() + P(0, 1) * d_gamma1_.bottomRows<6>();
  out.d_xi.block<6, 6>(0, 6) += L(0, 1) * Matrix6::Identity();
  out.d_xi_dot = P(1, 0) * d_gamma1_.topRows<6>() + P(1, 1) * d_gamma1_.bottomRows<6>();
  out.d_xi_dot.block<6, 6>(0, 6) += L(1, 1) * Matrix6::Identity();
  return out;
}

PoseInterpolation WnoaSegment::pose_at(const WnoaBlend& blend) const {
  const Local loc = local_at(blend);
  const Pose3 delta = se3_exp<double>(loc.xi);
  PoseInterpolation out;
  out.pose = pose0_ * delta;
  // T(tau) = T_k exp(xi): right-perturbing T_k moves the output by Ad(exp(-xi)).
  out.jacobian = se3_right_jacobian<double>(loc.xi) * loc.d_xi;
  out.jacobian.block<6, 6>(0, 0) += se3_exp<double>(Vector6(-loc.xi)).adjoint();
  return out;
}

Interpolation WnoaSegment::state_at(const WnoaBlend& blend) const {
  const Local loc = local_at(blend);
  const Pose3 delta = se3_exp<double>(loc.xi);
  const Matrix6 Jr = se3_right_jacobian<double>(loc.xi);
  Interpolation out;
  out.pose = pose0_ * delta;
  out.velocity = Jr * loc.xi_dot;

  out.jacobian.topRows<6>() = Jr * loc.d_xi;
  out.jacobian.block<6, 6>(0, 0) += se3_exp<double>(Vector6(-loc.xi)).adjoint();
  const Matrix6 N = se3_right_jacobian_times_derivative(loc.xi, loc.xi_dot);
  out.jacobian.bottomRows<6>() = N * loc.d_xi + Jr * loc.d_xi_dot;
  return out;
}

Interpolation interpolate(const TrajectoryState& xk, const TrajectoryState& xk1, double tau) {
  const WnoaSegment seg(xk, xk1);
  const WnoaBlend blend = seg.blend_for(tau);
  Interpolation out = seg.state_at(blend);
  // Knot stamps return the knot itself, bit for bit.
  if (tau == xk.stamp) {
    out.pose = xk.pose;
    out.velocity = xk.velocity;
  } else if (tau == xk1.stamp) {
    out.pose = xk1.pose;
    out.velocity = xk1.velocity;
  }
  return out;
}

}  // namespace gpvio
