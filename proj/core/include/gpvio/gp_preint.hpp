#pragma once

// GP regression preintegration.
//
// The rotation-vector rate r_dot(t) and the b_k-frame specific force a(t)
// are modelled as independent GPs with squared-exponential kernels and
// constant means (the sample means of the latent data). Latent observations rho_i, alpha_i are placed uniformly over the
// span; integral operators applied to the posterior mean give the
// preintegrated rotation vector, velocity and position at any query time.

#include "gpvio/imu_preint.hpp"
#include "gpvio/lie.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

namespace gpvio {

/// Squared-exponential kernel k(t, s) = variance * exp(-(t - s)^2 / (2 l^2))
/// with closed-form integrals over the first argument.
struct SeKernel {
  double variance = 1.0;
  double lengthscale = 1.0;

  double operator()(double t, double s) const;
  /// int_a^tau k(t, s) dt
  double integral(double a, double tau, double s) const;
  /// int_a^tau int_a^u k(t, s) dt du
  double double_integral(double a, double tau, double s) const;
  /// Var of int_a^tau f for f ~ GP(0, k).
  double integral_variance(double a, double tau) const;
};

struct GpKernelConfig {
  /// Unset hyperparameters are resolved from the data at fit time:
  /// lengthscale = 3x mean IMU spacing, variance = mean square of the
  /// bias-corrected signal, sigma = noise density * sqrt(latents / span).
  std::optional<double> lengthscale_r;
  std::optional<double> variance_r;
  std::optional<double> lengthscale_a;
  std::optional<double> variance_a;
  std::optional<double> sigma_r;
  std::optional<double> sigma_a;
  int num_latent = 400;
  int max_iters = 10;
  double tolerance = 1e-8;

  void validate() const;
};

/// Hard limit on latent states per model; the fit is cubic in this count.
inline constexpr int kMaxLatentStates = 4000;

class LatentGpModel {
 public:
  double anchor_stamp() const { return stamps_.front(); }
  double end_stamp() const { return stamps_.back(); }
  const std::vector<double>& latent_stamps() const { return stamps_; }
  /// n x 3 latent rotation-vector rates.
  const Eigen::MatrixX3d& rho() const { return rho_; }
  /// n x 3 latent accelerations in the anchor frame.
  const Eigen::MatrixX3d& alpha() const { return alpha_; }
  /// Constant prior means of the two latent processes.
  const Vector3& mean_r() const { return mean_r_; }
  const Vector3& mean_a() const { return mean_a_; }
  const SeKernel& kernel_r() const { return kernel_r_; }
  const SeKernel& kernel_a() const { return kernel_a_; }
  double sigma_r() const { return sigma_r_; }
  double sigma_a() const { return sigma_a_; }
  const ImuBias& bias() const { return bias_; }
  int iterations() const { return iterations_; }

  /// Posterior mean of r_dot at t (plain kernel regression).
  Vector3 rate(double t) const;
  /// Posterior mean of the anchor-frame acceleration at t.
  Vector3 acceleration(double t) const;

  /// gram^-1 * (latent - mean), n x 3.
  const Eigen::MatrixX3d& weights_r() const { return weights_r_; }
  const Eigen::MatrixX3d& weights_a() const { return weights_a_; }
  const Eigen::LLT<Eigen::MatrixXd>& gram_r() const { return gram_r_; }
  const Eigen::LLT<Eigen::MatrixXd>& gram_a() const { return gram_a_; }

 private:
  friend LatentGpModel fit_latent(std::span<const ImuSample>, const ImuBias&,
                                  const GpKernelConfig&, const ImuNoiseConfig&);

  std::vector<double> stamps_;
  Eigen::MatrixX3d rho_;
  Eigen::MatrixX3d alpha_;
  Vector3 mean_r_ = Vector3::Zero();
  Vector3 mean_a_ = Vector3::Zero();
  SeKernel kernel_r_;
  SeKernel kernel_a_;
  double sigma_r_ = 0.0;
  double sigma_a_ = 0.0;
  ImuBias bias_;
  int iterations_ = 0;
  Eigen::LLT<Eigen::MatrixXd> gram_r_;
  Eigen::LLT<Eigen::MatrixXd> gram_a_;
  Eigen::MatrixX3d weights_r_;
  Eigen::MatrixX3d weights_a_;
};

/// Fits the latent states by fixed-point iteration on r_dot = J_r(r)^-1 (w - b_w).
LatentGpModel fit_latent(std::span<const ImuSample> samples, const ImuBias& bias,
                         const GpKernelConfig& cfg, const ImuNoiseConfig& noise = {});

struct GpPreintQuery {
  Vector3 delta_r = Vector3::Zero();
  Vector3 delta_v = Vector3::Zero();
  Vector3 delta_p = Vector3::Zero();
  /// Posterior covariance ordered [r, v, p]; zero when not requested.
  Matrix9 query_covariance = Matrix9::Zero();
};

GpPreintQuery query(const LatentGpModel& model, double tau, bool with_covariance = true);

Rot3 query_rotation(const LatentGpModel& model, double tau);

struct GpPoseInterpolation {
  Pose3 pose;
  /// d(pose tangent) / d[anchor pose (6), anchor velocity (3)].
  Eigen::Matrix<double, 6, 9> jacobian;
};

GpPoseInterpolation interpolate_pose(const ImuState& anchor, const LatentGpModel& model,
                                     double tau, const Vector3& gravity);

/// Same, from a query already evaluated `elapsed` seconds after the anchor.
GpPoseInterpolation interpolate_pose(const Pose3& anchor_pose, const Vector3& anchor_velocity,
                                     const GpPreintQuery& q, double elapsed,
                                     const Vector3& gravity);

/// Span-end query packaged as a preintegrated measurement.
PreintegratedImu to_preintegrated(const LatentGpModel& model, const ImuNoiseConfig& noise);

}  // namespace gpvio
