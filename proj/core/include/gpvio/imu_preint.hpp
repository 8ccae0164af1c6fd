#pragma once

// Classical on-manifold IMU preintegration between two knots.

#include "gpvio/lie.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <vector>

namespace gpvio {

using Vector9 = Eigen::Matrix<double, 9, 1>;
using Matrix9 = Eigen::Matrix<double, 9, 9>;
using Vector15 = Eigen::Matrix<double, 15, 1>;
using Matrix15 = Eigen::Matrix<double, 15, 15>;

struct ImuSample {
  double stamp = 0.0;
  Vector3 gyro = Vector3::Zero();   ///< rad/s
  Vector3 accel = Vector3::Zero();  ///< specific force, m/s^2
};

struct ImuBias {
  Vector3 accel = Vector3::Zero();
  Vector3 gyro = Vector3::Zero();

  /// [accel; gyro]
  Vector6 vector() const;
  static ImuBias from_vector(const Vector6& v);
};

struct ImuNoiseConfig {
  double gyro_noise_density = 1e-3;   ///< rad/s/sqrt(Hz)
  double accel_noise_density = 1e-2;  ///< m/s^2/sqrt(Hz)
  double gyro_bias_walk = 1e-5;       ///< rad/s^2/sqrt(Hz)
  double accel_bias_walk = 1e-4;      ///< m/s^3/sqrt(Hz)
  Vector3 gravity = Vector3(0.0, 0.0, -9.81);

  void validate() const;
};

/// Pose, world-frame velocity and biases at a knot.
struct ImuState {
  double stamp = 0.0;
  Pose3 pose;
  Vector3 velocity = Vector3::Zero();
  ImuBias bias;
};

/// Relative motion increments expressed in the frame of the first knot.
/// Also used for the GP back-end, which fills it from its latent model.
struct PreintegratedImu {
  double start = 0.0;
  double dt_total = 0.0;
  Rot3 delta_r;
  Vector3 delta_v = Vector3::Zero();
  Vector3 delta_p = Vector3::Zero();
  /// Ordered [rotation, velocity, position].
  Matrix9 covariance = Matrix9::Zero();
  ImuBias bias_lin;
  ImuNoiseConfig noise;

  double end() const { return start + dt_total; }
};

/// Samples covering exactly [t0, t1]; the end samples are linearly
/// interpolated when no sample falls on a boundary.
std::vector<ImuSample> slice_samples(std::span<const ImuSample> stream, double t0, double t1);

/// Linear interpolation of the stream at time t (must be inside the stream).
ImuSample sample_at(std::span<const ImuSample> stream, double t);

/// Midpoint integration of the increments with lockstep covariance propagation.
PreintegratedImu integrate(std::span<const ImuSample> samples, const ImuBias& bias_lin,
                           const ImuNoiseConfig& noise);

struct ImuResidual {
  /// [r_dR, r_dv, r_dp, r_db] with r_db = [accel; gyro].
  Vector15 residual;
  /// Columns per state: [pose (6, right perturbation), velocity (3), bias (6)].
  Matrix15 jacobian_k;
  Matrix15 jacobian_k1;
};

/// Preintegration residual between two states; no first-order bias correction.
ImuResidual residual(const ImuState& xk, const ImuState& xk1, const PreintegratedImu& preint);

/// Full 15x15 covariance of the residual: preintegration block plus bias random walk.
Matrix15 residual_covariance(const PreintegratedImu& preint);

/// State at the end of the preintegration span that zeroes the residual.
ImuState predict(const ImuState& xk, const PreintegratedImu& preint);

/// `stamp,gx,gy,gz,ax,ay,az` with a header row.
void write_imu_csv(const std::filesystem::path& path, std::span<const ImuSample> samples);
std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path);

}  // namespace gpvio
