#pragma once

// Pinhole camera, reprojection residual, Huber loss and multi-view
// triangulation for asynchronous feature tracks.

#include "gpvio/lie.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gpvio {

using Matrix26 = Eigen::Matrix<double, 2, 6>;
using Matrix23 = Eigen::Matrix<double, 2, 3>;

inline constexpr double kMinDepth = 0.05;

struct CameraModel {
  Matrix3 intrinsics = Matrix3::Identity();
  /// Camera pose in the body frame.
  Pose3 body_to_camera;
  int width = 346;
  int height = 260;

  static CameraModel pinhole(double fx, double fy, double cx, double cy,
                             const Pose3& body_to_camera = Pose3(), int width = 346,
                             int height = 260);

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }
  bool in_image(const Vector2& pixel) const;

  /// Throws ConfigError on non-positive focal lengths or a malformed K.
  void validate() const;
};

struct FeatureObservation {
  std::int64_t track_id = 0;
  double stamp = 0.0;
  Vector2 pixel = Vector2::Zero();
};

struct Landmark {
  std::int64_t id = 0;
  Vector3 position = Vector3::Zero();
};

struct Projection {
  Vector2 pixel;
  double depth = 0.0;
};

/// Projects a world point through the body pose T_wb and the camera extrinsic.
/// Throws BehindCameraError when the camera-frame depth is <= kMinDepth.
Projection project(const Pose3& body_pose, const CameraModel& cam, const Vector3& landmark);

/// Projection of a point already expressed in the camera frame.
Projection project_camera_point(const CameraModel& cam, const Vector3& point_c);

struct ProjectionResidual {
  /// Observed minus projected pixel.
  Vector2 residual;
  /// Right perturbation of the body pose, tangent order [rho, phi].
  Matrix26 d_pose;
  Matrix23 d_landmark;
  double depth = 0.0;
};

ProjectionResidual projection_residual(const Pose3& body_pose, const CameraModel& cam,
                                       const Vector3& landmark, const Vector2& observed);

struct HuberLoss {
  /// rho(s) with s = |r| / sigma: s^2 below delta, delta (2 s - delta) above.
  double rho = 0.0;
  /// IRLS weight in (0, 1].
  double weight = 1.0;
};

inline constexpr double kDefaultHuberDelta = 1.345;

HuberLoss huber(const Vector2& residual, double sigma, double delta = kDefaultHuberDelta);

struct TriangulationConfig {
  double parallax_px = 8.0;
  double max_mean_reprojection_px = 3.0;
};

enum class TriangulationStatus { kOk, kDeferred, kRejected };

struct TriangulationResult {
  TriangulationStatus status = TriangulationStatus::kRejected;
  Vector3 position = Vector3::Zero();
  double parallax_px = 0.0;
  double mean_reprojection_px = 0.0;
};

/// Largest pairwise pixel displacement after removing the relative rotation.
double rotation_compensated_parallax(std::span<const Pose3> camera_poses,
                                     std::span<const Vector2> pixels, const CameraModel& cam);

/// Linear DLT over all views followed by cheirality and reprojection gates.
/// `camera_poses` are world-frame camera poses T_wc.
TriangulationResult triangulate(std::span<const Pose3> camera_poses,
                                std::span<const Vector2> pixels, const CameraModel& cam,
                                const TriangulationConfig& cfg = {});

/// `track_id,stamp,u,v` with a header row.
void write_tracks_csv(const std::filesystem::path& path,
                      std::span<const FeatureObservation> observations);
std::vector<FeatureObservation> read_tracks_csv(const std::filesystem::path& path);

}  // namespace gpvio
