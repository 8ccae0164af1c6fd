#pragma once

// Measurement factors for the two back-ends.
//
// Variables per knot k:
//   CT-IMU: pose_key(k), twist_key(k) (body-frame [v; w]), bias_key(k)
//   GP-IMU: pose_key(k), velocity_key(k) (world frame), bias_key(k)

#include "gpvio/factor_graph.hpp"
#include "gpvio/gp_preint.hpp"
#include "gpvio/gp_prior.hpp"
#include "gpvio/imu_preint.hpp"
#include "gpvio/visual.hpp"

#include <memory>
#include <optional>

namespace gpvio {

/// WNOA prior between consecutive CT-IMU knots, weighted by Q(dt)^-1.
class WnoaPriorFactor final : public Factor {
 public:
  WnoaPriorFactor(std::int64_t k, double t0, double t1, const WnoaConfig& cfg);

  std::string name() const override { return "wnoa_prior"; }
  void linearize(const Values& values, FactorLinearization& out,
                 bool with_jacobians) const override;

 private:
  double t0_;
  double t1_;
  Eigen::Matrix<double, 12, 12> whiten_;
};

/// Preintegrated IMU factor over keys
/// [pose_k, vel_k, bias_k, pose_k1, vel_k1, bias_k1].
class ImuFactor final : public Factor {
 public:
  enum class Velocity {
    kWorld,     ///< velocity_key, world frame
    kBodyTwist  ///< twist_key; world velocity is R * twist.head<3>()
  };

  ImuFactor(std::int64_t k, Velocity mode, PreintegratedImu preint);

  std::string name() const override { return "imu"; }
  void linearize(const Values& values, FactorLinearization& out,
                 bool with_jacobians) const override;
  const PreintegratedImu& preintegrated() const { return preint_; }

 private:
  Velocity mode_;
  PreintegratedImu preint_;
  Matrix15 whiten_;
};

/// Lazily rebuilt WnoaSegment for one knot pair, shared by every projection
/// factor in the interval. Rebuilt whenever the Values version changes.
class WnoaSegmentCache {
 public:
  WnoaSegmentCache(std::int64_t k, double t0, double t1) : k_(k), t0_(t0), t1_(t1) {}

  const WnoaSegment& get(const Values& values) const;
  double t0() const { return t0_; }
  double t1() const { return t1_; }
  std::int64_t index() const { return k_; }

 private:
  std::int64_t k_;
  double t0_;
  double t1_;
  mutable std::uint64_t version_ = 0;
  mutable std::optional<WnoaSegment> segment_;
};

struct RobustPixelNoise {
  double sigma = 1.0;
  double huber_delta = kDefaultHuberDelta;
};

/// Projection at an interpolated CT-IMU pose:
/// keys [pose_k, twist_k, pose_k1, twist_k1, landmark].
class CtProjectionFactor final : public Factor {
 public:
  CtProjectionFactor(std::shared_ptr<const WnoaSegmentCache> segment, double stamp,
                     std::int64_t landmark, const Vector2& pixel,
                     std::shared_ptr<const CameraModel> camera, RobustPixelNoise noise);

  std::string name() const override { return "ct_projection"; }
  void linearize(const Values& values, FactorLinearization& out,
                 bool with_jacobians) const override;

 private:
  std::shared_ptr<const WnoaSegmentCache> segment_;
  WnoaBlend blend_;
  Vector2 pixel_;
  std::shared_ptr<const CameraModel> camera_;
  RobustPixelNoise noise_;
};

/// Projection at a pose interpolated from the anchoring IMU state through a
/// cached GP preintegration query: keys [pose_k, vel_k, landmark].
class GpProjectionFactor final : public Factor {
 public:
  GpProjectionFactor(std::int64_t k, GpPreintQuery query, double elapsed, const Vector3& gravity,
                     std::int64_t landmark, const Vector2& pixel,
                     std::shared_ptr<const CameraModel> camera, RobustPixelNoise noise);

  std::string name() const override { return "gp_projection"; }
  void linearize(const Values& values, FactorLinearization& out,
                 bool with_jacobians) const override;

 private:
  GpPreintQuery query_;
  double elapsed_;
  Vector3 gravity_;
  Vector2 pixel_;
  std::shared_ptr<const CameraModel> camera_;
  RobustPixelNoise noise_;
};

}  // namespace gpvio
