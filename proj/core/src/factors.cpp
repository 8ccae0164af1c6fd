#include "gpvio/factors.hpp"

#include "gpvio/errors.hpp"

#include <algorithm>

namespace gpvio {

namespace {

TrajectoryState trajectory_state(const Values& values, std::int64_t k, double stamp) {
  TrajectoryState s;
  s.stamp = stamp;
  s.pose = values.pose(pose_key(k));
  s.velocity = values.vector(twist_key(k));
  return s;
}

/// Whitens a pixel residual and its Jacobian blocks with IRLS Huber weighting.
void robustify(const Vector2& residual, const RobustPixelNoise& noise, FactorLinearization& out,
               bool with_jacobians) {
  const HuberLoss h = huber(residual, noise.sigma, noise.huber_delta);
  const double scale = std::sqrt(h.weight) / noise.sigma;
  out.active = true;
  out.cost = 0.5 * h.rho;
  out.residual = scale * residual;
  if (with_jacobians)
    for (Eigen::MatrixXd& J : out.jacobians) J *= scale;
}

}  // namespace

// ---------------------------------------------------------------------------

WnoaPriorFactor::WnoaPriorFactor(std::int64_t k, double t0, double t1, const WnoaConfig& cfg)
    : Factor({pose_key(k), twist_key(k), pose_key(k + 1), twist_key(k + 1)}), t0_(t0), t1_(t1) {
  whiten_ = sqrt_information(prior_covariance(cfg, t1 - t0));
}

void WnoaPriorFactor::linearize(const Values& values, FactorLinearization& out,
                                bool with_jacobians) const {
  const std::int64_t k = keys()[0].index;
  const TrajectoryState xk = trajectory_state(values, k, t0_);
  const TrajectoryState xk1 = trajectory_state(values, k + 1, t1_);
  out.active = true;
  if (!with_jacobians) {
    out.residual = whiten_ * prior_residual(xk, xk1);
    out.cost = 0.5 * out.residual.squaredNorm();
    return;
  }
  const PriorLinearization lin = linearize_prior(xk, xk1);
  out.residual = whiten_ * lin.residual;
  out.cost = 0.5 * out.residual.squaredNorm();
  out.jacobians.resize(4);
  for (int i = 0; i < 4; ++i) out.jacobians[static_cast<std::size_t>(i)] = whiten_ * lin.jacobian.middleCols<6>(6 * i);
}

// ---------------------------------------------------------------------------

ImuFactor::ImuFactor(std::int64_t k, Velocity mode, PreintegratedImu preint)
    : Factor({pose_key(k), mode == Velocity::kWorld ? velocity_key(k) : twist_key(k), bias_key(k),
              pose_key(k + 1), mode == Velocity::kWorld ? velocity_key(k + 1) : twist_key(k + 1),
              bias_key(k + 1)}),
      mode_(mode),
      preint_(std::move(preint)) {
  whiten_ = sqrt_information(residual_covariance(preint_));
}

void ImuFactor::linearize(const Values& values, FactorLinearization& out,
                          bool with_jacobians) const {
  const std::vector<Key>& ks = keys();
  ImuState x[2];
  for (int s = 0; s < 2; ++s) {
    const std::size_t o = static_cast<std::size_t>(3 * s);
    x[s].stamp = s == 0 ? preint_.start : preint_.end();
    x[s].pose = values.pose(ks[o]);
    const Eigen::VectorXd& v = values.vector(ks[o + 1]);
    x[s].velocity = mode_ == Velocity::kWorld ? Vector3(v) : Vector3(x[s].pose.rotation() * Vector3(v.head<3>()));
    x[s].bias = ImuBias::from_vector(values.vector(ks[o + 2]));
  }
  const ImuResidual r = residual(x[0], x[1], preint_);
  out.active = true;
  out.residual = whiten_ * r.residual;
  out.cost = 0.5 * out.residual.squaredNorm();
  if (!with_jacobians) return;

  out.jacobians.resize(6);
  for (int s = 0; s < 2; ++s) {
    const Matrix15& J = s == 0 ? r.jacobian_k : r.jacobian_k1;
    const std::size_t o = static_cast<std::size_t>(3 * s);
    Eigen::Matrix<double, 15, 6> d_pose = J.leftCols<6>();
    if (mode_ == Velocity::kWorld) {
      out.jacobians[o + 1] = whiten_ * J.middleCols<3>(6);
    } else {
      // v_w = R w_v: right-perturbing R adds -R hat(w_v) dphi.
      const Matrix3& R = x[s].pose.rotation().matrix();
      const Vector3 wv = values.vector(ks[o + 1]).head<3>();
      d_pose.rightCols<3>() += J.middleCols<3>(6) * (-R * hat<double>(wv));
      Eigen::Matrix<double, 15, 6> d_twist = Eigen::Matrix<double, 15, 6>::Zero();
      d_twist.leftCols<3>() = J.middleCols<3>(6) * R;
      out.jacobians[o + 1] = whiten_ * d_twist;
    }
    out.jacobians[o] = whiten_ * d_pose;
    out.jacobians[o + 2] = whiten_ * J.rightCols<6>();
  }
}

// ---------------------------------------------------------------------------

const WnoaSegment& WnoaSegmentCache::get(const Values& values) const {
  if (!segment_ || version_ != values.version()) {
    segment_.emplace(trajectory_state(values, k_, t0_), trajectory_state(values, k_ + 1, t1_));
    version_ = values.version();
  }
  return *segment_;
}

CtProjectionFactor::CtProjectionFactor(std::shared_ptr<const WnoaSegmentCache> segment,
                                       double stamp, std::int64_t landmark, const Vector2& pixel,
                                       std::shared_ptr<const CameraModel> camera,
                                       RobustPixelNoise noise)
    : Factor({pose_key(segment->index()), twist_key(segment->index()),
              pose_key(segment->index() + 1), twist_key(segment->index() + 1),
              landmark_key(landmark)}),
      segment_(std::move(segment)),
      blend_(segment_->t1() - segment_->t0(), std::clamp(stamp - segment_->t0(), 0.0, segment_->t1() - segment_->t0())),
      pixel_(pixel),
      camera_(std::move(camera)),
      noise_(noise) {}

void CtProjectionFactor::linearize(const Values& values, FactorLinearization& out,
                                   bool with_jacobians) const {
  const PoseInterpolation interp = segment_->get(values).pose_at(blend_);
  ProjectionResidual pr;
  try {
    pr = projection_residual(interp.pose, *camera_, values.vector(keys()[4]), pixel_);
  } catch (const BehindCameraError&) {
    out.active = false;
    out.cost = 0.0;
    return;
  }
  if (with_jacobians) {
    out.jacobians.resize(5);
    const Eigen::Matrix<double, 2, 24> J = pr.d_pose * interp.jacobian;
    for (int i = 0; i < 4; ++i) out.jacobians[static_cast<std::size_t>(i)] = J.middleCols<6>(6 * i);
    out.jacobians[4] = pr.d_landmark;
  }
  robustify(pr.residual, noise_, out, with_jacobians);
}

// ---------------------------------------------------------------------------

GpProjectionFactor::GpProjectionFactor(std::int64_t k, GpPreintQuery query, double elapsed,
                                       const Vector3& gravity, std::int64_t landmark,
                                       const Vector2& pixel,
                                       std::shared_ptr<const CameraModel> camera,
                                       RobustPixelNoise noise)
    : Factor({pose_key(k), velocity_key(k), landmark_key(landmark)}),
      query_(std::move(query)),
      elapsed_(elapsed),
      gravity_(gravity),
      pixel_(pixel),
      camera_(std::move(camera)),
      noise_(noise) {}

void GpProjectionFactor::linearize(const Values& values, FactorLinearization& out,
                                   bool with_jacobians) const {
  const GpPoseInterpolation interp =
      interpolate_pose(values.pose(keys()[0]), Vector3(values.vector(keys()[1])), query_, elapsed_,
                       gravity_);
  ProjectionResidual pr;
  try {
    pr = projection_residual(interp.pose, *camera_, values.vector(keys()[2]), pixel_);
  } catch (const BehindCameraError&) {
    out.active = false;
    out.cost = 0.0;
    return;
  }
  if (with_jacobians) {
    out.jacobians.resize(3);
    const Eigen::Matrix<double, 2, 9> J = pr.d_pose * interp.jacobian;
    out.jacobians[0] = J.leftCols<6>();
    out.jacobians[1] = J.rightCols<3>();
    out.jacobians[2] = pr.d_landmark;
  }
  robustify(pr.residual, noise_, out, with_jacobians);
}

}  // namespace gpvio
