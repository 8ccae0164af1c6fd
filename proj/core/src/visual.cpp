#include "gpvio/visual.hpp"

#include "gpvio/errors.hpp"
#include "gpvio/io.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gpvio {

CameraModel CameraModel::pinhole(double fx, double fy, double cx, double cy,
                                 const Pose3& body_to_camera, int width, int height) {
  CameraModel cam;
  cam.intrinsics << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  cam.body_to_camera = body_to_camera;
  cam.width = width;
  cam.height = height;
  cam.validate();
  return cam;
}

bool CameraModel::in_image(const Vector2& pixel) const {
  return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() <= width - 1.0 &&
         pixel.y() <= height - 1.0;
}

void CameraModel::validate() const {
  if (!(fx() > 0.0) || !(fy() > 0.0)) throw ConfigError("camera focal lengths must be positive");
  if (intrinsics(2, 2) != 1.0 || intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 ||
      intrinsics(2, 1) != 0.0 || intrinsics(0, 1) != 0.0)
    throw ConfigError("camera intrinsics must be upper triangular with zero skew and K22 = 1");
  if (width <= 0 || height <= 0) throw ConfigError("camera image size must be positive");
}

Projection project_camera_point(const CameraModel& cam, const Vector3& pc) {
  if (!(pc.z() > kMinDepth)) {
    std::ostringstream os;
    os << "landmark depth " << pc.z() << " at or behind the camera";
    throw BehindCameraError(os.str());
  }
  Projection out;
  out.depth = pc.z();
  out.pixel = Vector2(cam.fx() * pc.x() / pc.z() + cam.cx(), cam.fy() * pc.y() / pc.z() + cam.cy());
  return out;
}

Projection project(const Pose3& body_pose, const CameraModel& cam, const Vector3& landmark) {
  const Pose3 T_wc = body_pose * cam.body_to_camera;
  return project_camera_point(cam, T_wc.inverse() * landmark);
}

ProjectionResidual projection_residual(const Pose3& body_pose, const CameraModel& cam,
                                       const Vector3& landmark, const Vector2& observed) {
  const Matrix3& R_wb = body_pose.rotation().matrix();
  const Matrix3 R_cb = cam.body_to_camera.rotation().matrix().transpose();
  const Vector3 pb = R_wb.transpose() * (landmark - body_pose.translation());
  const Vector3 pc = R_cb * (pb - cam.body_to_camera.translation());
  const Projection proj = project_camera_point(cam, pc);

  const double iz = 1.0 / pc.z();
  Matrix23 d_pi;
  d_pi << cam.fx() * iz, 0.0, -cam.fx() * pc.x() * iz * iz, 0.0, cam.fy() * iz,
      -cam.fy() * pc.y() * iz * iz;

  Eigen::Matrix<double, 3, 6> d_pb;
  d_pb << -Matrix3::Identity(), hat<double>(pb);

  ProjectionResidual out;
  out.residual = observed - proj.pixel;
  out.depth = proj.depth;
  out.d_pose = -d_pi * R_cb * d_pb;
  out.d_landmark = -d_pi * R_cb * R_wb.transpose();
  return out;
}

HuberLoss huber(const Vector2& residual, double sigma, double delta) {
  if (!(sigma > 0.0) || !(delta > 0.0))
    throw std::invalid_argument("huber: sigma and delta must be positive");
  const double s = residual.norm() / sigma;
  HuberLoss out;
  if (s <= delta) {
    out.rho = s * s;
    out.weight = 1.0;
  } else {
    out.rho = delta * (2.0 * s - delta);
    out.weight = delta / s;
  }
  return out;
}

double rotation_compensated_parallax(std::span<const Pose3> camera_poses,
                                     std::span<const Vector2> pixels, const CameraModel& cam) {
  const Matrix3 K_inv = cam.intrinsics.inverse();
  double best = 0.0;
  for (std::size_t i = 0; i < camera_poses.size(); ++i) {
    const Vector3 bearing = K_inv * pixels[i].homogeneous();
    for (std::size_t j = 0; j < camera_poses.size(); ++j) {
      if (i == j) continue;
      const Matrix3 R_ji = camera_poses[j].rotation().matrix().transpose() *
                           camera_poses[i].rotation().matrix();
      const Vector3 b = cam.intrinsics * (R_ji * bearing);
      if (!(b.z() > 0.0)) continue;
      best = std::max(best, (b.hnormalized() - pixels[j]).norm());
    }
  }
  return best;
}

TriangulationResult triangulate(std::span<const Pose3> camera_poses,
                                std::span<const Vector2> pixels, const CameraModel& cam,
                                const TriangulationConfig& cfg) {
  if (camera_poses.size() != pixels.size())
    throw std::invalid_argument("triangulate: pose and pixel counts differ");
  TriangulationResult out;
  if (camera_poses.size() < 2) {
    out.status = TriangulationStatus::kDeferred;
    return out;
  }
  out.parallax_px = rotation_compensated_parallax(camera_poses, pixels, cam);
  if (out.parallax_px < cfg.parallax_px) {
    out.status = TriangulationStatus::kDeferred;
    return out;
  }

  // DLT in normalized image coordinates.
  const Matrix3 K_inv = cam.intrinsics.inverse();
  const Eigen::Index n = static_cast<Eigen::Index>(camera_poses.size());
  Eigen::MatrixXd A(2 * n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Pose3 T_cw = camera_poses[static_cast<std::size_t>(i)].inverse();
    Eigen::Matrix<double, 3, 4> P;
    P << T_cw.rotation().matrix(), T_cw.translation();
    const Vector3 x = K_inv * pixels[static_cast<std::size_t>(i)].homogeneous();
    A.row(2 * i) = x.x() * P.row(2) - P.row(0);
    A.row(2 * i + 1) = x.y() * P.row(2) - P.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d X = svd.matrixV().col(3);
  if (std::abs(X[3]) < 1e-12) return out;
  out.position = X.head<3>() / X[3];

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector3 pc = camera_poses[static_cast<std::size_t>(i)].inverse() * out.position;
    if (!(pc.z() > kMinDepth)) return out;
    total += (project_camera_point(cam, pc).pixel - pixels[static_cast<std::size_t>(i)]).norm();
  }
  out.mean_reprojection_px = total / static_cast<double>(n);
  if (out.mean_reprojection_px >= cfg.max_mean_reprojection_px) return out;
  out.status = TriangulationStatus::kOk;
  return out;
}

void write_tracks_csv(const std::filesystem::path& path,
                      std::span<const FeatureObservation> observations) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  io::set_full_precision(os);
  os << "track_id,stamp,u,v\n";
  for (const FeatureObservation& o : observations)
    os << o.track_id << ',' << o.stamp << ',' << o.pixel.x() << ',' << o.pixel.y() << '\n';
}

std::vector<FeatureObservation> read_tracks_csv(const std::filesystem::path& path) {
  std::vector<FeatureObservation> out;
  io::for_each_csv_row(path, "track_id,stamp,u,v", 4, [&](std::span<const double> f) {
    FeatureObservation o;
    o.track_id = static_cast<std::int64_t>(f[0]);
    o.stamp = f[1];
    o.pixel = Vector2(f[2], f[3]);
    out.push_back(o);
  });
  return out;
}

}  // namespace gpvio
