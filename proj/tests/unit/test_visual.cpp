#include "gpvio/errors.hpp"
#include "gpvio/visual.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

namespace gpvio {
namespace {

CameraModel test_camera() {
  const Pose3 extrinsic(so3_exp<double>(Vector3(0.05, -0.1, 0.02)), Vector3(0.03, -0.01, 0.02));
  return CameraModel::pinhole(199.0, 201.0, 172.0, 131.0, extrinsic);
}

/// Projection through the full 3x4 camera matrix K [R_cw | t_cw] in homogeneous form.
Vector2 homogeneous_projection(const Pose3& body, const CameraModel& cam, const Vector3& X) {
  const Eigen::Matrix4d T_cw = (body * cam.body_to_camera).matrix().inverse();
  const Eigen::Vector3d x = cam.intrinsics * (T_cw * X.homogeneous()).head<3>();
  return x.hnormalized();
}

/// A landmark in front of the camera at depth in [2, 8].
Vector3 visible_point(std::mt19937_64& rng, const Pose3& body, const CameraModel& cam) {
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  std::uniform_real_distribution<double> d(2.0, 8.0);
  const double z = d(rng);
  return body * cam.body_to_camera * Vector3(u(rng) * z, u(rng) * z, z);
}

TEST(Visual, ProjectionMatchesHomogeneousCameraMatrix) {
  std::mt19937_64 rng(41);
  const CameraModel cam = test_camera();
  for (int i = 0; i < 500; ++i) {
    const Pose3 body = oracle::random_pose(rng, 1.0, 3.0);
    const Vector3 X = visible_point(rng, body, cam);
    EXPECT_LT((project(body, cam, X).pixel - homogeneous_projection(body, cam, X)).norm(), 1e-9);
  }
}

TEST(Visual, ResidualJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(42);
  const CameraModel cam = test_camera();
  for (int i = 0; i < 300; ++i) {
    const Pose3 body = oracle::random_pose(rng, 1.0, 3.0);
    const Vector3 X = visible_point(rng, body, cam);
    const Vector2 obs = project(body, cam, X).pixel + Vector2(1.5, -0.7);
    const ProjectionResidual r = projection_residual(body, cam, X, obs);
    EXPECT_LT((r.residual - Vector2(1.5, -0.7)).norm(), 1e-9);
    const auto fp = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return projection_residual(body * se3_exp<double>(Vector6(d)), cam, X, obs).residual;
    };
    const auto fl = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return projection_residual(body, cam, Vector3(X + d), obs).residual;
    };
    EXPECT_LT(oracle::relative_difference(r.d_pose, oracle::numeric_jacobian(fp, Eigen::VectorXd::Zero(6))),
              1e-5);
    EXPECT_LT(oracle::relative_difference(r.d_landmark,
                                          oracle::numeric_jacobian(fl, Eigen::VectorXd::Zero(3))),
              1e-5);
  }
}

TEST(Visual, BehindCameraIsRejected) {
  const CameraModel cam = CameraModel::pinhole(200, 200, 170, 130);
  EXPECT_THROW(project(Pose3(), cam, Vector3(0, 0, -1)), BehindCameraError);
  EXPECT_THROW(project(Pose3(), cam, Vector3(0, 0, kMinDepth)), BehindCameraError);
  EXPECT_NO_THROW(project(Pose3(), cam, Vector3(0, 0, 2 * kMinDepth)));
}

TEST(Visual, CameraValidation) {
  EXPECT_THROW(CameraModel::pinhole(-1, 200, 170, 130), ConfigError);
  CameraModel cam = CameraModel::pinhole(200, 200, 170, 130);
  cam.intrinsics(0, 1) = 0.3;
  EXPECT_THROW(cam.validate(), ConfigError);
  EXPECT_TRUE(cam.in_image(Vector2(0, 0)));
  EXPECT_FALSE(cam.in_image(Vector2(346, 10)));
}

TEST(Visual, HuberIsQuadraticThenLinear) {
  const double delta = kDefaultHuberDelta;
  const HuberLoss small = huber(Vector2(0.6, 0.8), 1.0, delta);
  EXPECT_DOUBLE_EQ(small.rho, 1.0);
  EXPECT_DOUBLE_EQ(small.weight, 1.0);
  const HuberLoss big = huber(Vector2(3.0, 4.0), 1.0, delta);
  EXPECT_NEAR(big.rho, delta * (10.0 - delta), 1e-12);
  EXPECT_NEAR(big.weight, delta / 5.0, 1e-12);
  // Continuous value and slope at the switch.
  const double eps = 1e-7;
  const HuberLoss lo = huber(Vector2(delta - eps, 0), 1.0, delta);
  const HuberLoss hi = huber(Vector2(delta + eps, 0), 1.0, delta);
  EXPECT_NEAR(lo.rho, hi.rho, 1e-6);
  EXPECT_NEAR(lo.weight, hi.weight, 1e-6);
  // Above the switch rho = 2 w s^2 - delta^2.
  EXPECT_NEAR(big.rho, 2.0 * big.weight * 25.0 - delta * delta, 1e-12);
  EXPECT_THROW(huber(Vector2(1, 0), 0.0), std::invalid_argument);
}

std::vector<Pose3> sideways_cameras(int n, double baseline) {
  std::vector<Pose3> out;
  for (int i = 0; i < n; ++i)
    out.emplace_back(so3_exp<double>(Vector3(0.0, 0.02 * i, 0.0)), Vector3(baseline * i, 0.1 * i, 0));
  return out;
}

TEST(Visual, TriangulationRecoversPointExactly) {
  const CameraModel cam = CameraModel::pinhole(200, 200, 170, 130);
  std::mt19937_64 rng(43);
  int solved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<Pose3> poses = sideways_cameras(5, 0.15);
    const Vector3 X = visible_point(rng, poses.front(), cam);
    std::vector<Vector2> pixels;
    for (const Pose3& T : poses) pixels.push_back(project_camera_point(cam, T.inverse() * X).pixel);
    const TriangulationResult r = triangulate(poses, pixels, cam);
    if (r.status == TriangulationStatus::kDeferred) continue;
    ASSERT_EQ(r.status, TriangulationStatus::kOk);
    EXPECT_LT((r.position - X).norm(), 1e-8 * X.norm());
    EXPECT_LT(r.mean_reprojection_px, 1e-6);
    ++solved;
  }
  EXPECT_GT(solved, 50);
}

TEST(Visual, PureRotationIsDeferred) {
  const CameraModel cam = CameraModel::pinhole(200, 200, 170, 130);
  std::vector<Pose3> poses;
  for (int i = 0; i < 4; ++i) poses.emplace_back(so3_exp<double>(Vector3(0, 0.05 * i, 0)), Vector3::Zero());
  const Vector3 X(0.5, 0.2, 5.0);
  std::vector<Vector2> pixels;
  for (const Pose3& T : poses) pixels.push_back(project_camera_point(cam, T.inverse() * X).pixel);
  const TriangulationResult r = triangulate(poses, pixels, cam);
  EXPECT_EQ(r.status, TriangulationStatus::kDeferred);
  EXPECT_LT(r.parallax_px, 1e-9);
  const std::vector<Pose3> one = {Pose3()};
  const std::vector<Vector2> px = {Vector2(1, 1)};
  EXPECT_EQ(triangulate(one, px, cam).status, TriangulationStatus::kDeferred);
}

TEST(Visual, InconsistentObservationsAreRejected) {
  const CameraModel cam = CameraModel::pinhole(200, 200, 170, 130);
  const std::vector<Pose3> poses = sideways_cameras(4, 0.3);
  const Vector3 X(0.2, 0.1, 4.0);
  std::vector<Vector2> pixels;
  for (const Pose3& T : poses) pixels.push_back(project_camera_point(cam, T.inverse() * X).pixel);
  pixels[2] += Vector2(25.0, -30.0);
  EXPECT_EQ(triangulate(poses, pixels, cam).status, TriangulationStatus::kRejected);
}

TEST(Visual, TracksCsvRoundTrip) {
  std::vector<FeatureObservation> obs = {{3, 0.125, Vector2(10.25, 20.5)},
                                         {7, 0.1300000001, Vector2(1.0 / 3.0, 2.0)}};
  const auto path = std::filesystem::temp_directory_path() / "gpvio_tracks_roundtrip.csv";
  write_tracks_csv(path, obs);
  const auto back = read_tracks_csv(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].track_id, obs[i].track_id);
    EXPECT_EQ(back[i].stamp, obs[i].stamp);
    EXPECT_EQ(back[i].pixel, obs[i].pixel);
  }
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace gpvio
