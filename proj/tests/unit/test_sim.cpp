#include "gpvio/errors.hpp"
#include "gpvio/sim.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

namespace gpvio {
namespace {

const TrajectoryKind kAllKinds[] = {TrajectoryKind::kConstantTwist, TrajectoryKind::kSinusoidal6Dof,
                                    TrajectoryKind::kFigureEight, TrajectoryKind::kPiecewiseSmooth};

TrajectorySpec spec_of(TrajectoryKind kind, double duration = 6.0) {
  TrajectorySpec s;
  s.kind = kind;
  s.duration = duration;
  return s;
}

TEST(Sim, GroundTruthDerivativesMatchFiniteDifferences) {
  const double h = 1e-5;
  const Vector3 g(0, 0, -9.81);
  for (TrajectoryKind kind : kAllKinds) {
    const TrajectorySpec spec = spec_of(kind);
    for (double t : {0.3, 1.1, 2.5, 3.9, 5.2}) {
      const GroundTruthSample s = ground_truth(spec, t);
      const GroundTruthSample a = ground_truth(spec, t - h);
      const GroundTruthSample b = ground_truth(spec, t + h);
      const Vector3 v_fd = (b.pose.translation() - a.pose.translation()) / (2 * h);
      EXPECT_LT((s.world_velocity - v_fd).norm(), 1e-7) << to_string(kind) << " t " << t;
      const Vector3 acc_fd = (b.world_velocity - a.world_velocity) / (2 * h);
      EXPECT_LT((s.world_acceleration - acc_fd).norm(), 1e-6) << to_string(kind);
      const Vector6 xi_fd = (se3_log<double>(s.pose.inverse() * b.pose) -
                             se3_log<double>(s.pose.inverse() * a.pose)) /
                            (2 * h);
      EXPECT_LT((s.body_velocity - xi_fd).norm(), 1e-6) << to_string(kind);
      const Matrix3 Rt = s.pose.rotation().matrix().transpose();
      EXPECT_LT((s.specific_force - Rt * (s.world_acceleration - g)).norm(), 1e-12);
      EXPECT_LT((s.body_velocity.head<3>() - Rt * s.world_velocity).norm(), 1e-12);
    }
  }
}

TEST(Sim, LevelRestMeasuresPlusGravity) {
  TrajectorySpec spec = spec_of(TrajectoryKind::kConstantTwist, 1.0);
  spec.twist.setZero();
  const GroundTruthSample s = ground_truth(spec, 0.5);
  EXPECT_LT((s.specific_force - Vector3(0, 0, 9.81)).norm(), 1e-15);
}

TEST(Sim, ZeroNoiseImuIntegratesToGroundTruth) {
  for (TrajectoryKind kind : kAllKinds) {
    const TrajectorySpec spec = spec_of(kind, 3.0);
    SensorRig rig;
    rig.imu_noise = false;
    rig.bias_random_walk = false;
    rig.imu_rate = 1000.0;
    const auto imu = synthesize_imu(spec, rig, 3);
    const double t0 = 1.0;
    const double t1 = 1.5;
    const PreintegratedImu p = integrate(slice_samples(imu, t0, t1), ImuBias{}, ImuNoiseConfig{});
    const GroundTruthSample a = ground_truth(spec, t0);
    const GroundTruthSample b = ground_truth(spec, t1);
    ImuState x;
    x.stamp = t0;
    x.pose = a.pose;
    x.velocity = a.world_velocity;
    const ImuState y = predict(x, p);
    EXPECT_LT(rotation_angle(y.pose.rotation(), b.pose.rotation()), 1e-5) << to_string(kind);
    EXPECT_LT((y.velocity - b.world_velocity).norm(), 1e-4) << to_string(kind);
    EXPECT_LT((y.pose.translation() - b.pose.translation()).norm(), 1e-4) << to_string(kind);
  }
}

TEST(Sim, ImuNoiseHasConfiguredStatistics) {
  TrajectorySpec spec = spec_of(TrajectoryKind::kConstantTwist, 50.0);
  SensorRig clean_rig;
  clean_rig.imu_noise = false;
  clean_rig.bias_random_walk = false;
  SensorRig noisy_rig = clean_rig;
  noisy_rig.imu_noise = true;
  const auto clean = synthesize_imu(spec, clean_rig, 9);
  const auto noisy = synthesize_imu(spec, noisy_rig, 9);
  ASSERT_EQ(clean.size(), noisy.size());
  double sg = 0.0;
  double sa = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    sg += (noisy[i].gyro - clean[i].gyro).squaredNorm();
    sa += (noisy[i].accel - clean[i].accel).squaredNorm();
  }
  const double n = 3.0 * static_cast<double>(clean.size());
  const double rate = clean_rig.imu_rate;
  EXPECT_NEAR(std::sqrt(sg / n), clean_rig.noise.gyro_noise_density * std::sqrt(rate),
              0.03 * clean_rig.noise.gyro_noise_density * std::sqrt(rate));
  EXPECT_NEAR(std::sqrt(sa / n), clean_rig.noise.accel_noise_density * std::sqrt(rate),
              0.03 * clean_rig.noise.accel_noise_density * std::sqrt(rate));
}

TEST(Sim, ZeroNoiseTracksReprojectExactly) {
  ScenarioConfig cfg;
  cfg.trajectory = spec_of(TrajectoryKind::kSinusoidal6Dof, 5.0);
  cfg.rig.pixel_sigma = 0.0;
  const Dataset data = simulate(cfg);
  ASSERT_GT(data.tracks.size(), 1000u);
  std::map<std::int64_t, Vector3> positions;
  for (const Landmark& l : data.landmarks) positions[l.id] = l.position;
  std::set<double> stamps;
  std::map<std::int64_t, std::pair<double, double>> spans;
  double previous = -1.0;
  for (const FeatureObservation& o : data.tracks) {
    EXPECT_GT(o.stamp, previous);
    previous = o.stamp;
    EXPECT_TRUE(stamps.insert(o.stamp).second);
    const Vector3& X = positions.at(o.track_id / 100000);
    const Vector2 px = project(ground_truth(cfg.trajectory, o.stamp).pose, cfg.rig.camera, X).pixel;
    EXPECT_LT((px - o.pixel).norm(), 1e-9);
    EXPECT_TRUE(cfg.rig.camera.in_image(o.pixel));
    auto [it, fresh] = spans.try_emplace(o.track_id, o.stamp, o.stamp);
    if (!fresh) it->second.second = o.stamp;
  }
  for (const auto& [id, span] : spans)
    EXPECT_LE(span.second - span.first, cfg.rig.max_track_duration + 0.2) << id;
}

TEST(Sim, SimulationIsDeterministic) {
  ScenarioConfig cfg;
  cfg.trajectory = spec_of(TrajectoryKind::kFigureEight, 2.0);
  const Dataset a = simulate(cfg);
  const Dataset b = simulate(cfg);
  ASSERT_EQ(a.tracks.size(), b.tracks.size());
  for (std::size_t i = 0; i < a.tracks.size(); ++i) {
    EXPECT_EQ(a.tracks[i].stamp, b.tracks[i].stamp);
    EXPECT_EQ(a.tracks[i].pixel, b.tracks[i].pixel);
  }
  ASSERT_EQ(a.imu.size(), b.imu.size());
  for (std::size_t i = 0; i < a.imu.size(); ++i) EXPECT_EQ(a.imu[i].accel, b.imu[i].accel);
  cfg.seed = 2;
  const Dataset c = simulate(cfg);
  EXPECT_NE(a.imu[10].accel, c.imu[10].accel);
}

TEST(Sim, DatasetRoundTrip) {
  ScenarioConfig cfg;
  cfg.trajectory = spec_of(TrajectoryKind::kPiecewiseSmooth, 1.0);
  cfg.rig.initial_bias.gyro = Vector3(0.01, 0.0, -0.02);
  const Dataset a = simulate(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "gpvio_dataset_roundtrip";
  std::filesystem::remove_all(dir);
  write_dataset(dir, a);
  const Dataset b = read_dataset(dir);
  ASSERT_EQ(b.imu.size(), a.imu.size());
  ASSERT_EQ(b.tracks.size(), a.tracks.size());
  ASSERT_EQ(b.ground_truth.size(), a.ground_truth.size());
  EXPECT_EQ(b.imu.back().gyro, a.imu.back().gyro);
  EXPECT_EQ(b.tracks.back().pixel, a.tracks.back().pixel);
  EXPECT_LT((b.ground_truth[50].pose.matrix() - a.ground_truth[50].pose.matrix()).norm(), 1e-14);
  EXPECT_EQ(b.initial.bias.gyro, a.initial.bias.gyro);
  EXPECT_EQ(b.initial.world_velocity, a.initial.world_velocity);
  std::filesystem::remove_all(dir);
}

TEST(Sim, ConfigValidation) {
  EXPECT_THROW(parse_trajectory_kind("spiral"), ConfigError);
  EXPECT_EQ(parse_trajectory_kind("figure_eight"), TrajectoryKind::kFigureEight);
  TrajectorySpec spec;
  spec.duration = -1.0;
  EXPECT_THROW(spec.validate(), ConfigError);
  SensorRig rig;
  rig.track_jitter = 1.0;
  EXPECT_THROW(rig.validate(), ConfigError);
  EXPECT_THROW(ground_truth(spec_of(TrajectoryKind::kSinusoidal6Dof, 1.0), 1.5), ExtrapolationError);
}

}  // namespace
}  // namespace gpvio
