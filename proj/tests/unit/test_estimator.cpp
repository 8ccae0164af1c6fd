#include "gpvio/errors.hpp"
#include "gpvio/estimator.hpp"
#include "gpvio/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace gpvio {
namespace {

Dataset short_dataset(double duration) {
  ScenarioConfig cfg;
  cfg.trajectory.kind = TrajectoryKind::kSinusoidal6Dof;
  cfg.trajectory.duration = duration;
  cfg.rig.imu_noise = false;
  cfg.rig.bias_random_walk = false;
  cfg.rig.pixel_sigma = 0.0;
  cfg.field.count = 40;
  return simulate(cfg);
}

EstimatorConfig small_window(Backend backend) {
  EstimatorConfig cfg;
  cfg.window.backend = backend;
  cfg.window.min_window_size = 10;
  cfg.wnoa.qc = Matrix6::Identity();
  cfg.kernel.num_latent = 100;
  return cfg;
}

class EstimatorBackends : public ::testing::TestWithParam<Backend> {};

TEST_P(EstimatorBackends, DimensionAndWindowInvariantsHoldEveryStep) {
  const Dataset data = short_dataset(2.5);
  const EstimatorConfig cfg = small_window(GetParam());
  int steps = 0;
  const RunResult r = run_estimator(data, cfg, InitMode::kGroundTruth, [&](const StepTiming& t) {
    ++steps;
    EXPECT_EQ(t.state_dim, t.knots * knot_dimension(cfg.window.backend) + 3 * t.landmarks);
    EXPECT_LE(t.knots, cfg.window.min_window_size + 1);
    EXPECT_GE(t.solve_ms, 0.0);
  });
  ASSERT_FALSE(r.failed) << r.failure;
  EXPECT_EQ(steps, 50);
  EXPECT_EQ(r.steps.size(), 50u);
  EXPECT_GT(r.stats.triangulated_tracks, 0u);
  EXPECT_EQ(r.stats.stalled_solves, 0u);
  // One pose per knot, oldest first.
  ASSERT_EQ(r.trajectory.size(), 51u);
  for (std::size_t i = 1; i < r.trajectory.size(); ++i)
    EXPECT_NEAR(r.trajectory[i].stamp - r.trajectory[i - 1].stamp, cfg.window.knot_interval, 1e-9);

  const MetricsReport m = evaluate(r.trajectory, data.ground_truth, std::vector<double>{1.0}, 2.0);
  EXPECT_LT(m.at(1.0)->translation_rms, 5e-3);
}

TEST_P(EstimatorBackends, RunsAreDeterministic) {
  const Dataset data = short_dataset(1.0);
  const EstimatorConfig cfg = small_window(GetParam());
  const RunResult a = run_estimator(data, cfg);
  const RunResult b = run_estimator(data, cfg);
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i)
    EXPECT_EQ(a.trajectory[i].pose.matrix(), b.trajectory[i].pose.matrix());
}

INSTANTIATE_TEST_SUITE_P(Backends, EstimatorBackends,
                         ::testing::Values(Backend::kCtImu, Backend::kGpImu),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Estimator, KnotDimensions) {
  EXPECT_EQ(knot_dimension(Backend::kCtImu), 18);
  EXPECT_EQ(knot_dimension(Backend::kGpImu), 15);
  SlidingWindowEstimator est(small_window(Backend::kGpImu), InitialState{});
  EXPECT_EQ(est.num_knots(), 1);
  EXPECT_EQ(est.expected_dimension(), 15);
}

TEST(Estimator, StationaryInputStaysAtRest) {
  SlidingWindowEstimator est(small_window(Backend::kCtImu), InitialState{});
  std::vector<ImuSample> imu;
  for (int i = 0; i <= 11; ++i) imu.push_back({i * 0.005, Vector3::Zero(), Vector3(0, 0, 9.81)});
  est.step(imu, {}, 0.05);
  EXPECT_EQ(est.num_knots(), 2);
  // Stationary zero-noise input keeps the estimate at rest.
  EXPECT_LT(est.values().pose(pose_key(1)).translation().norm(), 1e-8);
  const std::vector<ImuSample> stale = {{0.012, Vector3::Zero(), Vector3(0, 0, 9.81)}};
  EXPECT_THROW(est.push_measurements(stale, {}, 0.05), OrderingError);
}

TEST(Estimator, ConfigValidation) {
  EXPECT_THROW(parse_backend("ekf"), ConfigError);
  EXPECT_EQ(parse_backend("gp_imu"), Backend::kGpImu);
  EXPECT_EQ(parse_init_mode("rest"), InitMode::kRest);
  EstimatorConfig cfg;
  cfg.window.knot_interval = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = EstimatorConfig{};
  cfg.window.min_window_size = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = EstimatorConfig{};
  cfg.min_track_observations = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Estimator, TimingCsvHasOneRowPerStep) {
  const Dataset data = short_dataset(0.5);
  const RunResult r = run_estimator(data, small_window(Backend::kGpImu));
  const auto path = std::filesystem::temp_directory_path() / "gpvio_timing.csv";
  write_timing_csv(path, r.steps);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line.rfind("stamp,factors,solve_ms,marg_ms", 0), 0u);
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 10);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace gpvio
