#pragma once

// Sliding-window estimator for both back-ends: knot-grid bookkeeping, feature
// association and triangulation, problem assembly, solve and marginalization.

#include "gpvio/factor_graph.hpp"
#include "gpvio/factors.hpp"
#include "gpvio/gp_preint.hpp"
#include "gpvio/gp_prior.hpp"
#include "gpvio/imu_preint.hpp"
#include "gpvio/io.hpp"
#include "gpvio/sim.hpp"
#include "gpvio/visual.hpp"

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gpvio {

enum class Backend { kCtImu, kGpImu };

Backend parse_backend(const std::string& name);
const char* to_string(Backend backend);

/// Tangent dimension of one knot: 18 for CT-IMU (pose, twist, bias), 15 for GP-IMU.
int knot_dimension(Backend backend);

enum class InitMode { kGroundTruth, kRest };

InitMode parse_init_mode(const std::string& name);
const char* to_string(InitMode mode);

struct WindowConfig {
  double knot_interval = 0.05;
  int min_window_size = 40;
  Backend backend = Backend::kCtImu;
  SolverConfig solver;

  void validate() const;
};

struct AnchorConfig {
  double rotation_sigma = 1e-3;
  double position_sigma = 1e-3;
  double velocity_sigma = 0.05;
  double angular_rate_sigma = 0.05;
  double accel_bias_sigma = 0.05;
  double gyro_bias_sigma = 0.005;
};

struct EstimatorConfig {
  WindowConfig window;
  ImuNoiseConfig noise;
  WnoaConfig wnoa;
  GpKernelConfig kernel;
  CameraModel camera = SensorRig::default_camera();
  RobustPixelNoise pixel_noise;
  TriangulationConfig triangulation;
  int min_track_observations = 4;
  double bias_refit_gyro = 1e-3;
  double bias_refit_accel = 1e-2;
  AnchorConfig anchor;

  void validate() const;
};

struct StepTiming {
  double stamp = 0.0;
  std::size_t factors = 0;
  double solve_ms = 0.0;
  double marg_ms = 0.0;
  double preint_ms = 0.0;
  double other_ms = 0.0;
  /// Window size of the solved problem, before marginalization.
  int knots = 0;
  int landmarks = 0;
  int state_dim = 0;
  int iterations = 0;
  bool stalled = false;
  double final_cost = 0.0;
};

struct EstimatorStats {
  std::size_t dropped_observations = 0;
  std::size_t rejected_tracks = 0;
  std::size_t triangulated_tracks = 0;
  std::size_t stalled_solves = 0;
  std::size_t marginal_floor_warnings = 0;
  std::size_t bias_refits = 0;
};

class SlidingWindowEstimator {
 public:
  SlidingWindowEstimator(EstimatorConfig cfg, const InitialState& init);

  /// Appends measurements, extends the knot grid up to `now`, associates
  /// observations with knot intervals and attempts triangulation.
  void push_measurements(std::span<const ImuSample> imu,
                         std::span<const FeatureObservation> observations, double now);

  /// Factors of the current window: anchors or marginal prior, motion and IMU
  /// terms per interval, one projection per associated observation.
  std::vector<FactorPtr> build_problem() const;

  /// Re-integrates stale intervals, then runs LM on the window.
  SolveReport solve();

  /// Marginalizes oldest knots while the window exceeds min_window_size.
  /// Returns the number of knots removed.
  int marginalize_if_needed();

  /// push + solve + marginalize with per-stage timing.
  StepTiming step(std::span<const ImuSample> imu, std::span<const FeatureObservation> observations,
                  double now);

  /// Poses of knots already marginalized, oldest first.
  const std::vector<StampedPose>& emitted() const { return emitted_; }
  /// Emitted poses followed by the live window.
  std::vector<StampedPose> trajectory() const;

  const Values& values() const { return values_; }
  Values& mutable_values() { return values_; }
  const EstimatorConfig& config() const { return cfg_; }
  const EstimatorStats& stats() const { return stats_; }
  std::int64_t first_knot() const { return first_; }
  std::int64_t last_knot() const { return last_; }
  int num_knots() const { return static_cast<int>(last_ - first_ + 1); }
  int num_landmarks() const;
  double knot_stamp(std::int64_t k) const;
  /// n * knot_dimension + 3 m for the live window.
  int expected_dimension() const;
  const std::shared_ptr<LinearPriorFactor>& marginal_prior() const { return prior_; }
  /// Knot state as an ImuState (world-frame velocity).
  ImuState knot_state(std::int64_t k) const;

 private:
  struct Interval {
    PreintegratedImu preint;
    std::shared_ptr<const LatentGpModel> model;
    std::shared_ptr<WnoaSegmentCache> segment;
  };
  struct TrackObservation {
    FeatureObservation obs;
    std::int64_t interval = 0;
    std::optional<GpPreintQuery> query;
  };
  enum class TrackState { kPending, kActive, kRejected, kClosed };
  struct Track {
    TrackState state = TrackState::kPending;
    std::vector<TrackObservation> observations;
    std::vector<FeatureObservation> future;
  };

  Interval& interval(std::int64_t k) { return intervals_[static_cast<std::size_t>(k - first_)]; }
  const Interval& interval(std::int64_t k) const {
    return intervals_[static_cast<std::size_t>(k - first_)];
  }
  void add_knot();
  Interval integrate_interval(std::int64_t k, const ImuBias& bias) const;
  void refresh_queries(std::int64_t k);
  void associate_pending();
  void try_triangulation();
  Pose3 body_pose_at(const TrackObservation& o) const;
  void refit_stale_intervals();
  void marginalize_oldest();
  void trim_imu();

  EstimatorConfig cfg_;
  std::shared_ptr<const CameraModel> camera_;
  double t0_ = 0.0;
  std::int64_t first_ = 0;
  std::int64_t last_ = 0;
  Values values_;
  std::deque<Interval> intervals_;
  std::vector<ImuSample> imu_;
  std::map<std::int64_t, Track> tracks_;
  std::vector<FactorPtr> anchors_;
  std::shared_ptr<LinearPriorFactor> prior_;
  std::vector<StampedPose> emitted_;
  EstimatorStats stats_;
  double pending_preint_ms_ = 0.0;
};

struct StageTotals {
  double optimization_ms = 0.0;
  double marginalization_ms = 0.0;
  double preintegration_ms = 0.0;
  double others_ms = 0.0;
};

struct RunResult {
  Backend backend = Backend::kCtImu;
  std::vector<StampedPose> trajectory;
  std::vector<StepTiming> steps;
  StageTotals totals;
  EstimatorStats stats;
  bool failed = false;
  std::string failure;
};

/// Feeds the dataset to the estimator in knot_interval batches.
/// Runtime errors end the run early with `failed` set and partial output kept.
RunResult run_estimator(const Dataset& data, const EstimatorConfig& cfg,
                        InitMode init = InitMode::kGroundTruth,
                        const std::function<void(const StepTiming&)>& on_step = {});

/// `stamp,factors,solve_ms,marg_ms`
void write_timing_csv(const std::filesystem::path& path, std::span<const StepTiming> steps);

}  // namespace gpvio
