#pragma once

// Synthetic scenarios: analytic trajectories, IMU synthesis with noise and
// bias drift, a landmark field and asynchronous feature tracks.

#include "gpvio/imu_preint.hpp"
#include "gpvio/io.hpp"
#include "gpvio/lie.hpp"
#include "gpvio/visual.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gpvio {

enum class TrajectoryKind { kConstantTwist, kSinusoidal6Dof, kFigureEight, kPiecewiseSmooth };

TrajectoryKind parse_trajectory_kind(const std::string& name);
const char* to_string(TrajectoryKind kind);

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kSinusoidal6Dof;
  double duration = 10.0;

  /// constant_twist: T(t) = T0 exp(t * twist), twist = [v; w] in the body frame.
  Pose3 initial_pose;
  Twist twist = (Twist() << 1.0, 0.0, 0.0, 0.0, 0.0, 0.2).finished();

  /// sinusoidal_6dof: p_i = A_i sin(2 pi f_i t), theta_i = B_i sin(2 pi g_i t), R = Exp(theta).
  Vector3 position_amplitude = Vector3(1.0, 0.8, 0.3);
  Vector3 position_frequency = Vector3(0.30, 0.40, 0.50);
  Vector3 rotation_amplitude = Vector3(0.15, 0.12, 0.25);
  Vector3 rotation_frequency = Vector3(0.25, 0.35, 0.20);

  /// figure_eight: lemniscate in the xy plane with a gentle yaw swing.
  double figure_radius = 2.0;
  double figure_period = 8.0;

  /// piecewise_smooth: quintic smoothstep moves between waypoints.
  double segment_duration = 2.0;
  double segment_step = 0.8;

  void validate() const;
};

struct GroundTruthSample {
  Pose3 pose;
  /// Body-frame generalized velocity [v_b; w_b].
  Twist body_velocity = Twist::Zero();
  Vector3 world_velocity = Vector3::Zero();
  Vector3 world_acceleration = Vector3::Zero();
  /// Specific force in the body frame, R^T (a - g).
  Vector3 specific_force = Vector3::Zero();
};

GroundTruthSample ground_truth(const TrajectorySpec& spec, double t,
                               const Vector3& gravity = Vector3(0.0, 0.0, -9.81));

struct LandmarkFieldConfig {
  Vector3 box_min = Vector3(3.0, -6.0, -4.0);
  Vector3 box_max = Vector3(10.0, 6.0, 4.0);
  int count = 80;
  /// Points closer than this to the trajectory origin are redrawn.
  double min_range = 2.0;
};

struct SensorRig {
  CameraModel camera = default_camera();
  double imu_rate = 200.0;
  ImuNoiseConfig noise;
  ImuBias initial_bias;
  bool imu_noise = true;
  bool bias_random_walk = true;
  double pixel_sigma = 1.0;
  /// Mean observations per second for each visible track.
  double track_rate = 20.0;
  /// Relative jitter of the per-track observation schedule, in (0, 1).
  double track_jitter = 0.4;
  /// Tracks are cut after this long and restarted under a new id.
  double max_track_duration = 1.5;
  double min_depth = 0.5;

  static CameraModel default_camera();
  void validate() const;
};

struct InitialState {
  double stamp = 0.0;
  Pose3 pose;
  Vector3 world_velocity = Vector3::Zero();
  Vector3 body_rate = Vector3::Zero();
  ImuBias bias;
};

struct Dataset {
  std::vector<ImuSample> imu;
  /// Sorted by stamp; stamps are unique across all tracks.
  std::vector<FeatureObservation> tracks;
  std::vector<StampedPose> ground_truth;
  std::vector<Landmark> landmarks;
  InitialState initial;
};

struct ScenarioConfig {
  TrajectorySpec trajectory;
  SensorRig rig;
  LandmarkFieldConfig field;
  std::uint64_t seed = 1;
};

std::vector<ImuSample> synthesize_imu(const TrajectorySpec& spec, const SensorRig& rig,
                                      std::uint64_t seed);

std::vector<Landmark> generate_landmarks(const LandmarkFieldConfig& cfg, std::uint64_t seed);

std::vector<FeatureObservation> synthesize_tracks(const TrajectorySpec& spec,
                                                  const SensorRig& rig,
                                                  std::span<const Landmark> landmarks,
                                                  std::uint64_t seed);

Dataset simulate(const ScenarioConfig& cfg);

/// Writes imu.csv, tracks.csv, groundtruth.txt (TUM) and init.csv into `dir`.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
/// Reads the files written by write_dataset; landmarks are not stored.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace gpvio
