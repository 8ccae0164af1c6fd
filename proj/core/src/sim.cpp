#include "gpvio/sim.hpp"

#include "gpvio/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

namespace gpvio {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Position and rotation-vector trajectory with two time derivatives.
struct Kinematics {
  Vector3 p = Vector3::Zero();
  Vector3 dp = Vector3::Zero();
  Vector3 ddp = Vector3::Zero();
  Vector3 th = Vector3::Zero();
  Vector3 dth = Vector3::Zero();
};

void sine(double amp, double freq_hz, double t, double& x, double& dx, double& ddx) {
  const double w = kTwoPi * freq_hz;
  x = amp * std::sin(w * t);
  dx = amp * w * std::cos(w * t);
  ddx = -amp * w * w * std::sin(w * t);
}

Kinematics sinusoidal(const TrajectorySpec& s, double t) {
  Kinematics k;
  double unused = 0.0;
  for (int i = 0; i < 3; ++i) {
    sine(s.position_amplitude[i], s.position_frequency[i], t, k.p[i], k.dp[i], k.ddp[i]);
    sine(s.rotation_amplitude[i], s.rotation_frequency[i], t, k.th[i], k.dth[i], unused);
  }
  return k;
}

Kinematics figure_eight(const TrajectorySpec& s, double t) {
  const double f = 1.0 / s.figure_period;
  const double r = s.figure_radius;
  Kinematics k;
  double unused = 0.0;
  sine(r, f, t, k.p.x(), k.dp.x(), k.ddp.x());
  sine(0.5 * r, 2.0 * f, t, k.p.y(), k.dp.y(), k.ddp.y());
  sine(0.2, f, t, k.p.z(), k.dp.z(), k.ddp.z());
  sine(0.05, 2.0 * f, t, k.th.x(), k.dth.x(), unused);
  sine(0.05, f, t, k.th.y(), k.dth.y(), unused);
  sine(0.4, f, t, k.th.z(), k.dth.z(), unused);
  return k;
}

Vector3 waypoint_position(int j, double step) {
  const double x = static_cast<double>(j);
  return step * Vector3(x, 1.5 * std::sin(1.7 * x), 0.5 * (std::cos(2.3 * x) - 1.0));
}

Vector3 waypoint_rotation(int j) {
  const double x = static_cast<double>(j);
  return Vector3(0.05 * std::sin(0.9 * x), 0.05 * std::sin(1.3 * x), 0.3 * std::sin(1.1 * x));
}

Kinematics piecewise_smooth(const TrajectorySpec& s, double t) {
  const double T = s.segment_duration;
  const int j = std::max(0, static_cast<int>(std::floor(t / T)));
  const double u = t / T - j;
  // Quintic smoothstep: zero first and second derivatives at both ends.
  const double sv = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
  const double ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / T;
  const double dds = (60.0 * u - 180.0 * u * u + 120.0 * u * u * u) / (T * T);
  const Vector3 p0 = waypoint_position(j, s.segment_step);
  const Vector3 dp = waypoint_position(j + 1, s.segment_step) - p0;
  const Vector3 r0 = waypoint_rotation(j);
  const Vector3 dr = waypoint_rotation(j + 1) - r0;
  Kinematics k;
  k.p = p0 + sv * dp;
  k.dp = ds * dp;
  k.ddp = dds * dp;
  k.th = r0 + sv * dr;
  k.dth = ds * dr;
  return k;
}

GroundTruthSample from_kinematics(const Kinematics& k, const Vector3& gravity) {
  GroundTruthSample out;
  const Rot3 R = so3_exp<double>(k.th);
  const Matrix3 Rt = R.matrix().transpose();
  out.pose = Pose3(R, k.p);
  out.world_velocity = k.dp;
  out.world_acceleration = k.ddp;
  out.body_velocity.head<3>() = Rt * k.dp;
  out.body_velocity.tail<3>() = so3_right_jacobian<double>(k.th) * k.dth;
  out.specific_force = Rt * (k.ddp - gravity);
  return out;
}

std::int64_t to_micros(double t) { return static_cast<std::int64_t>(std::llround(t * 1e6)); }

}  // namespace

TrajectoryKind parse_trajectory_kind(const std::string& name) {
  if (name == "constant_twist") return TrajectoryKind::kConstantTwist;
  if (name == "sinusoidal_6dof") return TrajectoryKind::kSinusoidal6Dof;
  if (name == "figure_eight") return TrajectoryKind::kFigureEight;
  if (name == "piecewise_smooth") return TrajectoryKind::kPiecewiseSmooth;
  throw ConfigError("unknown trajectory kind '" + name + "'");
}

const char* to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kConstantTwist: return "constant_twist";
    case TrajectoryKind::kSinusoidal6Dof: return "sinusoidal_6dof";
    case TrajectoryKind::kFigureEight: return "figure_eight";
    case TrajectoryKind::kPiecewiseSmooth: return "piecewise_smooth";
  }
  return "unknown";
}

void TrajectorySpec::validate() const {
  if (!(duration > 0.0)) throw ConfigError("trajectory duration must be positive");
  if (kind == TrajectoryKind::kFigureEight && !(figure_period > 0.0))
    throw ConfigError("figure_eight period must be positive");
  if (kind == TrajectoryKind::kPiecewiseSmooth && !(segment_duration > 0.0))
    throw ConfigError("piecewise_smooth segment duration must be positive");
  if (kind == TrajectoryKind::kSinusoidal6Dof &&
      rotation_amplitude.lpNorm<1>() >= std::numbers::pi)
    throw ConfigError("sinusoidal rotation amplitude must keep the rotation vector below pi");
}

GroundTruthSample ground_truth(const TrajectorySpec& spec, double t, const Vector3& gravity) {
  if (t < 0.0 || t > spec.duration + 1e-9) throw ExtrapolationError("ground_truth: t out of range");
  switch (spec.kind) {
    case TrajectoryKind::kConstantTwist: {
      GroundTruthSample out;
      out.pose = spec.initial_pose * se3_exp<double>(Twist(t * spec.twist));
      const Matrix3& R = out.pose.rotation().matrix();
      const Vector3 v = spec.twist.head<3>();
      const Vector3 w = spec.twist.tail<3>();
      out.body_velocity = spec.twist;
      out.world_velocity = R * v;
      out.world_acceleration = R * w.cross(v);
      out.specific_force = w.cross(v) - R.transpose() * gravity;
      return out;
    }
    case TrajectoryKind::kSinusoidal6Dof: return from_kinematics(sinusoidal(spec, t), gravity);
    case TrajectoryKind::kFigureEight: return from_kinematics(figure_eight(spec, t), gravity);
    case TrajectoryKind::kPiecewiseSmooth:
      return from_kinematics(piecewise_smooth(spec, t), gravity);
  }
  throw ConfigError("unknown trajectory kind");
}

CameraModel SensorRig::default_camera() {
  // Camera looks along body +x: z_c = x_b, x_c = -y_b, y_c = -z_b.
  Matrix3 R_bc;
  R_bc << 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0;
  return CameraModel::pinhole(250.0, 250.0, 173.0, 130.0, Pose3(Rot3(R_bc), Vector3::Zero()),
                              346, 260);
}

void SensorRig::validate() const {
  camera.validate();
  noise.validate();
  if (!(imu_rate > 0.0) || !(track_rate > 0.0)) throw ConfigError("sensor rates must be positive");
  if (!(pixel_sigma >= 0.0)) throw ConfigError("pixel sigma must be non-negative");
  if (!(track_jitter >= 0.0 && track_jitter < 1.0))
    throw ConfigError("track jitter must be in [0, 1)");
  if (!(max_track_duration > 0.0)) throw ConfigError("max track duration must be positive");
  if (!(min_depth > 0.0)) throw ConfigError("minimum depth must be positive");
}

std::vector<ImuSample> synthesize_imu(const TrajectorySpec& spec, const SensorRig& rig,
                                      std::uint64_t seed) {
  spec.validate();
  rig.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian3 = [&] {
    const double x = normal(rng);
    const double y = normal(rng);
    const double z = normal(rng);
    return Vector3(x, y, z);
  };

  const double dt = 1.0 / rig.imu_rate;
  const auto count = static_cast<std::size_t>(std::floor(spec.duration * rig.imu_rate + 1e-9)) + 1;
  const double gyro_std = rig.noise.gyro_noise_density * std::sqrt(rig.imu_rate);
  const double accel_std = rig.noise.accel_noise_density * std::sqrt(rig.imu_rate);
  const double gyro_walk = rig.noise.gyro_bias_walk * std::sqrt(dt);
  const double accel_walk = rig.noise.accel_bias_walk * std::sqrt(dt);

  ImuBias bias = rig.initial_bias;
  std::vector<ImuSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / rig.imu_rate;
    const GroundTruthSample gt = ground_truth(spec, t, rig.noise.gravity);
    ImuSample s;
    s.stamp = t;
    s.gyro = gt.body_velocity.tail<3>() + bias.gyro;
    s.accel = gt.specific_force + bias.accel;
    if (rig.imu_noise) {
      s.gyro += gyro_std * gaussian3();
      s.accel += accel_std * gaussian3();
    }
    if (rig.bias_random_walk) {
      bias.gyro += gyro_walk * gaussian3();
      bias.accel += accel_walk * gaussian3();
    }
    out.push_back(s);
  }
  return out;
}

std::vector<Landmark> generate_landmarks(const LandmarkFieldConfig& cfg, std::uint64_t seed) {
  if (cfg.count < 0) throw ConfigError("landmark count must be non-negative");
  if ((cfg.box_max - cfg.box_min).minCoeff() <= 0.0) throw ConfigError("landmark box is empty");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Landmark> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < cfg.count) {
    if (++attempts > 1000 * (cfg.count + 1)) throw ConfigError("landmark box too small");
    Vector3 p;
    for (int i = 0; i < 3; ++i) p[i] = cfg.box_min[i] + unit(rng) * (cfg.box_max[i] - cfg.box_min[i]);
    if (p.norm() < cfg.min_range) continue;
    out.push_back(Landmark{static_cast<std::int64_t>(out.size()), p});
  }
  return out;
}

std::vector<FeatureObservation> synthesize_tracks(const TrajectorySpec& spec,
                                                  const SensorRig& rig,
                                                  std::span<const Landmark> landmarks,
                                                  std::uint64_t seed) {
  spec.validate();
  rig.validate();
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  constexpr std::int64_t kSegmentsPerLandmark = 100000;
  const double period = 1.0 / rig.track_rate;
  std::set<std::int64_t> used;
  std::vector<FeatureObservation> out;

  for (const Landmark& lm : landmarks) {
    double t = period * 0.5 * (1.0 + unit(rng));
    std::int64_t segment = -1;
    bool active = false;
    double track_start = 0.0;
    while (t <= spec.duration) {
      // Stamps live on a 1 us grid and never collide across tracks.
      std::int64_t us = to_micros(t);
      while (used.count(us) != 0) ++us;
      const double stamp = static_cast<double>(us) * 1e-6;
      if (stamp > spec.duration) break;

      const Pose3 pose = ground_truth(spec, stamp, rig.noise.gravity).pose;
      const Vector3 pc = (pose * rig.camera.body_to_camera).inverse() * lm.position;
      bool visible = pc.z() > rig.min_depth;
      Vector2 pixel = Vector2::Zero();
      if (visible) {
        pixel = project_camera_point(rig.camera, pc).pixel;
        visible = rig.camera.in_image(pixel);
      }
      if (!visible) {
        active = false;
      } else {
        if (!active || stamp - track_start > rig.max_track_duration) {
          ++segment;
          active = true;
          track_start = stamp;
        }
        const double nx = normal(rng);
        const double ny = normal(rng);
        FeatureObservation obs;
        obs.track_id = lm.id * kSegmentsPerLandmark + segment;
        obs.stamp = stamp;
        obs.pixel = pixel + rig.pixel_sigma * Vector2(nx, ny);
        used.insert(us);
        out.push_back(obs);
      }
      t = stamp + period * (1.0 + rig.track_jitter * unit(rng));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const FeatureObservation& a, const FeatureObservation& b) { return a.stamp < b.stamp; });
  return out;
}

Dataset simulate(const ScenarioConfig& cfg) {
  Dataset data;
  data.imu = synthesize_imu(cfg.trajectory, cfg.rig, cfg.seed);
  data.landmarks = generate_landmarks(cfg.field, cfg.seed);
  data.tracks = synthesize_tracks(cfg.trajectory, cfg.rig, data.landmarks, cfg.seed);
  data.ground_truth.reserve(data.imu.size());
  for (const ImuSample& s : data.imu)
    data.ground_truth.push_back({s.stamp, ground_truth(cfg.trajectory, s.stamp).pose});

  const GroundTruthSample gt0 = ground_truth(cfg.trajectory, 0.0, cfg.rig.noise.gravity);
  data.initial.stamp = 0.0;
  data.initial.pose = gt0.pose;
  data.initial.world_velocity = gt0.world_velocity;
  data.initial.body_rate = gt0.body_velocity.tail<3>();
  data.initial.bias = cfg.rig.initial_bias;
  return data;
}

namespace {

constexpr const char* kInitHeader =
    "stamp,tx,ty,tz,qx,qy,qz,qw,vx,vy,vz,wx,wy,wz,bax,bay,baz,bgx,bgy,bgz";

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  write_imu_csv(dir / "imu.csv", data.imu);
  write_tracks_csv(dir / "tracks.csv", data.tracks);
  write_tum(dir / "groundtruth.txt", data.ground_truth);

  std::ofstream os(dir / "init.csv");
  if (!os) throw ConfigError("cannot write " + (dir / "init.csv").string());
  io::set_full_precision(os);
  const InitialState& s = data.initial;
  const Eigen::Quaterniond q = s.pose.rotation().quaternion();
  const Vector3& t = s.pose.translation();
  os << kInitHeader << '\n'
     << s.stamp << ',' << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.x() << ',' << q.y()
     << ',' << q.z() << ',' << q.w() << ',' << s.world_velocity.x() << ','
     << s.world_velocity.y() << ',' << s.world_velocity.z() << ',' << s.body_rate.x() << ','
     << s.body_rate.y() << ',' << s.body_rate.z() << ',' << s.bias.accel.x() << ','
     << s.bias.accel.y() << ',' << s.bias.accel.z() << ',' << s.bias.gyro.x() << ','
     << s.bias.gyro.y() << ',' << s.bias.gyro.z() << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset data;
  data.imu = read_imu_csv(dir / "imu.csv");
  data.tracks = read_tracks_csv(dir / "tracks.csv");
  data.ground_truth = read_tum(dir / "groundtruth.txt");
  int rows = 0;
  io::for_each_csv_row(dir / "init.csv", kInitHeader, 20, [&](std::span<const double> f) {
    InitialState& s = data.initial;
    s.stamp = f[0];
    s.pose = Pose3(Rot3::from_quaternion(Eigen::Quaterniond(f[7], f[4], f[5], f[6])),
                   Vector3(f[1], f[2], f[3]));
    s.world_velocity = Vector3(f[8], f[9], f[10]);
    s.body_rate = Vector3(f[11], f[12], f[13]);
    s.bias.accel = Vector3(f[14], f[15], f[16]);
    s.bias.gyro = Vector3(f[17], f[18], f[19]);
    ++rows;
  });
  if (rows != 1) throw ConfigError((dir / "init.csv").string() + ": expected one state row");
  if (data.imu.size() < 2) throw ConfigError("dataset has fewer than two IMU samples");
  return data;
}

}  // namespace gpvio
