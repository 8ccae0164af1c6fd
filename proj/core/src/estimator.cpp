#include "gpvio/estimator.hpp"

#include "gpvio/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gpvio {

namespace {

constexpr double kStampEps = 1e-9;

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

Eigen::VectorXd diagonal_covariance(std::initializer_list<std::pair<int, double>> blocks) {
  int n = 0;
  for (const auto& [count, sigma] : blocks) n += count;
  Eigen::VectorXd d(n);
  int o = 0;
  for (const auto& [count, sigma] : blocks) {
    d.segment(o, count).setConstant(sigma * sigma);
    o += count;
  }
  return d;
}

}  // namespace

Backend parse_backend(const std::string& name) {
  if (name == "ct_imu" || name == "CT_IMU") return Backend::kCtImu;
  if (name == "gp_imu" || name == "GP_IMU") return Backend::kGpImu;
  throw ConfigError("unknown backend '" + name + "' (expected ct_imu or gp_imu)");
}

const char* to_string(Backend backend) {
  return backend == Backend::kCtImu ? "ct_imu" : "gp_imu";
}

int knot_dimension(Backend backend) { return backend == Backend::kCtImu ? 18 : 15; }

InitMode parse_init_mode(const std::string& name) {
  if (name == "ground_truth") return InitMode::kGroundTruth;
  if (name == "rest") return InitMode::kRest;
  throw ConfigError("unknown init mode '" + name + "' (expected ground_truth or rest)");
}

const char* to_string(InitMode mode) {
  return mode == InitMode::kGroundTruth ? "ground_truth" : "rest";
}

void WindowConfig::validate() const {
  if (!(knot_interval > 0.0)) throw ConfigError("knot_interval must be positive");
  if (min_window_size < 2) throw ConfigError("min_window_size must be at least 2");
  solver.validate();
}

void EstimatorConfig::validate() const {
  window.validate();
  noise.validate();
  wnoa.validate();
  kernel.validate();
  camera.validate();
  if (!(pixel_noise.sigma > 0.0) || !(pixel_noise.huber_delta > 0.0))
    throw ConfigError("pixel sigma and Huber delta must be positive");
  if (min_track_observations < 2) throw ConfigError("min_track_observations must be at least 2");
  if (!(bias_refit_gyro > 0.0) || !(bias_refit_accel > 0.0))
    throw ConfigError("bias refit thresholds must be positive");
  const AnchorConfig& a = anchor;
  if (!(a.rotation_sigma > 0.0) || !(a.position_sigma > 0.0) || !(a.velocity_sigma > 0.0) ||
      !(a.angular_rate_sigma > 0.0) || !(a.accel_bias_sigma > 0.0) || !(a.gyro_bias_sigma > 0.0))
    throw ConfigError("anchor sigmas must be positive");
}

// ---------------------------------------------------------------------------

SlidingWindowEstimator::SlidingWindowEstimator(EstimatorConfig cfg, const InitialState& init)
    : cfg_(std::move(cfg)), camera_(std::make_shared<CameraModel>(cfg_.camera)), t0_(init.stamp) {
  cfg_.validate();
  const bool ct = cfg_.window.backend == Backend::kCtImu;
  values_.insert(pose_key(0), init.pose);
  values_.insert(bias_key(0), Eigen::VectorXd(init.bias.vector()));
  if (ct) {
    Twist w;
    w << init.pose.rotation().matrix().transpose() * init.world_velocity, init.body_rate;
    values_.insert(twist_key(0), Eigen::VectorXd(w));
  } else {
    values_.insert(velocity_key(0), Eigen::VectorXd(init.world_velocity));
  }

  const AnchorConfig& a = cfg_.anchor;
  anchors_.push_back(make_prior(
      pose_key(0), values_,
      diagonal_covariance({{3, a.position_sigma}, {3, a.rotation_sigma}}).asDiagonal().toDenseMatrix()));
  if (ct) {
    anchors_.push_back(make_prior(
        twist_key(0), values_,
        diagonal_covariance({{3, a.velocity_sigma}, {3, a.angular_rate_sigma}}).asDiagonal().toDenseMatrix()));
  } else {
    anchors_.push_back(make_prior(
        velocity_key(0), values_,
        diagonal_covariance({{3, a.velocity_sigma}}).asDiagonal().toDenseMatrix()));
  }
  anchors_.push_back(make_prior(
      bias_key(0), values_,
      diagonal_covariance({{3, a.accel_bias_sigma}, {3, a.gyro_bias_sigma}}).asDiagonal().toDenseMatrix()));
}

double SlidingWindowEstimator::knot_stamp(std::int64_t k) const {
  return t0_ + static_cast<double>(k) * cfg_.window.knot_interval;
}

int SlidingWindowEstimator::num_landmarks() const {
  int m = 0;
  for (const Key& k : values_.keys())
    if (k.kind == VarKind::kLandmark) ++m;
  return m;
}

int SlidingWindowEstimator::expected_dimension() const {
  return num_knots() * knot_dimension(cfg_.window.backend) + 3 * num_landmarks();
}

ImuState SlidingWindowEstimator::knot_state(std::int64_t k) const {
  ImuState s;
  s.stamp = knot_stamp(k);
  s.pose = values_.pose(pose_key(k));
  s.bias = ImuBias::from_vector(values_.vector(bias_key(k)));
  if (cfg_.window.backend == Backend::kCtImu) {
    s.velocity = s.pose.rotation() * Vector3(values_.vector(twist_key(k)).head<3>());
  } else {
    s.velocity = values_.vector(velocity_key(k));
  }
  return s;
}

std::vector<StampedPose> SlidingWindowEstimator::trajectory() const {
  std::vector<StampedPose> out = emitted_;
  for (std::int64_t k = first_; k <= last_; ++k)
    out.push_back({knot_stamp(k), values_.pose(pose_key(k))});
  return out;
}

SlidingWindowEstimator::Interval SlidingWindowEstimator::integrate_interval(
    std::int64_t k, const ImuBias& bias) const {
  const std::vector<ImuSample> slice = slice_samples(imu_, knot_stamp(k), knot_stamp(k + 1));
  Interval iv;
  if (cfg_.window.backend == Backend::kCtImu) {
    iv.preint = integrate(slice, bias, cfg_.noise);
  } else {
    auto model = std::make_shared<LatentGpModel>(fit_latent(slice, bias, cfg_.kernel, cfg_.noise));
    iv.preint = to_preintegrated(*model, cfg_.noise);
    iv.model = std::move(model);
  }
  return iv;
}

void SlidingWindowEstimator::add_knot() {
  Stopwatch sw;
  const std::int64_t k = last_;
  const ImuBias bias = ImuBias::from_vector(values_.vector(bias_key(k)));
  Interval iv = integrate_interval(k, bias);
  const ImuState next = predict(knot_state(k), iv.preint);
  const double t1 = knot_stamp(k + 1);

  values_.insert(pose_key(k + 1), next.pose);
  values_.insert(bias_key(k + 1), Eigen::VectorXd(bias.vector()));
  if (cfg_.window.backend == Backend::kCtImu) {
    Twist w;
    w << next.pose.rotation().matrix().transpose() * next.velocity,
        sample_at(imu_, t1).gyro - bias.gyro;
    values_.insert(twist_key(k + 1), Eigen::VectorXd(w));
    iv.segment = std::make_shared<WnoaSegmentCache>(k, knot_stamp(k), t1);
  } else {
    values_.insert(velocity_key(k + 1), Eigen::VectorXd(next.velocity));
  }
  intervals_.push_back(std::move(iv));
  ++last_;
  pending_preint_ms_ += sw.ms();
}

void SlidingWindowEstimator::refresh_queries(std::int64_t k) {
  if (cfg_.window.backend != Backend::kGpImu) return;
  const LatentGpModel& model = *interval(k).model;
  for (auto& [id, track] : tracks_)
    for (TrackObservation& o : track.observations)
      if (o.interval == k) o.query = query(model, o.obs.stamp, false);
}

void SlidingWindowEstimator::push_measurements(std::span<const ImuSample> imu,
                                               std::span<const FeatureObservation> observations,
                                               double now) {
  for (const ImuSample& s : imu) {
    if (!imu_.empty() && s.stamp <= imu_.back().stamp) {
      if (s.stamp < imu_.back().stamp) throw OrderingError("IMU samples pushed out of order");
      continue;
    }
    imu_.push_back(s);
  }
  const double window_start = knot_stamp(first_);
  for (const FeatureObservation& o : observations) {
    Track& track = tracks_[o.track_id];
    const bool dead = track.state == TrackState::kRejected || track.state == TrackState::kClosed;
    if (dead || o.stamp < window_start - kStampEps) {
      ++stats_.dropped_observations;
      continue;
    }
    if (!track.future.empty() && o.stamp <= track.future.back().stamp)
      throw OrderingError("feature observations pushed out of order");
    track.future.push_back(o);
  }

  while (knot_stamp(last_ + 1) <= now + kStampEps && !imu_.empty() &&
         imu_.back().stamp >= knot_stamp(last_ + 1) - kStampEps)
    add_knot();

  associate_pending();
  try_triangulation();
}

void SlidingWindowEstimator::associate_pending() {
  if (last_ == first_) return;
  Stopwatch sw;
  const double start = knot_stamp(first_);
  const double end = knot_stamp(last_);
  for (auto& [id, track] : tracks_) {
    if (track.future.empty()) continue;
    std::size_t used = 0;
    for (const FeatureObservation& o : track.future) {
      if (o.stamp > end + kStampEps) break;
      ++used;
      if (o.stamp < start - kStampEps) {
        ++stats_.dropped_observations;
        continue;
      }
      TrackObservation to;
      to.obs = o;
      const auto offset =
          static_cast<std::int64_t>(std::floor((o.stamp - start) / cfg_.window.knot_interval));
      to.interval = std::clamp(first_ + offset, first_, last_ - 1);
      if (cfg_.window.backend == Backend::kGpImu)
        to.query = query(*interval(to.interval).model, o.stamp, false);
      track.observations.push_back(std::move(to));
    }
    track.future.erase(track.future.begin(), track.future.begin() + static_cast<std::ptrdiff_t>(used));
  }
  pending_preint_ms_ += sw.ms();
}

Pose3 SlidingWindowEstimator::body_pose_at(const TrackObservation& o) const {
  const double tk = knot_stamp(o.interval);
  const double dt = cfg_.window.knot_interval;
  const double offset = std::clamp(o.obs.stamp - tk, 0.0, dt);
  if (cfg_.window.backend == Backend::kCtImu)
    return interval(o.interval).segment->get(values_).pose_at(WnoaBlend(dt, offset)).pose;
  return interpolate_pose(values_.pose(pose_key(o.interval)),
                          Vector3(values_.vector(velocity_key(o.interval))), *o.query, offset,
                          cfg_.noise.gravity)
      .pose;
}

void SlidingWindowEstimator::try_triangulation() {
  for (auto& [id, track] : tracks_) {
    if (track.state != TrackState::kPending) continue;
    if (static_cast<int>(track.observations.size()) < cfg_.min_track_observations) continue;
    std::vector<Pose3> poses;
    std::vector<Vector2> pixels;
    for (const TrackObservation& o : track.observations) {
      poses.push_back(body_pose_at(o) * cfg_.camera.body_to_camera);
      pixels.push_back(o.obs.pixel);
    }
    const TriangulationResult tri = triangulate(poses, pixels, cfg_.camera, cfg_.triangulation);
    if (tri.status == TriangulationStatus::kOk) {
      values_.insert(landmark_key(id), Eigen::VectorXd(tri.position));
      track.state = TrackState::kActive;
      ++stats_.triangulated_tracks;
    } else if (tri.status == TriangulationStatus::kRejected) {
      track.state = TrackState::kRejected;
      track.observations.clear();
      track.future.clear();
      ++stats_.rejected_tracks;
    }
  }
}

std::vector<FactorPtr> SlidingWindowEstimator::build_problem() const {
  std::vector<FactorPtr> factors = anchors_;
  if (prior_) factors.push_back(prior_);
  const bool ct = cfg_.window.backend == Backend::kCtImu;
  for (std::int64_t k = first_; k < last_; ++k) {
    if (ct) {
      factors.push_back(
          std::make_shared<WnoaPriorFactor>(k, knot_stamp(k), knot_stamp(k + 1), cfg_.wnoa));
      factors.push_back(
          std::make_shared<ImuFactor>(k, ImuFactor::Velocity::kBodyTwist, interval(k).preint));
    } else {
      factors.push_back(
          std::make_shared<ImuFactor>(k, ImuFactor::Velocity::kWorld, interval(k).preint));
    }
  }
  for (const auto& [id, track] : tracks_) {
    if (track.state != TrackState::kActive) continue;
    for (const TrackObservation& o : track.observations) {
      if (ct) {
        factors.push_back(std::make_shared<CtProjectionFactor>(
            interval(o.interval).segment, o.obs.stamp, id, o.obs.pixel, camera_, cfg_.pixel_noise));
      } else {
        factors.push_back(std::make_shared<GpProjectionFactor>(
            o.interval, *o.query, o.obs.stamp - knot_stamp(o.interval), cfg_.noise.gravity, id,
            o.obs.pixel, camera_, cfg_.pixel_noise));
      }
    }
  }
  return factors;
}

void SlidingWindowEstimator::refit_stale_intervals() {
  Stopwatch sw;
  for (std::int64_t k = first_; k < last_; ++k) {
    const ImuBias current = ImuBias::from_vector(values_.vector(bias_key(k)));
    const ImuBias& lin = interval(k).preint.bias_lin;
    const double dg = (current.gyro - lin.gyro).cwiseAbs().maxCoeff();
    const double da = (current.accel - lin.accel).cwiseAbs().maxCoeff();
    if (dg <= cfg_.bias_refit_gyro && da <= cfg_.bias_refit_accel) continue;
    Interval fresh = integrate_interval(k, current);
    fresh.segment = interval(k).segment;
    interval(k) = std::move(fresh);
    refresh_queries(k);
    ++stats_.bias_refits;
  }
  pending_preint_ms_ += sw.ms();
}

SolveReport SlidingWindowEstimator::solve() {
  refit_stale_intervals();
  const std::vector<FactorPtr> factors = build_problem();
  const int expected = expected_dimension();
  int dim = 0;
  for (const Key& k : values_.keys()) dim += tangent_dim(k.kind);
  if (dim != expected) {
    std::ostringstream os;
    os << "window dimension " << dim << " != " << num_knots() << "x"
       << knot_dimension(cfg_.window.backend) << " + " << num_landmarks() << "x3";
    throw std::logic_error(os.str());
  }
  SolveReport report = gpvio::solve(factors, values_, cfg_.window.solver);
  if (report.state_dim != expected) {
    std::ostringstream os;
    os << "problem dimension " << report.state_dim << " != expected " << expected;
    throw std::logic_error(os.str());
  }
  if (report.stalled) ++stats_.stalled_solves;
  return report;
}

int SlidingWindowEstimator::marginalize_if_needed() {
  int removed = 0;
  while (num_knots() > cfg_.window.min_window_size) {
    marginalize_oldest();
    ++removed;
  }
  return removed;
}

void SlidingWindowEstimator::marginalize_oldest() {
  const std::int64_t k0 = first_;
  const bool ct = cfg_.window.backend == Backend::kCtImu;
  std::set<Key> marg = {pose_key(k0), ct ? twist_key(k0) : velocity_key(k0), bias_key(k0)};
  for (const auto& [id, track] : tracks_) {
    if (track.state != TrackState::kActive || !track.future.empty()) continue;
    const bool all_here = std::all_of(track.observations.begin(), track.observations.end(),
                                      [&](const TrackObservation& o) { return o.interval == k0; });
    if (all_here) marg.insert(landmark_key(id));
  }

  const std::vector<FactorPtr> factors = build_problem();
  MarginalizationResult result = marginalize(factors, values_, marg);
  if (result.floored) ++stats_.marginal_floor_warnings;
  const bool old_prior_kept =
      prior_ && std::find(result.remaining.begin(), result.remaining.end(),
                          std::static_pointer_cast<const Factor>(prior_)) != result.remaining.end();
  if (old_prior_kept) throw std::logic_error("previous marginal prior is disconnected from the oldest knot");
  prior_ = result.prior;
  anchors_.clear();

  emitted_.push_back({knot_stamp(k0), values_.pose(pose_key(k0))});
  for (const Key& k : marg) values_.erase(k);
  for (auto it = tracks_.begin(); it != tracks_.end();) {
    Track& track = it->second;
    if (marg.count(landmark_key(it->first)) != 0) {
      track.state = TrackState::kClosed;
      track.observations.clear();
    } else {
      std::erase_if(track.observations,
                    [&](const TrackObservation& o) { return o.interval == k0; });
    }
    const bool idle = track.observations.empty() && track.future.empty();
    if (idle && track.state == TrackState::kPending) {
      it = tracks_.erase(it);
    } else {
      ++it;
    }
  }
  intervals_.pop_front();
  ++first_;
  trim_imu();
}

void SlidingWindowEstimator::trim_imu() {
  const double keep_from = knot_stamp(first_) - cfg_.window.knot_interval;
  auto it = std::lower_bound(imu_.begin(), imu_.end(), keep_from,
                             [](const ImuSample& s, double t) { return s.stamp < t; });
  if (it != imu_.begin()) --it;
  imu_.erase(imu_.begin(), it);
}

StepTiming SlidingWindowEstimator::step(std::span<const ImuSample> imu,
                                        std::span<const FeatureObservation> observations,
                                        double now) {
  Stopwatch total;
  pending_preint_ms_ = 0.0;
  push_measurements(imu, observations, now);

  StepTiming t;
  t.stamp = knot_stamp(last_);
  const double preint_before_solve = pending_preint_ms_;
  Stopwatch solve_sw;
  const SolveReport report = solve();
  const double solve_wall = solve_sw.ms();
  t.solve_ms = solve_wall - (pending_preint_ms_ - preint_before_solve);
  t.factors = build_problem().size();
  t.iterations = report.iterations;
  t.stalled = report.stalled;
  t.final_cost = report.final_cost;
  t.state_dim = report.state_dim;
  t.knots = num_knots();
  t.landmarks = num_landmarks();

  Stopwatch marg_sw;
  marginalize_if_needed();
  t.marg_ms = marg_sw.ms();
  t.preint_ms = pending_preint_ms_;
  t.other_ms = std::max(0.0, total.ms() - t.solve_ms - t.marg_ms - t.preint_ms);
  return t;
}

// ---------------------------------------------------------------------------

RunResult run_estimator(const Dataset& data, const EstimatorConfig& cfg, InitMode init,
                        const std::function<void(const StepTiming&)>& on_step) {
  RunResult result;
  result.backend = cfg.window.backend;
  if (data.imu.size() < 2) throw ConfigError("dataset has no IMU stream");

  InitialState start = data.initial;
  if (init == InitMode::kRest) {
    start.pose = Pose3();
    start.world_velocity.setZero();
    start.body_rate.setZero();
    start.bias = ImuBias();
  }
  SlidingWindowEstimator est(cfg, start);

  const double dt = cfg.window.knot_interval;
  const auto steps =
      static_cast<std::int64_t>(std::floor((data.imu.back().stamp - start.stamp) / dt + 1e-9));
  std::size_t i = 0;
  std::size_t j = 0;
  while (j < data.tracks.size() && data.tracks[j].stamp < start.stamp) ++j;
  std::vector<ImuSample> imu_batch;
  std::vector<FeatureObservation> obs_batch;
  for (std::int64_t s = 1; s <= steps; ++s) {
    const double now = start.stamp + static_cast<double>(s) * dt;
    imu_batch.clear();
    obs_batch.clear();
    while (i < data.imu.size() && data.imu[i].stamp <= now + kStampEps)
      imu_batch.push_back(data.imu[i++]);
    // One sample past `now` lets the knot boundary be interpolated.
    if (i < data.imu.size() && (imu_batch.empty() || imu_batch.back().stamp < now - kStampEps))
      imu_batch.push_back(data.imu[i++]);
    while (j < data.tracks.size() && data.tracks[j].stamp <= now)
      obs_batch.push_back(data.tracks[j++]);

    try {
      const StepTiming t = est.step(imu_batch, obs_batch, now);
      result.steps.push_back(t);
      result.totals.optimization_ms += t.solve_ms;
      result.totals.marginalization_ms += t.marg_ms;
      result.totals.preintegration_ms += t.preint_ms;
      result.totals.others_ms += t.other_ms;
      if (on_step) on_step(t);
    } catch (const Error& e) {
      result.failed = true;
      result.failure = e.what();
      break;
    }
  }
  result.trajectory = est.trajectory();
  result.stats = est.stats();
  return result;
}

void write_timing_csv(const std::filesystem::path& path, std::span<const StepTiming> steps) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << "stamp,factors,solve_ms,marg_ms\n";
  os.precision(9);
  for (const StepTiming& t : steps)
    os << t.stamp << ',' << t.factors << ',' << t.solve_ms << ',' << t.marg_ms << '\n';
}

}  // namespace gpvio
