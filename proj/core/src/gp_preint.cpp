#include "gpvio/gp_preint.hpp"

#include "gpvio/errors.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace gpvio {

namespace {

constexpr double kSqrtPi = 1.7724538509055160273;
constexpr double kStampTolerance = 1e-9;

/// int_0^x erf(y) dy
double erf_integral(double x) { return x * std::erf(x) + std::expm1(-x * x) / kSqrtPi; }

/// Composite 15-point Gauss-Legendre over panels no wider than `panel`.
template <typename F>
double integrate_panels(F&& f, double a, double b, double panel) {
  const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / panel)));
  const double h = (b - a) / panels;
  double sum = 0.0;
  for (int i = 0; i < panels; ++i) {
    sum += boost::math::quadrature::gauss<double, 15>::integrate(f, a + i * h, a + (i + 1) * h);
  }
  return sum;
}

void check_span(const LatentGpModel& model, double tau) {
  if (tau < model.anchor_stamp() - kStampTolerance || tau > model.end_stamp() + kStampTolerance) {
    std::ostringstream os;
    os << "GP query at " << tau << " outside [" << model.anchor_stamp() << ", "
       << model.end_stamp() << "]";
    throw ExtrapolationError(os.str());
  }
}

double mean_square(const Eigen::MatrixX3d& m) {
  return m.squaredNorm() / static_cast<double>(m.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

double SeKernel::operator()(double t, double s) const {
  const double d = (t - s) / lengthscale;
  return variance * std::exp(-0.5 * d * d);
}

double SeKernel::integral(double a, double tau, double s) const {
  const double c = std::numbers::sqrt2 * lengthscale;
  return variance * 0.5 * kSqrtPi * c * (std::erf((tau - s) / c) - std::erf((a - s) / c));
}

double SeKernel::double_integral(double a, double tau, double s) const {
  const double c = std::numbers::sqrt2 * lengthscale;
  const double lo = (a - s) / c;
  const double hi = (tau - s) / c;
  return variance * 0.5 * kSqrtPi * c *
         (c * (erf_integral(hi) - erf_integral(lo)) - (tau - a) * std::erf(lo));
}

double SeKernel::integral_variance(double a, double tau) const {
  const double c = std::numbers::sqrt2 * lengthscale;
  return variance * kSqrtPi * c * c * erf_integral((tau - a) / c);
}

// ---------------------------------------------------------------------------
// Fit
// ---------------------------------------------------------------------------

void GpKernelConfig::validate() const {
  auto positive = [](const std::optional<double>& v) { return !v || *v > 0.0; };
  if (!positive(lengthscale_r) || !positive(variance_r) || !positive(lengthscale_a) ||
      !positive(variance_a) || !positive(sigma_r) || !positive(sigma_a))
    throw ConfigError("GP kernel hyperparameters must be positive");
  if (num_latent < 2) throw ConfigError("GP preintegration needs at least two latent states");
  if (num_latent > kMaxLatentStates) throw ConfigError("too many GP latent states");
  if (max_iters < 1 || !(tolerance > 0.0)) throw ConfigError("invalid GP fixed-point settings");
}

Vector3 LatentGpModel::rate(double t) const {
  Vector3 out = Vector3::Zero();
  for (std::size_t j = 0; j < stamps_.size(); ++j)
    out += kernel_r_(t, stamps_[j]) * weights_r_.row(static_cast<Eigen::Index>(j)).transpose();
  return out + mean_r_;
}

Vector3 LatentGpModel::acceleration(double t) const {
  Vector3 out = Vector3::Zero();
  for (std::size_t j = 0; j < stamps_.size(); ++j)
    out += kernel_a_(t, stamps_[j]) * weights_a_.row(static_cast<Eigen::Index>(j)).transpose();
  return out + mean_a_;
}

LatentGpModel fit_latent(std::span<const ImuSample> samples, const ImuBias& bias,
                         const GpKernelConfig& cfg, const ImuNoiseConfig& noise) {
  cfg.validate();
  if (samples.size() < 2) throw StreamError("GP fit needs at least two IMU samples");
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (!(samples[i].stamp > samples[i - 1].stamp))
      throw StreamError("IMU sample stamps must be strictly increasing");

  const double t0 = samples.front().stamp;
  const double span = samples.back().stamp - t0;
  const int n = cfg.num_latent;

  LatentGpModel m;
  m.bias_ = bias;
  m.stamps_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) m.stamps_[static_cast<std::size_t>(i)] = t0 + span * i / (n - 1);
  m.stamps_.back() = samples.back().stamp;

  Eigen::MatrixX3d omega(n, 3);
  Eigen::MatrixX3d force(n, 3);
  for (int i = 0; i < n; ++i) {
    const ImuSample s = sample_at(samples, m.stamps_[static_cast<std::size_t>(i)]);
    omega.row(i) = (s.gyro - bias.gyro).transpose();
    force.row(i) = (s.accel - bias.accel).transpose();
  }

  // Constant prior means; the kernels model the centered signals.
  const auto centered = [](const Eigen::MatrixX3d& x, const Vector3& mu) -> Eigen::MatrixX3d {
    return x.rowwise() - mu.transpose();
  };

  const double spacing = span / static_cast<double>(samples.size() - 1);
  const double density = static_cast<double>(n) / span;
  m.kernel_r_.lengthscale = cfg.lengthscale_r.value_or(3.0 * spacing);
  m.kernel_a_.lengthscale = cfg.lengthscale_a.value_or(3.0 * spacing);
  m.kernel_r_.variance = cfg.variance_r.value_or(std::max(mean_square(omega), 1e-6));
  m.kernel_a_.variance = cfg.variance_a.value_or(std::max(mean_square(force), 1e-6));
  m.sigma_r_ = cfg.sigma_r.value_or(noise.gyro_noise_density * std::sqrt(density));
  m.sigma_a_ = cfg.sigma_a.value_or(noise.accel_noise_density * std::sqrt(density));

  auto gram = [&](const SeKernel& k, double sigma) {
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j)
        K(i, j) = K(j, i) = k(m.stamps_[static_cast<std::size_t>(i)],
                              m.stamps_[static_cast<std::size_t>(j)]);
    K.diagonal().array() += sigma * sigma;
    return K;
  };
  m.gram_r_.compute(gram(m.kernel_r_, m.sigma_r_));
  m.gram_a_.compute(gram(m.kernel_a_, m.sigma_a_));
  if (m.gram_r_.info() != Eigen::Success || m.gram_a_.info() != Eigen::Success)
    throw FitError("GP Gram matrix is not positive definite");

  // A(i, j) = int_{t0}^{t_i} k_r(t, t_j) dt, so rotation vectors are
  // A * gram^-1 * (rho - mean) + (t_i - t0) * mean.
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      A(i, j) = m.kernel_r_.integral(t0, m.stamps_[static_cast<std::size_t>(i)],
                                     m.stamps_[static_cast<std::size_t>(j)]);

  Eigen::VectorXd elapsed(n);
  for (int i = 0; i < n; ++i) elapsed[i] = m.stamps_[static_cast<std::size_t>(i)] - t0;
  const auto rotation_vectors = [&](const Eigen::MatrixX3d& rates, const Vector3& mu) {
    return Eigen::MatrixX3d(A * m.gram_r_.solve(centered(rates, mu)) + elapsed * mu.transpose());
  };

  Eigen::MatrixX3d rho = omega;
  Eigen::MatrixX3d rotvec(n, 3);
  bool converged = false;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    rotvec = rotation_vectors(rho, rho.colwise().mean().transpose());
    Eigen::MatrixX3d next(n, 3);
    for (int i = 0; i < n; ++i) {
      const Vector3 r = rotvec.row(i).transpose();
      if (r.norm() >= std::numbers::pi)
        throw SingularityError("GP fit: rotation excursion reached pi within the span");
      next.row(i) = (so3_right_jacobian_inv<double>(r) * omega.row(i).transpose()).transpose();
    }
    const double change = (next - rho).cwiseAbs().maxCoeff();
    rho = next;
    m.iterations_ = it;
    if (change < cfg.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) throw FitError("GP latent fixed point did not converge");

  m.rho_ = rho;
  m.mean_r_ = rho.colwise().mean().transpose();
  m.weights_r_ = m.gram_r_.solve(centered(rho, m.mean_r_));
  rotvec = A * m.weights_r_ + elapsed * m.mean_r_.transpose();
  m.alpha_.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    const Vector3 r = rotvec.row(i).transpose();
    m.alpha_.row(i) = (so3_exp<double>(r) * Vector3(force.row(i).transpose())).transpose();
  }
  m.mean_a_ = m.alpha_.colwise().mean().transpose();
  m.weights_a_ = m.gram_a_.solve(centered(m.alpha_, m.mean_a_));
  return m;
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

GpPreintQuery query(const LatentGpModel& model, double tau, bool with_covariance) {
  check_span(model, tau);
  tau = std::clamp(tau, model.anchor_stamp(), model.end_stamp());
  const double a = model.anchor_stamp();
  const auto& t = model.latent_stamps();
  const Eigen::Index n = static_cast<Eigen::Index>(t.size());

  GpPreintQuery out;
  if (tau == a) return out;

  Eigen::VectorXd ur(n), ua(n), qa(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double s = t[static_cast<std::size_t>(j)];
    ur[j] = model.kernel_r().integral(a, tau, s);
    ua[j] = model.kernel_a().integral(a, tau, s);
    qa[j] = model.kernel_a().double_integral(a, tau, s);
  }
  const double d = tau - a;
  out.delta_r = model.weights_r().transpose() * ur + d * model.mean_r();
  out.delta_v = model.weights_a().transpose() * ua + d * model.mean_a();
  out.delta_p = model.weights_a().transpose() * qa + 0.5 * d * d * model.mean_a();
  if (!with_covariance) return out;

  const SeKernel& kr = model.kernel_r();
  const SeKernel& ka = model.kernel_a();
  const double panel = ka.lengthscale;
  const double var_r = kr.integral_variance(a, tau) - ur.dot(model.gram_r().solve(ur));

  // Prior covariance of [int f, int (tau - t) f] for the acceleration GP.
  const double vv = ka.integral_variance(a, tau);
  const double vp = integrate_panels(
      [&](double s) { return (tau - s) * ka.integral(a, tau, s); }, a, tau, panel);
  const double pp = integrate_panels(
      [&](double s) { return (tau - s) * ka.double_integral(a, tau, s); }, a, tau, panel);
  Eigen::MatrixX2d U(n, 2);
  U.col(0) = ua;
  U.col(1) = qa;
  Eigen::Matrix2d post;
  post << vv, vp, vp, pp;
  post -= U.transpose() * model.gram_a().solve(U);

  Matrix9 cov = Matrix9::Zero();
  cov.block<3, 3>(0, 0) = var_r * Matrix3::Identity();
  cov.block<3, 3>(3, 3) = post(0, 0) * Matrix3::Identity();
  cov.block<3, 3>(3, 6) = post(0, 1) * Matrix3::Identity();
  cov.block<3, 3>(6, 3) = post(1, 0) * Matrix3::Identity();
  cov.block<3, 3>(6, 6) = post(1, 1) * Matrix3::Identity();

  // Cancellation in prior - reduction can leave tiny negative eigenvalues.
  Eigen::SelfAdjointEigenSolver<Matrix9> es(cov);
  Vector9 ev = es.eigenvalues();
  const double floor = std::max(1e-18, 1e-12 * ev.cwiseAbs().maxCoeff());
  ev = ev.cwiseMax(floor);
  out.query_covariance = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

Rot3 query_rotation(const LatentGpModel& model, double tau) {
  return so3_exp<double>(query(model, tau, false).delta_r);
}

GpPoseInterpolation interpolate_pose(const Pose3& anchor_pose, const Vector3& anchor_velocity,
                                     const GpPreintQuery& q, double elapsed,
                                     const Vector3& gravity) {
  const double d = elapsed;
  const Rot3& Rk = anchor_pose.rotation();
  const Rot3 dR = so3_exp<double>(q.delta_r);

  GpPoseInterpolation out;
  out.pose = Pose3(Rk * dR, anchor_pose.translation() + anchor_velocity * d +
                                0.5 * gravity * d * d + Rk * q.delta_p);
  const Matrix3 dRt = dR.matrix().transpose();
  out.jacobian.setZero();
  out.jacobian.block<3, 3>(0, 0) = dRt;
  out.jacobian.block<3, 3>(0, 3) = -dRt * hat<double>(q.delta_p);
  out.jacobian.block<3, 3>(0, 6) = d * out.pose.rotation().matrix().transpose();
  out.jacobian.block<3, 3>(3, 3) = dRt;
  return out;
}

GpPoseInterpolation interpolate_pose(const ImuState& anchor, const LatentGpModel& model,
                                     double tau, const Vector3& gravity) {
  if (std::abs(anchor.stamp - model.anchor_stamp()) > kStampTolerance)
    throw AssociationError("interpolate_pose: anchor state does not match the GP model");
  return interpolate_pose(anchor.pose, anchor.velocity, query(model, tau, false),
                          tau - model.anchor_stamp(), gravity);
}

PreintegratedImu to_preintegrated(const LatentGpModel& model, const ImuNoiseConfig& noise) {
  const GpPreintQuery q = query(model, model.end_stamp(), true);
  PreintegratedImu p;
  p.start = model.anchor_stamp();
  p.dt_total = model.end_stamp() - model.anchor_stamp();
  p.delta_r = so3_exp<double>(q.delta_r);
  p.delta_v = q.delta_v;
  p.delta_p = q.delta_p;
  p.covariance = q.query_covariance;
  p.bias_lin = model.bias();
  p.noise = noise;
  return p;
}

}  // namespace gpvio
