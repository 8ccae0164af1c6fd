#include "gpvio/imu_preint.hpp"

#include "gpvio/errors.hpp"
#include "gpvio/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gpvio {

namespace {

constexpr double kStampTolerance = 1e-9;

ImuSample lerp(const ImuSample& a, const ImuSample& b, double t) {
  const double s = (t - a.stamp) / (b.stamp - a.stamp);
  ImuSample out;
  out.stamp = t;
  out.gyro = (1.0 - s) * a.gyro + s * b.gyro;
  out.accel = (1.0 - s) * a.accel + s * b.accel;
  return out;
}

void check_stream(std::span<const ImuSample> samples) {
  if (samples.size() < 2) throw StreamError("IMU integration needs at least two samples");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].stamp > samples[i - 1].stamp))
      throw StreamError("IMU sample stamps must be strictly increasing");
  }
}

}  // namespace

Vector6 ImuBias::vector() const {
  Vector6 v;
  v << accel, gyro;
  return v;
}

ImuBias ImuBias::from_vector(const Vector6& v) {
  ImuBias b;
  b.accel = v.head<3>();
  b.gyro = v.tail<3>();
  return b;
}

void ImuNoiseConfig::validate() const {
  if (!(gyro_noise_density > 0.0) || !(accel_noise_density > 0.0) || !(gyro_bias_walk > 0.0) ||
      !(accel_bias_walk > 0.0))
    throw ConfigError("IMU noise densities must be positive");
  if (!gravity.allFinite()) throw ConfigError("gravity must be finite");
}

ImuSample sample_at(std::span<const ImuSample> stream, double t) {
  if (stream.empty() || t < stream.front().stamp - kStampTolerance ||
      t > stream.back().stamp + kStampTolerance)
    throw StreamError("IMU stream does not cover the requested time");
  auto it = std::lower_bound(stream.begin(), stream.end(), t,
                             [](const ImuSample& s, double v) { return s.stamp < v; });
  if (it != stream.end() && std::abs(it->stamp - t) <= kStampTolerance) {
    ImuSample s = *it;
    s.stamp = t;
    return s;
  }
  if (it == stream.begin()) {
    ImuSample s = stream.front();
    s.stamp = t;
    return s;
  }
  if (it == stream.end()) {
    ImuSample s = stream.back();
    s.stamp = t;
    return s;
  }
  return lerp(*(it - 1), *it, t);
}

std::vector<ImuSample> slice_samples(std::span<const ImuSample> stream, double t0, double t1) {
  if (!(t1 > t0)) throw OrderingError("slice_samples: empty interval");
  std::vector<ImuSample> out;
  out.push_back(sample_at(stream, t0));
  auto it = std::upper_bound(stream.begin(), stream.end(), t0 + kStampTolerance,
                             [](double v, const ImuSample& s) { return v < s.stamp; });
  for (; it != stream.end() && it->stamp < t1 - kStampTolerance; ++it) out.push_back(*it);
  out.push_back(sample_at(stream, t1));
  return out;
}

PreintegratedImu integrate(std::span<const ImuSample> samples, const ImuBias& bias_lin,
                           const ImuNoiseConfig& noise) {
  check_stream(samples);

  PreintegratedImu out;
  out.start = samples.front().stamp;
  out.bias_lin = bias_lin;
  out.noise = noise;

  Matrix3 R = Matrix3::Identity();
  Vector3 v = Vector3::Zero();
  Vector3 p = Vector3::Zero();
  Matrix9 cov = Matrix9::Zero();
  const double qg = noise.gyro_noise_density * noise.gyro_noise_density;
  const double qa = noise.accel_noise_density * noise.accel_noise_density;

  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuSample& s0 = samples[i];
    const ImuSample& s1 = samples[i + 1];
    const double dt = s1.stamp - s0.stamp;

    const Vector3 w = 0.5 * (s0.gyro + s1.gyro) - bias_lin.gyro;
    const Matrix3 dR = so3_exp<double>(Vector3(w * dt)).matrix();
    const Matrix3 R_next = R * dR;
    const Vector3 f0 = s0.accel - bias_lin.accel;
    const Vector3 f1 = s1.accel - bias_lin.accel;
    const Vector3 a_mid = 0.5 * (R * f0 + R_next * f1);

    // Error-state transition for [dtheta, dv, dp].
    const Vector3 f_local = 0.5 * (f0 + dR * f1);
    const Matrix3 Rf = R * hat<double>(f_local);
    Matrix9 A = Matrix9::Identity();
    A.block<3, 3>(0, 0) = dR.transpose();
    A.block<3, 3>(3, 0) = -Rf * dt;
    A.block<3, 3>(6, 0) = -0.5 * Rf * dt * dt;
    A.block<3, 3>(6, 3) = Matrix3::Identity() * dt;

    // Exact covariance of continuous white noise over one step.
    Matrix9 Q = Matrix9::Zero();
    Q.block<3, 3>(0, 0) = qg * dt * Matrix3::Identity();
    Q.block<3, 3>(3, 3) = qa * dt * Matrix3::Identity();
    Q.block<3, 3>(3, 6) = qa * dt * dt / 2.0 * Matrix3::Identity();
    Q.block<3, 3>(6, 3) = qa * dt * dt / 2.0 * Matrix3::Identity();
    Q.block<3, 3>(6, 6) = qa * dt * dt * dt / 3.0 * Matrix3::Identity();
    cov = A * cov * A.transpose() + Q;

    p += v * dt + 0.5 * a_mid * dt * dt;
    v += a_mid * dt;
    R = R_next;
  }

  out.dt_total = samples.back().stamp - samples.front().stamp;
  out.delta_r = Rot3(R);
  out.delta_v = v;
  out.delta_p = p;
  out.covariance = 0.5 * (cov + cov.transpose());
  return out;
}

ImuResidual residual(const ImuState& xk, const ImuState& xk1, const PreintegratedImu& preint) {
  if (std::abs(xk.stamp - preint.start) > kStampTolerance ||
      std::abs(xk1.stamp - preint.end()) > kStampTolerance)
    throw AssociationError("IMU residual: states do not match the preintegration span");

  const double dt = preint.dt_total;
  const Vector3& g = preint.noise.gravity;
  const Matrix3& Rk = xk.pose.rotation().matrix();
  const Matrix3& Rk1 = xk1.pose.rotation().matrix();
  const Matrix3 RkT = Rk.transpose();

  const Vector3 u = xk1.velocity - xk.velocity - g * dt;
  const Vector3 w = xk1.pose.translation() - xk.pose.translation() - xk.velocity * dt -
                    0.5 * g * dt * dt;

  const Vector3 r_R =
      so3_log<double>(preint.delta_r.inverse() * Rot3(RkT * Rk1));
  const Matrix3 JrInv = so3_right_jacobian_inv<double>(r_R);

  ImuResidual out;
  out.residual.segment<3>(0) = r_R;
  out.residual.segment<3>(3) = RkT * u - preint.delta_v;
  out.residual.segment<3>(6) = RkT * w - preint.delta_p;
  out.residual.segment<6>(9) = xk1.bias.vector() - xk.bias.vector();

  // Column layout per state: [rho(0..2), phi(3..5), v(6..8), b_a(9..11), b_g(12..14)].
  Matrix15& Jk = out.jacobian_k;
  Matrix15& Jk1 = out.jacobian_k1;
  Jk.setZero();
  Jk1.setZero();

  Jk.block<3, 3>(0, 3) = -JrInv * Rk1.transpose() * Rk;
  Jk1.block<3, 3>(0, 3) = JrInv;

  Jk.block<3, 3>(3, 3) = hat<double>(Vector3(RkT * u));
  Jk.block<3, 3>(3, 6) = -RkT;
  Jk1.block<3, 3>(3, 6) = RkT;

  Jk.block<3, 3>(6, 0) = -Matrix3::Identity();
  Jk.block<3, 3>(6, 3) = hat<double>(Vector3(RkT * w));
  Jk.block<3, 3>(6, 6) = -RkT * dt;
  Jk1.block<3, 3>(6, 0) = RkT * Rk1;

  Jk.block<6, 6>(9, 9) = -Matrix6::Identity();
  Jk1.block<6, 6>(9, 9) = Matrix6::Identity();
  return out;
}

Matrix15 residual_covariance(const PreintegratedImu& preint) {
  Matrix15 cov = Matrix15::Zero();
  cov.block<9, 9>(0, 0) = preint.covariance;
  const double dt = preint.dt_total;
  const double wa = preint.noise.accel_bias_walk;
  const double wg = preint.noise.gyro_bias_walk;
  cov.block<3, 3>(9, 9) = wa * wa * dt * Matrix3::Identity();
  cov.block<3, 3>(12, 12) = wg * wg * dt * Matrix3::Identity();
  return cov;
}

ImuState predict(const ImuState& xk, const PreintegratedImu& preint) {
  const double dt = preint.dt_total;
  const Vector3& g = preint.noise.gravity;
  const Rot3& Rk = xk.pose.rotation();
  ImuState out;
  out.stamp = preint.end();
  out.velocity = xk.velocity + g * dt + Rk * preint.delta_v;
  out.pose = Pose3(Rk * preint.delta_r, xk.pose.translation() + xk.velocity * dt +
                                             0.5 * g * dt * dt + Rk * preint.delta_p);
  out.bias = xk.bias;
  return out;
}

void write_imu_csv(const std::filesystem::path& path, std::span<const ImuSample> samples) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  io::set_full_precision(os);
  os << "stamp,gx,gy,gz,ax,ay,az\n";
  for (const ImuSample& s : samples) {
    os << s.stamp << ',' << s.gyro.x() << ',' << s.gyro.y() << ',' << s.gyro.z() << ','
       << s.accel.x() << ',' << s.accel.y() << ',' << s.accel.z() << '\n';
  }
}

std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path) {
  std::vector<ImuSample> out;
  io::for_each_csv_row(path, "stamp,gx,gy,gz,ax,ay,az", 7, [&](std::span<const double> f) {
    ImuSample s;
    s.stamp = f[0];
    s.gyro = Vector3(f[1], f[2], f[3]);
    s.accel = Vector3(f[4], f[5], f[6]);
    out.push_back(s);
  });
  return out;
}

}  // namespace gpvio
