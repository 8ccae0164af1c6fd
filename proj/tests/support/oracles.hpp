#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance suite. Nothing here calls into the code under test except for
// plain data types and the Lie group exponential/logarithm.

#include "gpvio/imu_preint.hpp"
#include "gpvio/lie.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace gpvio::oracle {

/// Sum of sinusoids per axis: x(t) = c + a sin(2 pi f t + phase).
struct SinusoidSignal {
  Vector3 offset = Vector3::Zero();
  Vector3 amplitude = Vector3::Zero();
  Vector3 frequency = Vector3::Ones();
  Vector3 phase = Vector3::Zero();

  Vector3 operator()(double t) const {
    Vector3 out;
    for (int i = 0; i < 3; ++i)
      out[i] = offset[i] +
               amplitude[i] * std::sin(2.0 * std::numbers::pi * frequency[i] * t + phase[i]);
    return out;
  }
};

struct ImuSignal {
  SinusoidSignal gyro;
  SinusoidSignal accel;
};

inline ImuSignal default_signal() {
  ImuSignal s;
  s.gyro.offset = Vector3(0.1, -0.2, 0.3);
  s.gyro.amplitude = Vector3(0.5, 0.4, 0.6);
  s.gyro.frequency = Vector3(0.7, 1.1, 0.9);
  s.gyro.phase = Vector3(0.0, 0.5, 1.0);
  s.accel.offset = Vector3(0.3, 0.1, 9.81);
  s.accel.amplitude = Vector3(1.5, 1.0, 0.8);
  s.accel.frequency = Vector3(0.8, 0.6, 1.2);
  s.accel.phase = Vector3(0.2, 1.3, 0.4);
  return s;
}

inline std::vector<ImuSample> sample_signal(const ImuSignal& s, double t0, double t1,
                                            double rate) {
  const int n = static_cast<int>(std::llround((t1 - t0) * rate));
  std::vector<ImuSample> out;
  out.reserve(static_cast<std::size_t>(n + 1));
  for (int i = 0; i <= n; ++i) {
    const double t = t0 + (t1 - t0) * i / n;
    out.push_back({t, s.gyro(t), s.accel(t)});
  }
  return out;
}

struct Increments {
  Matrix3 R = Matrix3::Identity();
  Vector3 v = Vector3::Zero();
  Vector3 p = Vector3::Zero();
};

/// Classical RK4 on dR = R [w]x, dv = R a, dp = v with the continuous signal.
inline Increments rk4_increments(const ImuSignal& s, double t0, double t1, double rate = 20000.0) {
  struct State {
    Matrix3 R;
    Vector3 v;
    Vector3 p;
  };
  auto deriv = [&](const State& x, double t) {
    const Vector3 w = s.gyro(t);
    Matrix3 W;
    W << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return State{x.R * W, x.R * s.accel(t), x.v};
  };
  auto axpy = [](const State& x, double h, const State& d) {
    return State{x.R + h * d.R, x.v + h * d.v, x.p + h * d.p};
  };
  const int n = static_cast<int>(std::llround((t1 - t0) * rate));
  const double h = (t1 - t0) / n;
  State x{Matrix3::Identity(), Vector3::Zero(), Vector3::Zero()};
  for (int i = 0; i < n; ++i) {
    const double t = t0 + i * h;
    const State k1 = deriv(x, t);
    const State k2 = deriv(axpy(x, 0.5 * h, k1), t + 0.5 * h);
    const State k3 = deriv(axpy(x, 0.5 * h, k2), t + 0.5 * h);
    const State k4 = deriv(axpy(x, h, k3), t + h);
    x.R += h / 6.0 * (k1.R + 2.0 * k2.R + 2.0 * k3.R + k4.R);
    x.v += h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
    x.p += h / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
  }
  Eigen::JacobiSVD<Matrix3> svd(x.R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {svd.matrixU() * svd.matrixV().transpose(), x.v, x.p};
}

struct RelativeErrors {
  double rotation = 0.0;
  double velocity = 0.0;
  double position = 0.0;
  double max() const { return std::max({rotation, velocity, position}); }
};

/// Errors relative to the magnitude of the reference increments.
inline RelativeErrors relative_errors(const Rot3& dR, const Vector3& dv, const Vector3& dp,
                                      const Increments& ref) {
  const Rot3 Rref(ref.R);
  RelativeErrors e;
  e.rotation = rotation_angle(dR, Rref) / std::max(so3_log(Rref).norm(), 1e-12);
  e.velocity = (dv - ref.v).norm() / std::max(ref.v.norm(), 1e-12);
  e.position = (dp - ref.p).norm() / std::max(ref.p.norm(), 1e-12);
  return e;
}

/// Central differences of f: R^n -> R^m about x.
inline Eigen::MatrixXd numeric_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// max |A - B| / max(1, max |B|)
inline double relative_difference(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  return (A - B).cwiseAbs().maxCoeff() / std::max(1.0, B.cwiseAbs().maxCoeff());
}

inline Pose3 random_pose(std::mt19937_64& rng, double rot_scale = 1.0, double trans_scale = 1.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector3 phi(n(rng), n(rng), n(rng));
  Vector3 t(n(rng), n(rng), n(rng));
  return Pose3(so3_exp<double>(rot_scale * phi), trans_scale * t);
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

}  // namespace gpvio::oracle
