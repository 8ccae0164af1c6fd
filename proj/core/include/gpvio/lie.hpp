#pragma once

// SO(3) / SE(3) groups and their tangent spaces.
//
// Tangent vectors of SE(3) are ordered [rho, phi] (translational part first),
// matching the [v, w] ordering of body twists. All perturbations are
// right-multiplicative: T * exp(delta).
//
// Everything is templated on the scalar so that ceres::Jet can be pushed
// through the maps when a derivative has no convenient closed form.

#include <ceres/jet.h>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gpvio {

template <typename S>
using Vec3T = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Vec6T = Eigen::Matrix<S, 6, 1>;
template <typename S>
using Mat3T = Eigen::Matrix<S, 3, 3>;
template <typename S>
using Mat6T = Eigen::Matrix<S, 6, 6>;

using Vector2 = Eigen::Vector2d;
using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix3 = Eigen::Matrix3d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

/// Body twist [v; w], linear part first.
using Twist = Vector6;

namespace lie_detail {

/// Below this angle the closed forms are replaced by their Taylor series.
inline constexpr double kSmallAngle = 1e-6;
/// The SE(3) coupling block has coefficients that cancel to order theta^4,
/// so it switches to series much earlier.
inline constexpr double kCouplingSeriesAngle = 1e-2;

inline double value_of(double x) { return x; }
template <typename T, int N>
double value_of(const ceres::Jet<T, N>& x) {
  return x.a;
}

}  // namespace lie_detail

template <typename S>
Mat3T<S> hat(const Vec3T<S>& v) {
  Mat3T<S> m;
  // clang-format off
  m << S(0), -v.z(),  v.y(),
       v.z(),  S(0), -v.x(),
      -v.y(),  v.x(),  S(0);
  // clang-format on
  return m;
}

template <typename S>
Vec3T<S> vee(const Mat3T<S>& m) {
  return Vec3T<S>(m(2, 1), m(0, 2), m(1, 0));
}

template <typename S>
class Rot3T {
 public:
  Rot3T() : m_(Mat3T<S>::Identity()) {}
  /// Unchecked; use checked() for untrusted input.
  explicit Rot3T(const Mat3T<S>& m) : m_(m) {}

  static Rot3T Identity() { return Rot3T(); }

  static Rot3T checked(const Mat3T<S>& m, double tol = 1e-9) {
    Rot3T r(m);
    if (!r.is_valid(tol)) throw std::invalid_argument("Rot3: matrix is not a proper rotation");
    return r;
  }

  static Rot3T from_quaternion(const Eigen::Quaternion<S>& q) {
    return Rot3T(q.normalized().toRotationMatrix());
  }

  const Mat3T<S>& matrix() const { return m_; }
  Rot3T inverse() const { return Rot3T(m_.transpose()); }
  Rot3T operator*(const Rot3T& o) const { return Rot3T(m_ * o.m_); }
  Vec3T<S> operator*(const Vec3T<S>& v) const { return m_ * v; }

  Eigen::Quaternion<S> quaternion() const { return Eigen::Quaternion<S>(m_); }

  bool is_valid(double tol = 1e-9) const {
    using lie_detail::value_of;
    Eigen::Matrix3d d;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) d(i, j) = value_of(m_(i, j));
    return (d.transpose() * d - Eigen::Matrix3d::Identity()).norm() <= tol &&
           std::abs(d.determinant() - 1.0) <= tol;
  }

  template <typename U>
  Rot3T<U> cast() const {
    return Rot3T<U>(m_.template cast<U>());
  }

 private:
  Mat3T<S> m_;
};

template <typename S>
class Pose3T {
 public:
  Pose3T() : t_(Vec3T<S>::Zero()) {}
  Pose3T(const Rot3T<S>& r, const Vec3T<S>& t) : r_(r), t_(t) {}

  static Pose3T Identity() { return Pose3T(); }

  const Rot3T<S>& rotation() const { return r_; }
  const Vec3T<S>& translation() const { return t_; }

  Pose3T inverse() const {
    Rot3T<S> ri = r_.inverse();
    return Pose3T(ri, -(ri * t_));
  }
  Pose3T operator*(const Pose3T& o) const { return Pose3T(r_ * o.r_, r_ * o.t_ + t_); }
  /// Transforms a point.
  Vec3T<S> operator*(const Vec3T<S>& p) const { return r_ * p + t_; }

  Eigen::Matrix<S, 4, 4> matrix() const {
    Eigen::Matrix<S, 4, 4> m = Eigen::Matrix<S, 4, 4>::Identity();
    m.template block<3, 3>(0, 0) = r_.matrix();
    m.template block<3, 1>(0, 3) = t_;
    return m;
  }

  /// Ad(T) such that T exp(x) T^-1 = exp(Ad(T) x), for [rho, phi] ordering.
  Mat6T<S> adjoint() const {
    Mat6T<S> ad = Mat6T<S>::Zero();
    ad.template block<3, 3>(0, 0) = r_.matrix();
    ad.template block<3, 3>(3, 3) = r_.matrix();
    ad.template block<3, 3>(0, 3) = hat<S>(t_) * r_.matrix();
    return ad;
  }

  template <typename U>
  Pose3T<U> cast() const {
    return Pose3T<U>(r_.template cast<U>(), t_.template cast<U>());
  }

 private:
  Rot3T<S> r_;
  Vec3T<S> t_;
};

using Rot3 = Rot3T<double>;
using Pose3 = Pose3T<double>;

// ---------------------------------------------------------------------------
// SO(3)
// ---------------------------------------------------------------------------

template <typename S>
Rot3T<S> so3_exp(const Vec3T<S>& phi) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S theta2 = phi.squaredNorm();
  const Mat3T<S> K = hat<S>(phi);
  if (lie_detail::value_of(theta2) < lie_detail::kSmallAngle * lie_detail::kSmallAngle) {
    return Rot3T<S>(Mat3T<S>::Identity() + K + S(0.5) * K * K);
  }
  const S theta = sqrt(theta2);
  const S half = S(0.5) * theta;
  const S s_half = sin(half);
  // (1 - cos t) / t^2 written as 2 sin^2(t/2) / t^2 to keep precision.
  const S b = S(2) * s_half * s_half / theta2;
  return Rot3T<S>(Mat3T<S>::Identity() + (sin(theta) / theta) * K + b * K * K);
}

/// Principal logarithm. At exactly pi the axis sign is chosen so that its
/// first nonzero component is positive.
template <typename S>
Vec3T<S> so3_log(const Rot3T<S>& rot) {
  using lie_detail::value_of;
  using std::atan2;
  using std::sqrt;
  const Mat3T<S>& R = rot.matrix();
  const Vec3T<S> w = vee<S>(Mat3T<S>(R - R.transpose()));  // 2 sin(theta) axis
  S c = S(0.5) * (R.trace() - S(1));
  if (value_of(c) > 1.0) c = S(1);
  if (value_of(c) < -1.0) c = S(-1);

  if (value_of(c) > 1.0 - 0.5 * lie_detail::kSmallAngle * lie_detail::kSmallAngle) {
    // theta / sin(theta) ~ 1 + theta^2 / 6
    const Vec3T<S> half_w = S(0.5) * w;
    return half_w * (S(1) + half_w.squaredNorm() / S(6));
  }
  if (value_of(c) < -0.999) {
    // Near pi: axis from the symmetric part, (R + R^T)/2 - c I = (1 - c) a a^T.
    const Mat3T<S> B = S(0.5) * (R + R.transpose()) - c * Mat3T<S>::Identity();
    int k = 0;
    for (int i = 1; i < 3; ++i)
      if (value_of(B(i, i)) > value_of(B(k, k))) k = i;
    Vec3T<S> a = B.col(k) / sqrt(B(k, k) * (S(1) - c));
    a /= sqrt(a.squaredNorm());
    S proj = a.dot(w);
    if (std::abs(value_of(proj)) <= 1e-12) {
      for (int i = 0; i < 3; ++i) {
        if (std::abs(value_of(a[i])) > 1e-12) {
          if (value_of(a[i]) < 0) a = -a;
          break;
        }
      }
      proj = S(0);
    } else if (value_of(proj) < 0) {
      a = -a;
      proj = -proj;
    }
    const S theta = atan2(S(0.5) * proj, c);
    return theta * a;
  }
  const S s = S(0.5) * sqrt(w.squaredNorm());
  const S theta = atan2(s, c);
  return (theta / (S(2) * s)) * w;
}

/// Right Jacobian: exp(phi + d) ~= exp(phi) exp(J_r(phi) d).
template <typename S>
Mat3T<S> so3_right_jacobian(const Vec3T<S>& phi) {
  using std::sin;
  using std::sqrt;
  const S theta2 = phi.squaredNorm();
  const Mat3T<S> K = hat<S>(phi);
  if (lie_detail::value_of(theta2) < lie_detail::kSmallAngle * lie_detail::kSmallAngle) {
    return Mat3T<S>::Identity() - S(0.5) * K + K * K / S(6);
  }
  const S theta = sqrt(theta2);
  const S s_half = sin(S(0.5) * theta);
  const S a = S(2) * s_half * s_half / theta2;
  const S b = (theta - sin(theta)) / (theta2 * theta);
  return Mat3T<S>::Identity() - a * K + b * K * K;
}

template <typename S>
Mat3T<S> so3_right_jacobian_inv(const Vec3T<S>& phi) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S theta2 = phi.squaredNorm();
  const Mat3T<S> K = hat<S>(phi);
  if (lie_detail::value_of(theta2) < lie_detail::kSmallAngle * lie_detail::kSmallAngle) {
    return Mat3T<S>::Identity() + S(0.5) * K + K * K / S(12);
  }
  const S theta = sqrt(theta2);
  const S c = S(1) / theta2 - (S(1) + cos(theta)) / (S(2) * theta * sin(theta));
  return Mat3T<S>::Identity() + S(0.5) * K + c * K * K;
}

template <typename S>
Mat3T<S> so3_left_jacobian(const Vec3T<S>& phi) {
  return so3_right_jacobian<S>(Vec3T<S>(-phi));
}

template <typename S>
Mat3T<S> so3_left_jacobian_inv(const Vec3T<S>& phi) {
  return so3_right_jacobian_inv<S>(Vec3T<S>(-phi));
}

// ---------------------------------------------------------------------------
// SE(3)
// ---------------------------------------------------------------------------

namespace lie_detail {

/// Coupling block Q(rho, phi) of the SE(3) left Jacobian.
template <typename S>
Mat3T<S> se3_coupling(const Vec3T<S>& rho, const Vec3T<S>& phi) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Mat3T<S> P = hat<S>(phi);
  const Mat3T<S> Rh = hat<S>(rho);
  const S theta2 = phi.squaredNorm();
  S c1, c2, c3;
  if (value_of(theta2) < kCouplingSeriesAngle * kCouplingSeriesAngle) {
    const S t4 = theta2 * theta2;
    c1 = S(1.0 / 6.0) - theta2 / S(120.0) + t4 / S(5040.0);
    c2 = S(1.0 / 24.0) - theta2 / S(720.0) + t4 / S(40320.0);
    c3 = S(1.0 / 120.0) - theta2 / S(2520.0) + t4 / S(120960.0);
  } else {
    const S theta = sqrt(theta2);
    const S s = sin(theta);
    const S c = cos(theta);
    c1 = (theta - s) / (theta2 * theta);
    c2 = (theta2 + S(2) * c - S(2)) / (S(2) * theta2 * theta2);
    c3 = (S(2) * theta - S(3) * s + theta * c) / (S(2) * theta2 * theta2 * theta);
  }
  const Mat3T<S> PR = P * Rh;
  const Mat3T<S> RP = Rh * P;
  const Mat3T<S> PRP = PR * P;
  return S(0.5) * Rh + c1 * (PR + RP + PRP) + c2 * (P * PR + RP * P - S(3) * PRP) +
         c3 * (PRP * P + P * PRP);
}

}  // namespace lie_detail

template <typename S>
Pose3T<S> se3_exp(const Vec6T<S>& xi) {
  const Vec3T<S> rho = xi.template head<3>();
  const Vec3T<S> phi = xi.template tail<3>();
  return Pose3T<S>(so3_exp<S>(phi), so3_left_jacobian<S>(phi) * rho);
}

template <typename S>
Vec6T<S> se3_log(const Pose3T<S>& T) {
  const Vec3T<S> phi = so3_log<S>(T.rotation());
  Vec6T<S> xi;
  xi.template head<3>() = so3_left_jacobian_inv<S>(phi) * T.translation();
  xi.template tail<3>() = phi;
  return xi;
}

/// Right Jacobian of SE(3): exp(xi + d) ~= exp(xi) exp(J_r(xi) d).
template <typename S>
Mat6T<S> se3_right_jacobian(const Vec6T<S>& xi) {
  const Vec3T<S> rho = -xi.template head<3>();
  const Vec3T<S> phi = -xi.template tail<3>();
  const Mat3T<S> J = so3_left_jacobian<S>(phi);
  Mat6T<S> out = Mat6T<S>::Zero();
  out.template block<3, 3>(0, 0) = J;
  out.template block<3, 3>(3, 3) = J;
  out.template block<3, 3>(0, 3) = lie_detail::se3_coupling<S>(rho, phi);
  return out;
}

template <typename S>
Mat6T<S> se3_right_jacobian_inv(const Vec6T<S>& xi) {
  const Vec3T<S> rho = -xi.template head<3>();
  const Vec3T<S> phi = -xi.template tail<3>();
  const Mat3T<S> Jinv = so3_left_jacobian_inv<S>(phi);
  const Mat3T<S> Q = lie_detail::se3_coupling<S>(rho, phi);
  Mat6T<S> out = Mat6T<S>::Zero();
  out.template block<3, 3>(0, 0) = Jinv;
  out.template block<3, 3>(3, 3) = Jinv;
  out.template block<3, 3>(0, 3) = -Jinv * Q * Jinv;
  return out;
}

template <typename S>
Mat6T<S> se3_left_jacobian(const Vec6T<S>& xi) {
  return se3_right_jacobian<S>(Vec6T<S>(-xi));
}

/// Geodesic angle between two rotations, radians.
inline double rotation_angle(const Rot3& a, const Rot3& b) {
  return so3_log<double>(a.inverse() * b).norm();
}

}  // namespace gpvio
