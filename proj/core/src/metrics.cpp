#include "gpvio/metrics.hpp"

#include "gpvio/errors.hpp"

#include "json.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gpvio {

namespace {

/// Index of the element of `sorted` nearest to t, or npos when farther than tol.
template <typename T, typename Stamp>
std::size_t nearest(std::span<const T> sorted, double t, double tol, Stamp stamp_of) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), t,
                             [&](const T& x, double v) { return stamp_of(x) < v; });
  std::size_t best = std::string::npos;
  double best_err = tol;
  auto consider = [&](auto cand) {
    const double err = std::abs(stamp_of(*cand) - t);
    if (err <= best_err) {
      best_err = err;
      best = static_cast<std::size_t>(cand - sorted.begin());
    }
  };
  if (it != sorted.end()) consider(it);
  if (it != sorted.begin()) consider(it - 1);
  return best;
}

nlohmann::ordered_json pose_json(const Pose3& p) {
  const Eigen::Quaterniond q = p.rotation().quaternion();
  const Vector3& t = p.translation();
  return {{"translation", {t.x(), t.y(), t.z()}}, {"quaternion_xyzw", {q.x(), q.y(), q.z(), q.w()}}};
}

}  // namespace

std::vector<AssociatedPose> associate(std::span<const StampedPose> estimate,
                                      std::span<const StampedPose> reference, double tolerance) {
  if (!std::is_sorted(reference.begin(), reference.end(),
                      [](const StampedPose& a, const StampedPose& b) { return a.stamp < b.stamp; }))
    throw OrderingError("reference trajectory stamps must be sorted");
  std::vector<AssociatedPose> out;
  for (const StampedPose& e : estimate) {
    const std::size_t j =
        nearest(reference, e.stamp, tolerance, [](const StampedPose& p) { return p.stamp; });
    if (j == std::string::npos) continue;
    out.push_back({e.stamp, e.pose, reference[j].pose});
  }
  return out;
}

Pose3 align_first_seconds(std::span<const AssociatedPose> pairs, double horizon) {
  std::vector<const AssociatedPose*> used;
  if (!pairs.empty()) {
    const double t0 = pairs.front().stamp;
    for (const AssociatedPose& p : pairs)
      if (p.stamp <= t0 + horizon) used.push_back(&p);
  }
  if (used.size() < 3) throw InsufficientOverlapError("alignment needs at least three pose pairs");

  Vector3 mu_e = Vector3::Zero();
  Vector3 mu_r = Vector3::Zero();
  for (const AssociatedPose* p : used) {
    mu_e += p->estimate.translation();
    mu_r += p->reference.translation();
  }
  mu_e /= static_cast<double>(used.size());
  mu_r /= static_cast<double>(used.size());
  Matrix3 cov = Matrix3::Zero();
  for (const AssociatedPose* p : used)
    cov += (p->reference.translation() - mu_r) * (p->estimate.translation() - mu_e).transpose();

  Eigen::JacobiSVD<Matrix3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3 S = Matrix3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) S(2, 2) = -1.0;
  const Matrix3 R = svd.matrixU() * S * svd.matrixV().transpose();
  return Pose3(Rot3(R), mu_r - R * mu_e);
}

std::vector<AssociatedPose> apply_alignment(std::span<const AssociatedPose> pairs,
                                            const Pose3& alignment) {
  std::vector<AssociatedPose> out(pairs.begin(), pairs.end());
  for (AssociatedPose& p : out) p.estimate = alignment * p.estimate;
  return out;
}

RteResult rms_rte(std::span<const AssociatedPose> pairs, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("rms_rte: delta must be positive");
  RteResult out;
  out.delta = delta;
  double sum_t = 0.0;
  double sum_yaw = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t j = nearest(pairs, pairs[i].stamp + delta, kAssociationTolerance,
                                  [](const AssociatedPose& p) { return p.stamp; });
    if (j == std::string::npos || j <= i) continue;
    const Pose3 rel_ref = pairs[i].reference.inverse() * pairs[j].reference;
    const Pose3 rel_est = pairs[i].estimate.inverse() * pairs[j].estimate;
    const Pose3 err = rel_ref.inverse() * rel_est;
    const Matrix3& R = err.rotation().matrix();
    const double yaw = std::atan2(R(1, 0), R(0, 0)) * 180.0 / std::numbers::pi;
    sum_t += err.translation().squaredNorm();
    sum_yaw += yaw * yaw;
    ++out.count;
  }
  if (out.count > 0) {
    out.translation_rms = std::sqrt(sum_t / static_cast<double>(out.count));
    out.yaw_rms_deg = std::sqrt(sum_yaw / static_cast<double>(out.count));
  }
  return out;
}

const RteResult* MetricsReport::at(double delta) const {
  for (const RteResult& r : rte)
    if (std::abs(r.delta - delta) < 1e-12) return &r;
  return nullptr;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["note"] = "yaw error is extracted from aligned relative motions";
  j["pairs"] = pairs;
  j["alignment_pairs"] = alignment_pairs;
  j["trajectory_length_m"] = trajectory_length;
  j["alignment"] = pose_json(alignment);
  auto& arr = j["rms_rte"] = nlohmann::ordered_json::array();
  for (const RteResult& r : rte)
    arr.push_back({{"delta_s", r.delta},
                   {"count", r.count},
                   {"translation_m", r.translation_rms},
                   {"yaw_deg", r.yaw_rms_deg}});
  return j.dump(2);
}

MetricsReport evaluate(std::span<const StampedPose> estimate,
                       std::span<const StampedPose> reference, std::span<const double> deltas,
                       double horizon) {
  const std::vector<AssociatedPose> pairs = associate(estimate, reference);
  MetricsReport report;
  report.pairs = pairs.size();
  report.alignment = align_first_seconds(pairs, horizon);
  for (const AssociatedPose& p : pairs)
    if (p.stamp <= pairs.front().stamp + horizon) ++report.alignment_pairs;
  for (std::size_t i = 1; i < pairs.size(); ++i)
    report.trajectory_length +=
        (pairs[i].reference.translation() - pairs[i - 1].reference.translation()).norm();
  const std::vector<AssociatedPose> aligned = apply_alignment(pairs, report.alignment);
  for (double d : deltas) report.rte.push_back(rms_rte(aligned, d));
  return report;
}

}  // namespace gpvio
