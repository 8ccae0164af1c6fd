#pragma once

// Trajectory association, rigid alignment and relative trajectory error.

#include "gpvio/io.hpp"
#include "gpvio/lie.hpp"

#include <span>
#include <string>
#include <vector>

namespace gpvio {

inline constexpr double kAssociationTolerance = 0.005;

struct AssociatedPose {
  double stamp = 0.0;
  Pose3 estimate;
  Pose3 reference;
};

/// Pairs each estimate with the nearest reference stamp within `tolerance`.
std::vector<AssociatedPose> associate(std::span<const StampedPose> estimate,
                                      std::span<const StampedPose> reference,
                                      double tolerance = kAssociationTolerance);

/// Rigid transform A minimizing sum |A p_est - p_ref|^2 over pairs whose stamp
/// lies within `horizon` seconds of the first pair. No scale.
/// Throws InsufficientOverlapError with fewer than three pairs.
Pose3 align_first_seconds(std::span<const AssociatedPose> pairs, double horizon = 5.0);

/// Applies A to every estimate.
std::vector<AssociatedPose> apply_alignment(std::span<const AssociatedPose> pairs,
                                            const Pose3& alignment);

struct RteResult {
  double delta = 0.0;
  std::size_t count = 0;
  double translation_rms = 0.0;
  double yaw_rms_deg = 0.0;
};

/// RMS over all pairs (i, j) with stamp_j nearest stamp_i + delta (within the
/// association tolerance) of the discrepancy (G_i^-1 G_j)^-1 (E_i^-1 E_j).
RteResult rms_rte(std::span<const AssociatedPose> pairs, double delta);

struct MetricsReport {
  Pose3 alignment;
  std::size_t pairs = 0;
  std::size_t alignment_pairs = 0;
  double trajectory_length = 0.0;
  std::vector<RteResult> rte;

  /// Entry for `delta`, or nullptr.
  const RteResult* at(double delta) const;
  std::string to_json() const;
};

inline const std::vector<double> kDefaultRteDeltas = {0.5, 1.0, 2.0, 5.0};

MetricsReport evaluate(std::span<const StampedPose> estimate,
                       std::span<const StampedPose> reference,
                       std::span<const double> deltas = kDefaultRteDeltas, double horizon = 5.0);

}  // namespace gpvio
