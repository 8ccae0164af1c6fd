#pragma once

// Minimal nonlinear factor graph on a product manifold: typed variable keys,
// a value store with right-multiplicative pose retraction, whitened factors,
// a Levenberg-Marquardt solver that eliminates landmarks by Schur complement,
// and Schur-complement marginalization into a linear prior factor.

#include "gpvio/lie.hpp"

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace gpvio {

enum class VarKind : std::uint8_t { kPose, kTwist, kVelocity, kBias, kLandmark };

struct Key {
  VarKind kind = VarKind::kPose;
  std::int64_t index = 0;

  auto operator<=>(const Key&) const = default;
};

inline Key pose_key(std::int64_t i) { return {VarKind::kPose, i}; }
inline Key twist_key(std::int64_t i) { return {VarKind::kTwist, i}; }
inline Key velocity_key(std::int64_t i) { return {VarKind::kVelocity, i}; }
inline Key bias_key(std::int64_t i) { return {VarKind::kBias, i}; }
inline Key landmark_key(std::int64_t i) { return {VarKind::kLandmark, i}; }

/// Tangent dimension of a variable kind.
int tangent_dim(VarKind kind);
std::string to_string(const Key& key);

class Values {
 public:
  void insert(const Key& key, const Pose3& pose);
  void insert(const Key& key, const Eigen::VectorXd& vec);
  bool contains(const Key& key) const { return entries_.count(key) != 0; }
  void erase(const Key& key);
  std::size_t size() const { return entries_.size(); }

  const Pose3& pose(const Key& key) const;
  const Eigen::VectorXd& vector(const Key& key) const;
  void set(const Key& key, const Pose3& pose);
  void set(const Key& key, const Eigen::VectorXd& vec);

  /// Pose: T exp(delta); vectors: v + delta.
  void retract(const Key& key, const Eigen::Ref<const Eigen::VectorXd>& delta);
  /// Inverse of retract about `origin`: log(T0^-1 T) or v - v0.
  Eigen::VectorXd local(const Key& key, const Values& origin) const;

  std::vector<Key> keys() const;
  /// Changes whenever any entry is modified; copies keep the stamp of their source.
  std::uint64_t version() const { return version_; }

 private:
  struct Entry {
    Pose3 pose;
    Eigen::VectorXd vec;
  };
  const Entry& entry(const Key& key) const;
  Entry& entry(const Key& key);
  void touch();

  std::map<Key, Entry> entries_;
  std::uint64_t version_ = 0;
};

struct FactorLinearization {
  /// Whitened (and robustly reweighted) residual.
  Eigen::VectorXd residual;
  /// One whitened block per key, in key order.
  std::vector<Eigen::MatrixXd> jacobians;
  /// 0.5 * (robust) squared Mahalanobis norm.
  double cost = 0.0;
  /// False when the factor cannot be evaluated here (e.g. point behind the camera).
  bool active = true;
};

class Factor {
 public:
  explicit Factor(std::vector<Key> keys) : keys_(std::move(keys)) {}
  virtual ~Factor() = default;

  const std::vector<Key>& keys() const { return keys_; }
  virtual std::string name() const = 0;
  virtual void linearize(const Values& values, FactorLinearization& out,
                         bool with_jacobians) const = 0;
  double cost(const Values& values) const;

 private:
  std::vector<Key> keys_;
};

using FactorPtr = std::shared_ptr<const Factor>;

/// W with W^T W = inverse(cov), so W r is whitened.
Eigen::MatrixXd sqrt_information(const Eigen::MatrixXd& covariance);

/// r = A (x - x_lin) + b on the joint tangent of `keys`, with the pose
/// difference log(T_lin^-1 T). Used for anchors and marginal priors.
class LinearPriorFactor final : public Factor {
 public:
  LinearPriorFactor(std::vector<Key> keys, Values linearization_point, Eigen::MatrixXd jacobian,
                    Eigen::VectorXd offset, std::string label = "linear_prior");

  std::string name() const override { return label_; }
  void linearize(const Values& values, FactorLinearization& out,
                 bool with_jacobians) const override;

  const Eigen::MatrixXd& jacobian() const { return jacobian_; }
  const Eigen::VectorXd& offset() const { return offset_; }
  const Values& linearization_point() const { return lin_; }
  /// A^T A
  Eigen::MatrixXd information() const;

 private:
  Values lin_;
  Eigen::MatrixXd jacobian_;
  Eigen::VectorXd offset_;
  std::vector<int> offsets_;
  std::string label_;
};

/// Prior pulling one variable towards `mean` with the given covariance.
std::shared_ptr<LinearPriorFactor> make_prior(const Key& key, const Values& mean,
                                              const Eigen::MatrixXd& covariance);

double total_cost(std::span<const FactorPtr> factors, const Values& values);

struct SolverConfig {
  int max_iterations = 20;
  double relative_tolerance = 1e-6;
  double initial_lambda = 1e-4;
  double max_lambda = 1e10;

  void validate() const;
};

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  bool stalled = false;
  /// Sum of tangent dimensions of all variables touched by the factors.
  int state_dim = 0;
  /// Dimension of the dense system after landmark elimination.
  int reduced_dim = 0;
  int eliminated_landmarks = 0;
};

/// Levenberg-Marquardt with Marquardt diagonal damping. Landmarks that share no
/// factor with another landmark are eliminated per iteration by Schur complement.
/// `values` is left at the best iterate.
SolveReport solve(std::span<const FactorPtr> factors, Values& values,
                  const SolverConfig& cfg = {});

/// Undamped Gauss-Newton step at `values` (same elimination path as solve).
std::map<Key, Eigen::VectorXd> gauss_newton_step(std::span<const FactorPtr> factors,
                                                 const Values& values);

/// Dense Gauss-Newton system H dx = -g over `ordering` (tangent blocks concatenated).
struct DenseSystem {
  std::vector<Key> ordering;
  std::vector<int> offsets;
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  double cost = 0.0;
};

DenseSystem linearize_dense(std::span<const FactorPtr> factors, const Values& values,
                            std::vector<Key> ordering);

struct MarginalizationResult {
  /// Prior on the retained variables touched by removed factors; null when
  /// nothing is retained.
  std::shared_ptr<LinearPriorFactor> prior;
  /// Factors that survive (not connected to any marginalized variable).
  std::vector<FactorPtr> remaining;
  /// True when an eigenvalue floor had to be applied to a singular block.
  bool floored = false;
};

inline constexpr double kMarginalEigenFloor = 1e-12;

/// Linearizes every factor touching `marginalized` at `values`, eliminates
/// landmarks first and then the remaining marginalized variables, and
/// returns the Schur complement as a residual-form prior.
MarginalizationResult marginalize(std::span<const FactorPtr> factors, const Values& values,
                                  const std::set<Key>& marginalized);

}  // namespace gpvio
