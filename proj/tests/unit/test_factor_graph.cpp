#include "gpvio/errors.hpp"
#include "gpvio/factor_graph.hpp"
#include "gpvio/factors.hpp"

#include "support/graph_fixture.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>

namespace gpvio {
namespace {

/// Central differences of a factor's whitened residual w.r.t. each key's tangent.
std::vector<Eigen::MatrixXd> numeric_factor_jacobians(const Factor& f, const Values& values) {
  const double h = 1e-6;
  std::vector<Eigen::MatrixXd> out;
  FactorLinearization lin;
  f.linearize(values, lin, false);
  for (const Key& key : f.keys()) {
    const int d = tangent_dim(key.kind);
    Eigen::MatrixXd J(lin.residual.size(), d);
    for (int j = 0; j < d; ++j) {
      Values plus = values;
      Values minus = values;
      plus.retract(key, Eigen::VectorXd::Unit(d, j) * h);
      minus.retract(key, Eigen::VectorXd::Unit(d, j) * -h);
      FactorLinearization lp;
      FactorLinearization lm;
      f.linearize(plus, lp, false);
      f.linearize(minus, lm, false);
      J.col(j) = (lp.residual - lm.residual) / (2.0 * h);
    }
    out.push_back(J);
  }
  return out;
}

void expect_jacobians_match(const Factor& f, const Values& values, double tol) {
  FactorLinearization lin;
  f.linearize(values, lin, true);
  ASSERT_TRUE(lin.active);
  const auto numeric = numeric_factor_jacobians(f, values);
  ASSERT_EQ(lin.jacobians.size(), numeric.size());
  for (std::size_t i = 0; i < numeric.size(); ++i)
    EXPECT_LT(oracle::relative_difference(lin.jacobians[i], numeric[i]), tol)
        << f.name() << " key " << to_string(f.keys()[i]);
  EXPECT_NEAR(lin.cost, 0.5 * lin.residual.squaredNorm(), 1e-12 * std::max(1.0, lin.cost));
}

/// Dense GN step by direct solve of the full normal equations (no elimination).
std::map<Key, Eigen::VectorXd> dense_step(std::span<const FactorPtr> factors, const Values& values) {
  const DenseSystem sys = linearize_dense(factors, values, values.keys());
  const Eigen::VectorXd dx = sys.hessian.ldlt().solve(-sys.gradient);
  std::map<Key, Eigen::VectorXd> out;
  for (std::size_t i = 0; i < sys.ordering.size(); ++i)
    out[sys.ordering[i]] = dx.segment(sys.offsets[i], tangent_dim(sys.ordering[i].kind));
  return out;
}

TEST(FactorGraph, RetractAndLocalAreInverse) {
  std::mt19937_64 rng(51);
  Values v;
  v.insert(pose_key(0), oracle::random_pose(rng));
  v.insert(landmark_key(3), oracle::random_vector(rng, 3));
  const Values origin = v;
  const Eigen::VectorXd dp = oracle::random_vector(rng, 6, 0.3);
  const Eigen::VectorXd dl = oracle::random_vector(rng, 3);
  v.retract(pose_key(0), dp);
  v.retract(landmark_key(3), dl);
  EXPECT_LT((v.local(pose_key(0), origin) - dp).norm(), 1e-12);
  EXPECT_LT((v.local(landmark_key(3), origin) - dl).norm(), 1e-15);
  EXPECT_NE(v.version(), origin.version());
  EXPECT_EQ(tangent_dim(VarKind::kTwist), 6);
  EXPECT_EQ(tangent_dim(VarKind::kVelocity), 3);
}

TEST(FactorGraph, SqrtInformationWhitens) {
  std::mt19937_64 rng(52);
  const Eigen::MatrixXd A = oracle::random_vector(rng, 25).reshaped(5, 5);
  const Eigen::MatrixXd cov = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(5, 5);
  const Eigen::MatrixXd W = sqrt_information(cov);
  EXPECT_LT((W.transpose() * W - cov.inverse()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FactorGraph, LinearPriorJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(53);
  Values lin;
  lin.insert(pose_key(1), oracle::random_pose(rng));
  lin.insert(velocity_key(1), oracle::random_vector(rng, 3));
  const Eigen::MatrixXd A = oracle::random_vector(rng, 81).reshaped(9, 9);
  const LinearPriorFactor f({pose_key(1), velocity_key(1)}, lin, A, oracle::random_vector(rng, 9));
  Values at = lin;
  at.retract(pose_key(1), oracle::random_vector(rng, 6, 0.2));
  at.retract(velocity_key(1), oracle::random_vector(rng, 3));
  expect_jacobians_match(f, at, 1e-6);
  EXPECT_LT((f.information() - A.transpose() * A).norm(), 1e-12);
}

TEST(FactorGraph, MotionAndImuFactorJacobians) {
  const fixture::SmallWindow w = fixture::small_ct_window(3, 5, 0.05, 5e-2);
  for (const FactorPtr& f : w.factors)
    if (f->name() == "wnoa_prior" || f->name() == "imu") expect_jacobians_match(*f, w.initial, 1e-5);
}

TEST(FactorGraph, CtProjectionFactorJacobians) {
  const fixture::SmallWindow w = fixture::small_ct_window(3, 5, 0.05, 1e-2);
  int checked = 0;
  for (const FactorPtr& f : w.factors) {
    if (f->name() != "ct_projection") continue;
    expect_jacobians_match(*f, w.initial, 1e-5);
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(FactorGraph, WorldVelocityImuAndGpProjectionJacobians) {
  std::mt19937_64 rng(54);
  const auto samples = oracle::sample_signal(oracle::default_signal(), 0.0, 0.05, 200.0);
  const PreintegratedImu p = integrate(samples, ImuBias{}, ImuNoiseConfig{});
  Values v;
  for (int k = 0; k < 2; ++k) {
    v.insert(pose_key(k), oracle::random_pose(rng));
    v.insert(velocity_key(k), oracle::random_vector(rng, 3));
    v.insert(bias_key(k), oracle::random_vector(rng, 6, 0.01));
  }
  const ImuFactor imu(0, ImuFactor::Velocity::kWorld, p);
  expect_jacobians_match(imu, v, 1e-5);

  const LatentGpModel model = fit_latent(samples, ImuBias{}, GpKernelConfig{});
  const GpPreintQuery q = query(model, 0.03, false);
  CameraModel cam = SensorRig::default_camera();
  const auto camera = std::make_shared<const CameraModel>(cam);
  // Place the landmark in front of the interpolated camera.
  const GpPoseInterpolation pose = interpolate_pose(v.pose(pose_key(0)), v.vector(velocity_key(0)),
                                                    q, 0.03, Vector3(0, 0, -9.81));
  const Vector3 X = pose.pose * cam.body_to_camera * Vector3(0.3, -0.2, 4.0);
  v.insert(landmark_key(9), Eigen::VectorXd(X));
  RobustPixelNoise noise;
  noise.huber_delta = 1e6;
  const GpProjectionFactor f(0, q, 0.03, Vector3(0, 0, -9.81), 9,
                             project(pose.pose, cam, X).pixel + Vector2(0.4, -0.3), camera, noise);
  expect_jacobians_match(f, v, 1e-5);
}

TEST(FactorGraph, SchurStepMatchesDenseStep) {
  const fixture::SmallWindow w = fixture::small_ct_window(4, 6, 0.05, 1e-2);
  const auto schur = gauss_newton_step(w.factors, w.initial);
  const auto dense = dense_step(w.factors, w.initial);
  ASSERT_EQ(schur.size(), dense.size());
  for (const auto& [key, dx] : dense)
    EXPECT_LT((schur.at(key) - dx).norm(), 1e-9 * std::max(1.0, dx.norm())) << to_string(key);
}

TEST(FactorGraph, SolverReachesStationaryPoint) {
  fixture::SmallWindow w = fixture::small_ct_window(3, 5, 0.05, 1e-2);
  Values v = w.initial;
  const SolveReport r = solve(w.factors, v);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.final_cost, r.initial_cost);
  EXPECT_EQ(r.state_dim, 3 * 18 + 5 * 3);
  EXPECT_EQ(r.eliminated_landmarks, 5);
  EXPECT_EQ(r.reduced_dim, 3 * 18);
  // The motion prior is not zero on sinusoidal motion, so the truth is not the
  // optimum; the solution must be stationary and no worse than the truth.
  EXPECT_LE(r.final_cost, total_cost(w.factors, w.truth));
  for (const auto& [key, dx] : gauss_newton_step(w.factors, v))
    EXPECT_LT(dx.norm(), 1e-6) << to_string(key);
  for (const Key& key : v.keys()) EXPECT_LT(v.local(key, w.truth).norm(), 0.05) << to_string(key);
}

TEST(FactorGraph, MarginalPriorIsSchurComplement) {
  const fixture::SmallWindow w = fixture::small_ct_window(3, 5, 0.05, 1e-2);
  const std::set<Key> marg = {pose_key(0), twist_key(0), bias_key(0), landmark_key(0)};
  const MarginalizationResult m = marginalize(w.factors, w.initial, marg);
  ASSERT_TRUE(m.prior);
  EXPECT_FALSE(m.floored);

  // Independent Schur complement of the connected factors' dense system.
  std::vector<FactorPtr> connected;
  for (const FactorPtr& f : w.factors)
    if (std::find(m.remaining.begin(), m.remaining.end(), f) == m.remaining.end())
      connected.push_back(f);
  std::vector<Key> order(marg.begin(), marg.end());
  for (const Key& k : m.prior->keys()) order.push_back(k);
  const DenseSystem sys = linearize_dense(connected, w.initial, order);
  int nm = 0;
  for (const Key& k : marg) nm += tangent_dim(k.kind);
  const Eigen::Index nr = sys.hessian.rows() - nm;
  const Eigen::MatrixXd Hmm = sys.hessian.topLeftCorner(nm, nm);
  const Eigen::MatrixXd Hmr = sys.hessian.topRightCorner(nm, nr);
  const Eigen::MatrixXd Hrr = sys.hessian.bottomRightCorner(nr, nr);
  const Eigen::MatrixXd S = Hrr - Hmr.transpose() * Hmm.ldlt().solve(Hmr);
  const Eigen::VectorXd gs = sys.gradient.tail(nr) - Hmr.transpose() * Hmm.ldlt().solve(sys.gradient.head(nm));

  const Eigen::MatrixXd info = m.prior->information();
  EXPECT_LT((info - S).cwiseAbs().maxCoeff(), 1e-8 * S.cwiseAbs().maxCoeff());
  const Eigen::VectorXd g = m.prior->jacobian().transpose() * m.prior->offset();
  EXPECT_LT((g - gs).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, gs.cwiseAbs().maxCoeff()));
}

TEST(FactorGraph, MarginalizationMatchesBatchAtSharedLinearizationPoint) {
  const fixture::SmallWindow w = fixture::small_ct_window(3, 5, 0.05, 1e-2);
  const std::set<Key> marg = {pose_key(0), twist_key(0), bias_key(0), landmark_key(0)};
  const MarginalizationResult m = marginalize(w.factors, w.initial, marg);
  std::vector<FactorPtr> reduced = m.remaining;
  reduced.push_back(m.prior);
  Values kept = w.initial;
  for (const Key& k : marg) kept.erase(k);

  const auto batch = dense_step(w.factors, w.initial);
  const auto window = gauss_newton_step(reduced, kept);
  for (const auto& [key, dx] : window)
    EXPECT_LT((batch.at(key) - dx).cwiseAbs().maxCoeff(), 1e-8) << to_string(key);
}

TEST(FactorGraph, MarginalizeWithNothingConnected) {
  const fixture::SmallWindow w = fixture::small_ct_window(3, 5, 0.05, 1e-2);
  const MarginalizationResult m = marginalize(w.factors, w.initial, {pose_key(99)});
  EXPECT_FALSE(m.prior);
  EXPECT_EQ(m.remaining.size(), w.factors.size());
}

TEST(FactorGraph, SolverConfigValidation) {
  SolverConfig cfg;
  cfg.max_iterations = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace gpvio
