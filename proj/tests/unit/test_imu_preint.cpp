#include "gpvio/errors.hpp"
#include "gpvio/imu_preint.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

namespace gpvio {
namespace {

using oracle::numeric_jacobian;
using oracle::relative_difference;

ImuState random_state(std::mt19937_64& rng, double stamp) {
  ImuState s;
  s.stamp = stamp;
  s.pose = oracle::random_pose(rng);
  s.velocity = oracle::random_vector(rng, 3);
  s.bias = ImuBias::from_vector(Vector6(oracle::random_vector(rng, 6, 0.01)));
  return s;
}

ImuState perturb(const ImuState& x, const Eigen::VectorXd& d) {
  ImuState y = x;
  y.pose = x.pose * se3_exp<double>(Vector6(d.segment<6>(0)));
  y.velocity += d.segment<3>(6);
  y.bias = ImuBias::from_vector(Vector6(x.bias.vector() + d.segment<6>(9)));
  return y;
}

TEST(ImuPreint, StationaryLevelSensor) {
  // A level sensor at rest measures +g along z and integrates to zero motion
  // once gravity is added back.
  std::vector<ImuSample> samples;
  for (int i = 0; i <= 40; ++i) samples.push_back({i * 0.005, Vector3::Zero(), Vector3(0, 0, 9.81)});
  const PreintegratedImu p = integrate(samples, ImuBias{}, ImuNoiseConfig{});
  EXPECT_LT(so3_log(p.delta_r).norm(), 1e-15);
  EXPECT_LT((p.delta_v - Vector3(0, 0, 9.81 * 0.2)).norm(), 1e-12);
  ImuState x;
  const ImuState y = predict(x, p);
  EXPECT_LT(y.velocity.norm(), 1e-12);
  EXPECT_LT(y.pose.translation().norm(), 1e-12);
}

TEST(ImuPreint, ConstantRateRotationIsExact) {
  const Vector3 w(0.3, -0.2, 0.9);
  std::vector<ImuSample> samples;
  for (int i = 0; i <= 100; ++i) samples.push_back({i * 0.01, w, Vector3::Zero()});
  const PreintegratedImu p = integrate(samples, ImuBias{}, ImuNoiseConfig{});
  EXPECT_LT(rotation_angle(p.delta_r, so3_exp<double>(Vector3(w * 1.0))), 1e-12);
}

TEST(ImuPreint, MatchesRk4OnSinusoidsHalfSecond) {
  const oracle::ImuSignal sig = oracle::default_signal();
  const auto samples = oracle::sample_signal(sig, 0.0, 0.5, 200.0);
  const PreintegratedImu p = integrate(samples, ImuBias{}, ImuNoiseConfig{});
  const oracle::Increments ref = oracle::rk4_increments(sig, 0.0, 0.5);
  const oracle::RelativeErrors e = oracle::relative_errors(p.delta_r, p.delta_v, p.delta_p, ref);
  // Second-order scheme at 200 Hz; observed 4.5e-5 / 1.5e-5 / 1.5e-5.
  EXPECT_LT(e.rotation, 6e-5);
  EXPECT_LT(e.velocity, 2e-5);
  EXPECT_LT(e.position, 2e-5);
}

TEST(ImuPreint, ErrorIsSecondOrderInSampleSpacing) {
  const oracle::ImuSignal sig = oracle::default_signal();
  const oracle::Increments ref = oracle::rk4_increments(sig, 0.0, 1.0);
  double previous = 0.0;
  for (double rate : {100.0, 200.0, 400.0, 800.0}) {
    const PreintegratedImu p =
        integrate(oracle::sample_signal(sig, 0.0, 1.0, rate), ImuBias{}, ImuNoiseConfig{});
    const double err = oracle::relative_errors(p.delta_r, p.delta_v, p.delta_p, ref).max();
    if (previous > 0.0) {
      EXPECT_GT(previous / err, 3.0) << "rate " << rate;
      EXPECT_LT(previous / err, 5.0) << "rate " << rate;
    }
    previous = err;
  }
}

TEST(ImuPreint, BiasIsSubtracted) {
  const oracle::ImuSignal sig = oracle::default_signal();
  auto samples = oracle::sample_signal(sig, 0.0, 0.3, 200.0);
  ImuBias b;
  b.accel = Vector3(0.1, -0.05, 0.2);
  b.gyro = Vector3(0.01, 0.02, -0.03);
  const PreintegratedImu clean = integrate(samples, ImuBias{}, ImuNoiseConfig{});
  for (ImuSample& s : samples) {
    s.accel += b.accel;
    s.gyro += b.gyro;
  }
  const PreintegratedImu biased = integrate(samples, b, ImuNoiseConfig{});
  EXPECT_LT(rotation_angle(clean.delta_r, biased.delta_r), 1e-12);
  EXPECT_LT((clean.delta_v - biased.delta_v).norm(), 1e-12);
  EXPECT_LT((clean.delta_p - biased.delta_p).norm(), 1e-12);
}

TEST(ImuPreint, ResidualVanishesAtPrediction) {
  std::mt19937_64 rng(21);
  const auto samples = oracle::sample_signal(oracle::default_signal(), 1.0, 1.05, 200.0);
  const PreintegratedImu p = integrate(samples, ImuBias{}, ImuNoiseConfig{});
  for (int i = 0; i < 20; ++i) {
    const ImuState x = random_state(rng, 1.0);
    const ImuState y = predict(x, p);
    EXPECT_LT(residual(x, y, p).residual.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ImuPreint, ResidualJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(22);
  const auto samples = oracle::sample_signal(oracle::default_signal(), 0.0, 0.05, 200.0);
  const PreintegratedImu p = integrate(samples, ImuBias{}, ImuNoiseConfig{});
  for (int i = 0; i < 100; ++i) {
    const ImuState x = random_state(rng, 0.0);
    ImuState y = perturb(predict(x, p), oracle::random_vector(rng, 15, 0.2));
    const ImuResidual r = residual(x, y, p);
    const auto fk = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return residual(perturb(x, d), y, p).residual;
    };
    const auto fk1 = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return residual(x, perturb(y, d), p).residual;
    };
    EXPECT_LT(relative_difference(r.jacobian_k, numeric_jacobian(fk, Eigen::VectorXd::Zero(15))), 1e-5);
    EXPECT_LT(relative_difference(r.jacobian_k1, numeric_jacobian(fk1, Eigen::VectorXd::Zero(15))),
              1e-5);
  }
}

TEST(ImuPreint, ResidualRejectsMismatchedStates) {
  const auto samples = oracle::sample_signal(oracle::default_signal(), 0.0, 0.05, 200.0);
  const PreintegratedImu p = integrate(samples, ImuBias{}, ImuNoiseConfig{});
  ImuState x;
  ImuState y;
  y.stamp = 0.06;
  EXPECT_THROW(residual(x, y, p), AssociationError);
}

TEST(ImuPreint, CovarianceMatchesMonteCarlo) {
  const oracle::ImuSignal sig = oracle::default_signal();
  const double rate = 200.0;
  const auto clean = oracle::sample_signal(sig, 0.0, 0.5, rate);
  ImuNoiseConfig noise;
  noise.gyro_noise_density = 0.01;
  noise.accel_noise_density = 0.05;
  const PreintegratedImu nominal = integrate(clean, ImuBias{}, noise);

  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 1.0);
  const double sg = noise.gyro_noise_density * std::sqrt(rate);
  const double sa = noise.accel_noise_density * std::sqrt(rate);
  const int runs = 3000;
  Eigen::MatrixXd errs(9, runs);
  for (int k = 0; k < runs; ++k) {
    auto samples = clean;
    for (ImuSample& s : samples) {
      s.gyro += sg * Vector3(n(rng), n(rng), n(rng));
      s.accel += sa * Vector3(n(rng), n(rng), n(rng));
    }
    const PreintegratedImu q = integrate(samples, ImuBias{}, noise);
    errs.col(k) << so3_log(nominal.delta_r.inverse() * q.delta_r), q.delta_v - nominal.delta_v,
        q.delta_p - nominal.delta_p;
  }
  const Matrix9 sample_cov = errs * errs.transpose() / runs;
  for (int i = 0; i < 9; ++i) {
    const double ratio = sample_cov(i, i) / nominal.covariance(i, i);
    EXPECT_GT(ratio, 0.85) << "diag " << i;
    EXPECT_LT(ratio, 1.15) << "diag " << i;
  }
}

TEST(ImuPreint, SliceInterpolatesBoundaries) {
  std::vector<ImuSample> stream;
  for (int i = 0; i <= 10; ++i)
    stream.push_back({i * 0.1, Vector3(i, 0, 0), Vector3(0, 2.0 * i, 0)});
  const auto slice = slice_samples(stream, 0.25, 0.6);
  ASSERT_EQ(slice.size(), 5u);
  EXPECT_DOUBLE_EQ(slice.front().stamp, 0.25);
  EXPECT_NEAR(slice.front().gyro.x(), 2.5, 1e-12);
  EXPECT_NEAR(slice.back().accel.y(), 12.0, 1e-12);
  EXPECT_DOUBLE_EQ(slice[1].stamp, 0.3);
  EXPECT_THROW(slice_samples(stream, 0.5, 1.5), StreamError);
  EXPECT_THROW(slice_samples(stream, 0.5, 0.5), OrderingError);
}

TEST(ImuPreint, StreamValidation) {
  std::vector<ImuSample> bad = {{0.0, {}, {}}, {0.0, {}, {}}};
  EXPECT_THROW(integrate(bad, ImuBias{}, ImuNoiseConfig{}), StreamError);
  std::vector<ImuSample> one = {{0.0, {}, {}}};
  EXPECT_THROW(integrate(one, ImuBias{}, ImuNoiseConfig{}), StreamError);
  ImuNoiseConfig cfg;
  cfg.gyro_noise_density = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ImuPreint, CsvRoundTrip) {
  const auto samples = oracle::sample_signal(oracle::default_signal(), 0.0, 0.1, 200.0);
  const auto path = std::filesystem::temp_directory_path() / "gpvio_imu_roundtrip.csv";
  write_imu_csv(path, samples);
  const auto back = read_imu_csv(path);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].stamp, samples[i].stamp);
    EXPECT_EQ(back[i].gyro, samples[i].gyro);
    EXPECT_EQ(back[i].accel, samples[i].accel);
  }
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace gpvio
