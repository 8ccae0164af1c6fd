// Micro-benchmarks for the per-step building blocks: preintegration on a
// knot interval, GP fit and query, one window solve and one marginalization.

#include "gpvio/estimator.hpp"
#include "gpvio/gp_preint.hpp"
#include "gpvio/imu_preint.hpp"
#include "gpvio/sim.hpp"

#include <benchmark/benchmark.h>

namespace gpvio {
namespace {

std::vector<ImuSample> imu_span(double length) {
  TrajectorySpec spec;
  spec.duration = 2.0 + length;
  SensorRig rig;
  const auto imu = synthesize_imu(spec, rig, 1);
  return slice_samples(imu, 1.0, 1.0 + length);
}

void BM_ClassicalPreintegration(benchmark::State& state) {
  const auto samples = imu_span(0.05 * static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(integrate(samples, ImuBias{}, ImuNoiseConfig{}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(samples.size()));
}
BENCHMARK(BM_ClassicalPreintegration)->Arg(1)->Arg(20);

void BM_GpFit(benchmark::State& state) {
  const auto samples = imu_span(0.05);
  GpKernelConfig cfg;
  cfg.num_latent = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(fit_latent(samples, ImuBias{}, cfg));
}
BENCHMARK(BM_GpFit)->Arg(50)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_GpQuery(benchmark::State& state) {
  const auto samples = imu_span(0.05);
  GpKernelConfig cfg;
  cfg.num_latent = static_cast<int>(state.range(0));
  const LatentGpModel model = fit_latent(samples, ImuBias{}, cfg);
  const double tau = 0.5 * (model.anchor_stamp() + model.end_stamp());
  const bool covariance = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(query(model, tau, covariance));
}
BENCHMARK(BM_GpQuery)->Args({100, 0})->Args({400, 0})->Args({400, 1});

/// Estimator advanced until the window is full, ready for one more step.
struct FullWindow {
  Dataset data;
  EstimatorConfig cfg;
  std::unique_ptr<SlidingWindowEstimator> est;

  explicit FullWindow(Backend backend) {
    ScenarioConfig sc;
    sc.trajectory.duration = 4.0;
    data = simulate(sc);
    cfg.window.backend = backend;
    cfg.window.min_window_size = 20;
    cfg.kernel.num_latent = 100;
    est = std::make_unique<SlidingWindowEstimator>(cfg, data.initial);
    const double dt = cfg.window.knot_interval;
    std::size_t imu = 0;
    std::size_t obs = 0;
    for (int k = 1; k <= 2 * cfg.window.min_window_size; ++k) {
      const double now = k * dt;
      const std::size_t imu_end = static_cast<std::size_t>(
          std::upper_bound(data.imu.begin(), data.imu.end(), now,
                           [](double t, const ImuSample& s) { return t < s.stamp; }) -
          data.imu.begin());
      const std::size_t obs_end = static_cast<std::size_t>(
          std::upper_bound(data.tracks.begin(), data.tracks.end(), now,
                           [](double t, const FeatureObservation& o) { return t < o.stamp; }) -
          data.tracks.begin());
      est->step(std::span(data.imu).subspan(imu, imu_end - imu),
                std::span(data.tracks).subspan(obs, obs_end - obs), now);
      imu = imu_end;
      obs = obs_end;
    }
  }
};

void BM_WindowSolve(benchmark::State& state) {
  FullWindow w(state.range(0) == 0 ? Backend::kCtImu : Backend::kGpImu);
  const Values start = w.est->values();
  for (auto _ : state) {
    state.PauseTiming();
    w.est->mutable_values() = start;
    state.ResumeTiming();
    benchmark::DoNotOptimize(w.est->solve());
  }
  state.SetLabel(to_string(w.cfg.window.backend));
}
BENCHMARK(BM_WindowSolve)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Marginalization(benchmark::State& state) {
  FullWindow w(state.range(0) == 0 ? Backend::kCtImu : Backend::kGpImu);
  const std::vector<FactorPtr> factors = w.est->build_problem();
  const std::int64_t k = w.est->first_knot();
  std::set<Key> marg = {pose_key(k), bias_key(k)};
  marg.insert(w.cfg.window.backend == Backend::kCtImu ? twist_key(k) : velocity_key(k));
  for (auto _ : state) benchmark::DoNotOptimize(marginalize(factors, w.est->values(), marg));
  state.SetLabel(to_string(w.cfg.window.backend));
}
BENCHMARK(BM_Marginalization)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace gpvio

BENCHMARK_MAIN();
