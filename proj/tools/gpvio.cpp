// gpvio command-line tool: simulate, run, evaluate, compare.
//
// Every option can also be given in an INI file passed with --config; values
// on the command line take precedence over the file.

#include "gpvio/errors.hpp"
#include "gpvio/estimator.hpp"
#include "gpvio/metrics.hpp"
#include "gpvio/sim.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace gpvio::cli {
namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

/// Flat option set shared by every subcommand; names double as INI keys.
struct Options {
  // Scenario.
  std::string trajectory = "sinusoidal_6dof";
  double duration = 10.0;
  std::uint64_t seed = 1;
  double imu_rate = 200.0;
  double gyro_noise_density = 1e-3;
  double accel_noise_density = 1e-2;
  double gyro_bias_walk = 1e-5;
  double accel_bias_walk = 1e-4;
  bool imu_noise = true;
  bool bias_random_walk = true;
  double pixel_sigma = 1.0;
  double track_rate = 20.0;
  double max_track_duration = 1.5;
  int landmarks = 80;
  double fx = 250.0;
  double fy = 250.0;
  double cx = 173.0;
  double cy = 130.0;
  int width = 346;
  int height = 260;

  // Estimator.
  std::string backend = "ct_imu";
  double knot_interval = 0.05;
  int min_window_size = 40;
  double qc = 0.05;
  int num_latent = 400;
  std::optional<double> lengthscale_r, variance_r, sigma_r;
  std::optional<double> lengthscale_a, variance_a, sigma_a;
  double huber_delta = kDefaultHuberDelta;
  int max_iterations = 20;
  int min_track_observations = 4;
  std::string init = "ground_truth";

  // Paths.
  std::string dataset;
  std::string out;
  std::string estimate;
  std::string groundtruth;
};

void add_scenario_options(CLI::App& app, Options& o) {
  app.add_option("--trajectory", o.trajectory,
                 "constant_twist | sinusoidal_6dof | figure_eight | piecewise_smooth")
      ->capture_default_str();
  app.add_option("--duration", o.duration, "Scenario length [s]")->capture_default_str();
  app.add_option("--seed", o.seed, "RNG seed")->capture_default_str();
  app.add_option("--imu_rate", o.imu_rate, "IMU rate [Hz]")->capture_default_str();
  app.add_option("--gyro_noise_density", o.gyro_noise_density, "rad/s/sqrt(Hz)")->capture_default_str();
  app.add_option("--accel_noise_density", o.accel_noise_density, "m/s^2/sqrt(Hz)")->capture_default_str();
  app.add_option("--gyro_bias_walk", o.gyro_bias_walk, "rad/s^2/sqrt(Hz)")->capture_default_str();
  app.add_option("--accel_bias_walk", o.accel_bias_walk, "m/s^3/sqrt(Hz)")->capture_default_str();
  app.add_option("--imu_noise", o.imu_noise, "Add white IMU noise")->capture_default_str();
  app.add_option("--bias_random_walk", o.bias_random_walk, "Let biases drift")->capture_default_str();
  app.add_option("--pixel_sigma", o.pixel_sigma, "Feature noise [px]")->capture_default_str();
  app.add_option("--track_rate", o.track_rate, "Observations per track per second")->capture_default_str();
  app.add_option("--max_track_duration", o.max_track_duration, "Track length cap [s]")->capture_default_str();
  app.add_option("--landmarks", o.landmarks, "Landmark count")->capture_default_str();
  app.add_option("--fx", o.fx)->capture_default_str();
  app.add_option("--fy", o.fy)->capture_default_str();
  app.add_option("--cx", o.cx)->capture_default_str();
  app.add_option("--cy", o.cy)->capture_default_str();
  app.add_option("--width", o.width)->capture_default_str();
  app.add_option("--height", o.height)->capture_default_str();
}

void add_estimator_options(CLI::App& app, Options& o) {
  app.add_option("--backend", o.backend, "ct_imu | gp_imu")->capture_default_str();
  app.add_option("--knot_interval", o.knot_interval, "Knot spacing [s]")->capture_default_str();
  app.add_option("--min_window_size", o.min_window_size, "Knots kept after marginalization")
      ->capture_default_str();
  app.add_option("--qc", o.qc, "WNOA power spectral density, Qc = qc * I")->capture_default_str();
  app.add_option("--num_latent", o.num_latent, "GP latent states per interval")->capture_default_str();
  app.add_option("--lengthscale_r", o.lengthscale_r, "Rotation kernel lengthscale [s]");
  app.add_option("--variance_r", o.variance_r, "Rotation kernel variance");
  app.add_option("--sigma_r", o.sigma_r, "Rotation latent noise std");
  app.add_option("--lengthscale_a", o.lengthscale_a, "Acceleration kernel lengthscale [s]");
  app.add_option("--variance_a", o.variance_a, "Acceleration kernel variance");
  app.add_option("--sigma_a", o.sigma_a, "Acceleration latent noise std");
  app.add_option("--huber_delta", o.huber_delta, "Huber threshold on whitened pixels")
      ->capture_default_str();
  app.add_option("--max_iterations", o.max_iterations, "LM iterations per step")->capture_default_str();
  app.add_option("--min_track_observations", o.min_track_observations)->capture_default_str();
  app.add_option("--init", o.init, "ground_truth | rest")->capture_default_str();
}

ScenarioConfig scenario_config(const Options& o) {
  ScenarioConfig s;
  s.trajectory.kind = parse_trajectory_kind(o.trajectory);
  s.trajectory.duration = o.duration;
  s.seed = o.seed;
  s.rig.imu_rate = o.imu_rate;
  s.rig.noise.gyro_noise_density = o.gyro_noise_density;
  s.rig.noise.accel_noise_density = o.accel_noise_density;
  s.rig.noise.gyro_bias_walk = o.gyro_bias_walk;
  s.rig.noise.accel_bias_walk = o.accel_bias_walk;
  s.rig.imu_noise = o.imu_noise;
  s.rig.bias_random_walk = o.bias_random_walk;
  s.rig.pixel_sigma = o.pixel_sigma;
  s.rig.track_rate = o.track_rate;
  s.rig.max_track_duration = o.max_track_duration;
  s.rig.camera = CameraModel::pinhole(o.fx, o.fy, o.cx, o.cy, s.rig.camera.body_to_camera,
                                      o.width, o.height);
  s.field.count = o.landmarks;
  s.trajectory.validate();
  s.rig.validate();
  if (s.field.count < 1) throw ConfigError("landmarks must be positive");
  if (!(s.rig.pixel_sigma >= 0.0)) throw ConfigError("pixel_sigma must be non-negative");
  return s;
}

EstimatorConfig estimator_config(const Options& o, Backend backend) {
  EstimatorConfig e;
  e.window.backend = backend;
  e.window.knot_interval = o.knot_interval;
  e.window.min_window_size = o.min_window_size;
  e.window.solver.max_iterations = o.max_iterations;
  e.noise.gyro_noise_density = o.gyro_noise_density;
  e.noise.accel_noise_density = o.accel_noise_density;
  e.noise.gyro_bias_walk = o.gyro_bias_walk;
  e.noise.accel_bias_walk = o.accel_bias_walk;
  e.wnoa.qc = o.qc * Matrix6::Identity();
  e.kernel.num_latent = o.num_latent;
  e.kernel.lengthscale_r = o.lengthscale_r;
  e.kernel.variance_r = o.variance_r;
  e.kernel.sigma_r = o.sigma_r;
  e.kernel.lengthscale_a = o.lengthscale_a;
  e.kernel.variance_a = o.variance_a;
  e.kernel.sigma_a = o.sigma_a;
  e.camera = scenario_config(o).rig.camera;
  e.pixel_noise.sigma = o.pixel_sigma > 0.0 ? o.pixel_sigma : 1.0;
  e.pixel_noise.huber_delta = o.huber_delta;
  e.min_track_observations = o.min_track_observations;
  e.validate();
  return e;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << text;
  if (!os) throw Error("cannot write " + path.string());
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

Dataset load_or_simulate(const Options& o) {
  if (!o.dataset.empty()) return read_dataset(o.dataset);
  return simulate(scenario_config(o));
}

ordered_json stage_totals(const RunResult& r) {
  return {{"steps", r.steps.size()},
          {"optimization_ms", r.totals.optimization_ms},
          {"marginalization_ms", r.totals.marginalization_ms},
          {"preintegration_ms", r.totals.preintegration_ms},
          {"others_ms", r.totals.others_ms}};
}

ordered_json run_summary(const RunResult& r) {
  return {{"backend", to_string(r.backend)},
          {"status", r.failed ? "failed" : "ok"},
          {"failure", r.failure},
          {"steps", r.steps.size()},
          {"poses", r.trajectory.size()},
          {"stalled_solves", r.stats.stalled_solves},
          {"triangulated_tracks", r.stats.triangulated_tracks},
          {"rejected_tracks", r.stats.rejected_tracks},
          {"dropped_observations", r.stats.dropped_observations},
          {"marginal_floor_warnings", r.stats.marginal_floor_warnings},
          {"bias_refits", r.stats.bias_refits}};
}

/// Runs one back-end and writes trajectory.txt, timing.csv and run.json under `dir`.
RunResult run_into(const Dataset& data, const EstimatorConfig& cfg, InitMode init,
                   const fs::path& dir) {
  fs::create_directories(dir);
  RunResult r = run_estimator(data, cfg, init, [](const StepTiming& t) {
    if (t.stalled)
      std::cerr << "warning: solver stalled at t=" << t.stamp << " (cost " << t.final_cost << ")\n";
  });
  write_tum(dir / "trajectory.txt", r.trajectory);
  write_timing_csv(dir / "timing.csv", r.steps);
  write_text(dir / "run.json", run_summary(r).dump(2) + "\n");
  write_text(dir / "stages.json", stage_totals(r).dump(2) + "\n");
  return r;
}

int cmd_simulate(const Options& o) {
  const fs::path out = require_out(o);
  const Dataset data = simulate(scenario_config(o));
  write_dataset(out, data);
  std::cout << "wrote " << data.imu.size() << " IMU samples, " << data.tracks.size()
            << " observations, " << data.ground_truth.size() << " ground-truth poses to "
            << out.string() << "\n";
  return 0;
}

int cmd_run(const Options& o) {
  const Backend backend = parse_backend(o.backend);
  const InitMode init = parse_init_mode(o.init);
  const EstimatorConfig cfg = estimator_config(o, backend);
  const fs::path out = require_out(o);
  const Dataset data = load_or_simulate(o);
  const RunResult r = run_into(data, cfg, init, out);
  std::cout << to_string(backend) << ": " << r.steps.size() << " steps, " << r.trajectory.size()
            << " poses, " << r.stats.stalled_solves << " stalled solves\n";
  if (r.failed) {
    std::cerr << "run failed: " << r.failure << "\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_evaluate(const Options& o) {
  if (o.estimate.empty() || o.groundtruth.empty())
    throw ConfigError("--estimate and --groundtruth are required");
  const MetricsReport m = evaluate(read_tum(o.estimate), read_tum(o.groundtruth));
  const std::string json = m.to_json();
  if (!o.out.empty()) write_text(o.out, json + "\n");
  std::cout << json << "\n";
  return 0;
}

int cmd_compare(const Options& o) {
  const InitMode init = parse_init_mode(o.init);
  const EstimatorConfig ct = estimator_config(o, Backend::kCtImu);
  const EstimatorConfig gp = estimator_config(o, Backend::kGpImu);
  const fs::path out = require_out(o);
  const Dataset data = load_or_simulate(o);

  ordered_json accuracy;
  ordered_json timing;
  std::ostringstream table;
  table << "| back-end | RMS RTE 0.5 s (m) | RMS RTE 1 s (m) | RMS RTE 2 s (m) | yaw 1 s (deg) |\n"
        << "|---|---|---|---|---|\n";
  std::ostringstream stages;
  stages << "| back-end | optimization (ms) | marginalization (ms) | preintegration (ms) | "
            "others (ms) | total (ms) |\n|---|---|---|---|---|---|\n";
  bool failed = false;
  for (const EstimatorConfig* cfg : {&ct, &gp}) {
    const std::string name = to_string(cfg->window.backend);
    const RunResult r = run_into(data, *cfg, init, out / name);
    failed = failed || r.failed;
    ordered_json entry = run_summary(r);
    try {
      const MetricsReport m = evaluate(r.trajectory, data.ground_truth);
      entry["metrics"] = ordered_json::parse(m.to_json());
      table << "| " << name;
      for (double d : {0.5, 1.0, 2.0}) {
        const RteResult* e = m.at(d);
        table << " | " << (e ? num(e->translation_rms) : "n/a");
      }
      const RteResult* e = m.at(1.0);
      table << " | " << (e ? num(e->yaw_rms_deg) : "n/a") << " |\n";
    } catch (const InsufficientOverlapError& err) {
      entry["metrics"] = {{"error", err.what()}};
      table << "| " << name << " | n/a | n/a | n/a | n/a |\n";
    }
    accuracy[name] = entry;
    timing[name] = stage_totals(r);
    const auto& t = r.totals;
    stages << "| " << name << " | " << num(t.optimization_ms) << " | " << num(t.marginalization_ms)
           << " | " << num(t.preintegration_ms) << " | " << num(t.others_ms) << " | "
           << num(t.optimization_ms + t.marginalization_ms + t.preintegration_ms + t.others_ms)
           << " |\n";
  }
  write_text(out / "accuracy.json", accuracy.dump(2) + "\n");
  write_text(out / "accuracy.md", table.str());
  write_text(out / "timing.json", timing.dump(2) + "\n");
  write_text(out / "timing.md", stages.str());
  std::cout << table.str() << "\n" << stages.str();
  return failed ? kExitRuntime : 0;
}

void write_failure(const Options& o, const std::string& command, const std::string& kind,
                   const std::string& what) {
  std::cerr << "error: " << what << "\n";
  if (o.out.empty() || command == "evaluate") return;
  try {
    const ordered_json report = {{"command", command}, {"status", "failed"},
                                 {"kind", kind}, {"message", what}};
    write_text(fs::path(o.out) / "failure.json", report.dump(2) + "\n");
  } catch (const std::exception&) {
    // The failure is already on stderr.
  }
}

/// Arguments with the --config file spliced in ahead of the command-line flags,
/// so that flags (parsed last, last value wins) override the file. Keys that
/// belong to another subcommand are skipped; keys no subcommand knows are errors.
std::vector<std::string> expand_config(int argc, char** argv, const CLI::App& app) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) return args;
  const CLI::App* sub = app.get_subcommand_no_throw(args.front());
  std::string file;
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (sub == nullptr || file.empty()) return args;

  std::vector<std::string> out = {args.front()};
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(file)) {
    // "++" and "--" mark section boundaries.
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && item.parents.front() != sub->get_name()) continue;
    const std::string flag = "--" + item.name;
    if (sub->get_option_no_throw(flag) == nullptr) {
      bool known = false;
      for (const CLI::App* other : app.get_subcommands({}))
        known = known || other->get_option_no_throw(flag) != nullptr;
      if (!known) throw ConfigError("unknown config key '" + item.name + "' in " + file);
      continue;
    }
    out.push_back(flag);
    out.insert(out.end(), item.inputs.begin(), item.inputs.end());
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace
}  // namespace gpvio::cli

int main(int argc, char** argv) {
  using namespace gpvio::cli;
  Options o;
  CLI::App app{"Continuous-time visual-inertial estimation on simulated data"};
  app.require_subcommand(1);

  CLI::App* simulate = app.add_subcommand("simulate", "Write a simulated dataset directory");
  CLI::App* run = app.add_subcommand("run", "Run one back-end: trajectory, timing and run report");
  CLI::App* evaluate = app.add_subcommand("evaluate", "RMS relative trajectory error report");
  CLI::App* compare = app.add_subcommand("compare", "Run both back-ends on the same dataset");

  for (CLI::App* sub : {simulate, run, compare}) {
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config", "INI file of option = value lines; flags override it");
    add_scenario_options(*sub, o);
    sub->add_option("--out", o.out, "Output directory");
  }
  for (CLI::App* sub : {run, compare}) {
    add_estimator_options(*sub, o);
    sub->add_option("--dataset", o.dataset, "Dataset directory; simulated from the config if absent");
  }
  evaluate->add_option("--estimate", o.estimate, "Estimated trajectory (TUM)")->required();
  evaluate->add_option("--groundtruth", o.groundtruth, "Reference trajectory (TUM)")->required();
  evaluate->add_option("--out", o.out, "Write the JSON report here");

  try {
    std::vector<std::string> args = expand_config(argc, argv, app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const gpvio::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  std::string command;
  for (CLI::App* sub : app.get_subcommands()) command = sub->get_name();
  try {
    if (command == "simulate") return cmd_simulate(o);
    if (command == "run") return cmd_run(o);
    if (command == "evaluate") return cmd_evaluate(o);
    return cmd_compare(o);
  } catch (const gpvio::ConfigError& e) {
    write_failure(o, command, "config", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    write_failure(o, command, "runtime", e.what());
    return kExitRuntime;
  }
}
