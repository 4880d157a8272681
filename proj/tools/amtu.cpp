// amtu: batch front end for the perception-planning-control pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"

#include "amtu/evaluate.hpp"
#include "amtu/pipeline.hpp"

namespace {

using namespace amtu;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitInternal = 2;

bool is_input_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::IoFailure:
    case ErrorCode::ParseError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::NonPositiveInput:
    case ErrorCode::LabelOutOfRange:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::CameraBelowGround:
    case ErrorCode::NonPositiveDt:
      return true;
    default:
      return false;
  }
}

void print_artifacts(const std::vector<std::string>& paths) {
  for (const auto& p : paths) {
    if (fs::exists(p)) fmt::print("artifact {}\n", p);
  }
}

struct SceneFlags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> route;
  std::optional<double> length;
  std::optional<double> radius;
  std::optional<double> speed;
  std::optional<int> obstacles;
  bool no_gps = false;

  void add(CLI::App* app) {
    app->add_option("--seed", seed, "Scene and noise seed");
    app->add_option("--scene-route", route, "Generated route shape")
        ->check(CLI::IsMember({"straight", "circle", "loop"}));
    app->add_option("--length", length, "Straight length or loop perimeter (m)");
    app->add_option("--radius", radius, "Circle radius (m)");
    app->add_option("--speed", speed, "Route target speed (m/s)");
    app->add_option("--obstacles", obstacles, "Number of obstacles placed beside the route");
    app->add_flag("--no-gps", no_gps, "Disable simulated GPS");
  }

  void apply(pipeline::PipelineConfig& cfg) const {
    if (seed) {
      cfg.sim.scene.seed = *seed;
      cfg.sim.dynamics.seed = *seed;
      cfg.sim.sensors.seed = *seed;
    }
    if (route) cfg.sim.scene.route = *route;
    if (length) cfg.sim.scene.length = *length;
    if (radius) cfg.sim.scene.radius = *radius;
    if (speed) cfg.sim.scene.speed = *speed;
    if (obstacles) cfg.sim.scene.obstacle_count = *obstacles;
    if (no_gps) cfg.sim.sensors.gps_enabled = false;
  }
};

pipeline::PipelineConfig base_config(const std::optional<std::string>& path) {
  return path ? pipeline::load_config(*path) : pipeline::PipelineConfig{};
}

void print_summary(const pipeline::RunSummary& s) {
  fmt::print("frames {} skipped {} warnings {} duration_s {:.2f}\n", s.frames, s.skipped_frames, s.warnings,
             s.duration_s);
  if (s.cross_track_rms_m) {
    fmt::print("cross_track_rms_m {:.4f} final_m {:.4f}\n", *s.cross_track_rms_m, s.cross_track_final_m.value_or(0));
  }
  if (s.final_drift_m) {
    fmt::print("final_drift_m {:.4f} drift_percent {:.3f}\n", *s.final_drift_m, s.drift_percent.value_or(0));
  }
  fmt::print("cycle_ms p50 {:.2f} p90 {:.2f} max {:.2f} (budget {:.0f})\n", s.total_ms.p50, s.total_ms.p90,
             s.total_ms.max, s.budget_ms);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedded-vision navigation pipeline: run, evaluate, simgen, coverage"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline on a dataset directory or a live simulation");
  std::optional<std::string> dataset_dir, config_path, route_path;
  std::string out_dir;
  bool sim_mode = false, wall_clock = false, truth_state = false, verbose = false;
  std::optional<double> max_duration;
  std::optional<int> laps;
  SceneFlags run_scene;
  run->add_option("dataset", dataset_dir, "Recorded dataset directory (simgen layout)");
  run->add_flag("--sim", sim_mode, "Simulate the world live instead of reading a dataset");
  run->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  run->add_option("--route", route_path, "Route CSV (x_m,y_m,v_target_mps)")->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--max-duration", max_duration, "Simulation time limit (s)");
  run->add_option("--laps", laps, "Laps on closed routes");
  run->add_flag("--wall-clock", wall_clock, "Log real solve times in control.csv");
  run->add_flag("--truth-state", truth_state, "Plan and control on the simulated truth state");
  run->add_flag("-v,--verbose", verbose, "Echo the log to stderr");
  run_scene.add(run);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score predicted label maps against ground truth");
  std::string pred_dir, gt_dir, report_path = "evaluation_report.txt";
  int num_classes = percepts::kDefaultClassCount, min_box_area = 20;
  evaluate->add_option("pred_dir", pred_dir, "Predicted *_sem.png / *_inst.png tree")->required();
  evaluate->add_option("gt_dir", gt_dir, "Ground-truth tree with the same relative names")->required();
  evaluate->add_option("--classes", num_classes, "Number of semantic classes N")->check(CLI::PositiveNumber);
  evaluate->add_option("--min-box-area", min_box_area, "Minimum component area for boxes");
  evaluate->add_option("--report", report_path, "Report file");
  std::optional<std::string> boxes_out;
  evaluate->add_option("--boxes-out", boxes_out, "Write the predicted boxes as CSV");

  // simgen
  auto* simgen = app.add_subcommand("simgen", "Record a synthetic dataset");
  std::optional<std::string> gen_config, script_path;
  std::string gen_out;
  double gen_duration = 10.0;
  SceneFlags gen_scene;
  simgen->add_option("--out", gen_out, "Dataset directory")->required();
  simgen->add_option("--config", gen_config, "JSON configuration file")->check(CLI::ExistingFile);
  simgen->add_option("--script", script_path, "Command script CSV (t_s,v_mps,omega_radps); autopilot otherwise")
      ->check(CLI::ExistingFile);
  simgen->add_option("--duration", gen_duration, "Recorded duration (s)")->check(CLI::PositiveNumber);
  gen_scene.add(simgen);

  // coverage
  auto* coverage = app.add_subcommand("coverage", "Distance covered on one charge");
  double v_max = 1.5, hours = 6.0;
  coverage->add_option("--v-max", v_max, "Maximum velocity (m/s)");
  coverage->add_option("--hours", hours, "Endurance (h)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (run->parsed()) {
      if (sim_mode == dataset_dir.has_value()) {
        fmt::print(stderr, "error: give exactly one of a dataset directory or --sim\n");
        return kExitInput;
      }
      pipeline::PipelineConfig cfg = base_config(config_path);
      run_scene.apply(cfg);
      if (max_duration) cfg.run.max_duration = *max_duration;
      if (laps) cfg.run.laps = *laps;
      if (wall_clock) cfg.run.wall_clock_log = true;
      if (truth_state) cfg.run.use_truth_state = true;
      pipeline::RunOptions opts{out_dir, route_path, !verbose};
      const pipeline::RunSummary s =
          sim_mode ? pipeline::run_sim(cfg, opts) : pipeline::run_dataset(*dataset_dir, cfg, opts);
      print_summary(s);
      print_artifacts(s.artifacts);
      return kExitOk;
    }

    if (evaluate->parsed()) {
      const auto ev = percepts::evaluate_directories(pred_dir, gt_dir, num_classes, min_box_area);
      const std::string text = percepts::format_report(ev);
      for (const auto& m : ev.missing_pairs) fmt::print(stderr, "warning: no prediction for {}\n", m);
      if (ev.frames.empty()) {
        fmt::print(stderr, "error: no pairs matched between {} and {}\n", pred_dir, gt_dir);
        return kExitInput;
      }
      fmt::print("{}", text);
      std::ofstream out(report_path);
      if (!out) fail(ErrorCode::IoFailure, "cannot write " + report_path);
      out << text;
      out.close();
      std::vector<std::string> written{report_path};
      if (boxes_out) {
        percepts::save_boxes_csv(*boxes_out, ev.predicted_boxes);
        written.push_back(*boxes_out);
      }
      print_artifacts(written);
      return kExitOk;
    }

    if (simgen->parsed()) {
      pipeline::PipelineConfig cfg = base_config(gen_config);
      gen_scene.apply(cfg);
      const sim::Scene scene = sim::make_scene(cfg.sim.scene);
      sim::RecordOptions ro;
      ro.duration = gen_duration;
      ro.camera_rate = cfg.run.camera_rate;
      ro.imu_rate = cfg.sim.imu_rate;
      ro.slip_long = cfg.sim.slip_long;
      ro.slip_lat = cfg.sim.slip_lat;
      ro.lidar = cfg.sim.lidar;
      ro.dynamics = cfg.sim.dynamics;
      ro.sensors = cfg.sim.sensors;
      sim::CommandSource source;
      if (script_path) {
        const sim::CommandScript script = sim::CommandScript::load_csv(*script_path);
        source = [script](const sim::SimState& s, const mapping::PointCloud&) { return script.at(s.time); };
      } else {
        source = pipeline::make_autopilot(scene, cfg);
      }
      const sim::RecordedDataset d = sim::record_dataset(scene, source, ro, gen_out);
      fmt::print("frames_per_camera {} total_frames {} lidar_sweeps {} imu_samples {} gps_fixes {} seed {}\n",
                 d.frames_per_camera, d.total_frames, d.lidar_sweeps, d.imu_samples, d.gps_fixes, d.seed);
      print_artifacts({gen_out + "/manifest.json", gen_out + "/calib.json", gen_out + "/route.csv",
                       gen_out + "/imu.csv", gen_out + "/gps.csv", gen_out + "/truth.csv"});
      return kExitOk;
    }

    if (coverage->parsed()) {
      fmt::print("{:.3f} km\n", pipeline::estimate_coverage(v_max, hours));
      return kExitOk;
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error [{}]: {}\n", to_string(e.code()), e.what());
    return is_input_error(e.code()) ? kExitInput : kExitInternal;
  } catch (const std::exception& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
