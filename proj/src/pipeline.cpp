#include "amtu/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "json.hpp"

#include "amtu/csv.hpp"
#include "amtu/report.hpp"

namespace amtu::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  return j.contains(key) ? j.at(key) : empty;
}

}  // namespace

PipelineConfig config_from_json(const std::string& json_text) {
  PipelineConfig c;
  try {
    const json root = json::parse(json_text);
    if (!root.is_object()) fail(ErrorCode::ParseError, "config root must be an object");

    const json& f = section(root, "features");
    read(f, "pyramid_levels", c.features.pyramid_levels);
    read(f, "lk_window_half", c.features.lk.window_half);
    read(f, "lk_max_iters", c.features.lk.max_iters);
    read(f, "lk_eps", c.features.lk.eps);
    read(f, "target_count", c.features.manager.target_count);
    read(f, "min_separation", c.features.manager.min_separation);
    read(f, "spawn_margin", c.features.manager.spawn_margin);
    read(f, "fast_threshold", c.features.manager.fast.threshold);
    read(f, "fast_arc_length", c.features.manager.fast.arc_length);
    read(f, "fast_nms_radius", c.features.manager.fast.nms_radius);

    const json& v = section(root, "odometry");
    read(v, "pnp_max_iterations", c.vo.pnp.max_iterations);
    read(v, "pnp_outlier_px", c.vo.pnp.outlier_threshold_px);
    read(v, "pnp_planar", c.vo.pnp.planar);
    read(v, "min_correspondences", c.vo.min_correspondences);
    read(v, "min_track_baseline", c.vo.min_track_baseline);
    read(v, "max_track_residual_px", c.vo.max_track_residual_px);
    read(v, "min_ray_angle_deg", c.vo.triangulation.min_ray_angle_deg);
    read(v, "max_triangulation_px", c.vo.triangulation.max_reprojection_px);
    read(v, "max_landmarks", c.vo.max_landmarks);
    read(v, "vision_gain", c.vo.fusion.vision_gain);
    read(v, "full_confidence_inliers", c.vo.fusion.full_confidence_inliers);
    read(v, "gps_process_sigma", c.vo.fusion.process_sigma);
    read(v, "max_gps_gain", c.vo.fusion.max_gps_gain);
    read(v, "v_max", c.vo.v_max);

    const json& m = section(root, "mapping");
    if (m.contains("traversable_classes")) {
      c.mapping.traversable_classes = m.at("traversable_classes").get<std::set<int>>();
    }
    read(m, "num_classes", c.mapping.num_classes);
    read(m, "grid_cells", c.mapping.grid_cells);
    read(m, "resolution", c.mapping.resolution);
    read(m, "ground_stride", c.mapping.ground.stride);
    read(m, "ground_max_range", c.mapping.ground.max_range);
    read(m, "min_obstacle_height", c.mapping.height.min_height);
    read(m, "max_obstacle_height", c.mapping.height.max_height);
    read(m, "min_box_area", c.mapping.min_box_area);

    const json& p = section(root, "planning");
    read(p, "v_max", c.planning.v_max);
    read(p, "omega_max", c.planning.omega_max);
    read(p, "a_v", c.planning.a_v);
    read(p, "a_omega", c.planning.a_omega);
    read(p, "dt_plan", c.planning.dt_plan);
    read(p, "horizon", c.planning.horizon);
    read(p, "samples_v", c.planning.samples_v);
    read(p, "samples_omega", c.planning.samples_omega);
    read(p, "w_heading", c.planning.weights.heading);
    read(p, "w_clearance", c.planning.weights.clearance);
    read(p, "w_velocity", c.planning.weights.velocity);
    read(p, "robot_radius", c.planning.robot_radius);
    read(p, "max_clearance", c.planning.max_clearance);
    read(p, "lookahead", c.planning.lookahead);

    const json& k = section(root, "control");
    read(k, "horizon_steps", c.control.horizon_steps);
    read(k, "dt_ctrl", c.control.dt_ctrl);
    read(k, "q_x", c.control.q_x);
    read(k, "q_y", c.control.q_y);
    read(k, "q_yaw", c.control.q_yaw);
    read(k, "r_v", c.control.r_v);
    read(k, "r_omega", c.control.r_omega);
    read(k, "v_bound", c.control.v_bound);
    read(k, "omega_bound", c.control.omega_bound);
    read(k, "v_rate", c.control.v_rate);
    read(k, "omega_rate", c.control.omega_rate);
    read(k, "max_iterations", c.control.max_iterations);
    read(k, "tolerance", c.control.tolerance);
    read(k, "track_width", c.control.track_width);

    const json& s = section(root, "sim");
    read(s, "seed", c.sim.scene.seed);
    read(s, "route", c.sim.scene.route);
    read(s, "length", c.sim.scene.length);
    read(s, "radius", c.sim.scene.radius);
    read(s, "speed", c.sim.scene.speed);
    read(s, "obstacles", c.sim.scene.obstacle_count);
    read(s, "obstacle_clearance", c.sim.scene.obstacle_clearance);
    read(s, "landmarks", c.sim.scene.landmark_count);
    read(s, "texture_density", c.sim.scene.texture.density);
    read(s, "slip_long", c.sim.slip_long);
    read(s, "slip_lat", c.sim.slip_lat);
    read(s, "dynamics_noise", c.sim.dynamics.enabled);
    read(s, "sigma_v", c.sim.dynamics.sigma_v);
    read(s, "sigma_omega", c.sim.dynamics.sigma_omega);
    read(s, "sigma_accel", c.sim.sensors.sigma_accel);
    read(s, "sigma_gyro", c.sim.sensors.sigma_gyro);
    read(s, "sigma_gps", c.sim.sensors.sigma_gps);
    read(s, "gps_period", c.sim.sensors.gps_period);
    read(s, "gps", c.sim.sensors.gps_enabled);
    read(s, "lidar_channels", c.sim.lidar.channels);
    read(s, "lidar_max_range", c.sim.lidar.max_range);
    read(s, "imu_rate", c.sim.imu_rate);
    c.sim.dynamics.seed = c.sim.scene.seed;
    c.sim.sensors.seed = c.sim.scene.seed;

    const json& r = section(root, "run");
    read(r, "camera_rate", c.run.camera_rate);
    read(r, "max_duration", c.run.max_duration);
    read(r, "laps", c.run.laps);
    read(r, "anchor_frames", c.run.anchor_frames);
    read(r, "use_truth_state", c.run.use_truth_state);
    read(r, "dump_every", c.run.dump_every);
    read(r, "grid_every", c.run.grid_every);
    read(r, "annotate_every", c.run.annotate_every);
    read(r, "wall_clock_log", c.run.wall_clock_log);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
  c.planning.validate();
  c.control.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open config " + path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["features"] = {{"pyramid_levels", c.features.pyramid_levels},
                   {"lk_window_half", c.features.lk.window_half},
                   {"lk_max_iters", c.features.lk.max_iters},
                   {"lk_eps", c.features.lk.eps},
                   {"target_count", c.features.manager.target_count},
                   {"min_separation", c.features.manager.min_separation},
                   {"spawn_margin", c.features.manager.spawn_margin},
                   {"fast_threshold", c.features.manager.fast.threshold},
                   {"fast_arc_length", c.features.manager.fast.arc_length},
                   {"fast_nms_radius", c.features.manager.fast.nms_radius}};
  j["odometry"] = {{"pnp_max_iterations", c.vo.pnp.max_iterations},
                   {"pnp_outlier_px", c.vo.pnp.outlier_threshold_px},
                   {"pnp_planar", c.vo.pnp.planar},
                   {"min_correspondences", c.vo.min_correspondences},
                   {"min_track_baseline", c.vo.min_track_baseline},
                   {"max_track_residual_px", c.vo.max_track_residual_px},
                   {"min_ray_angle_deg", c.vo.triangulation.min_ray_angle_deg},
                   {"max_triangulation_px", c.vo.triangulation.max_reprojection_px},
                   {"max_landmarks", c.vo.max_landmarks},
                   {"vision_gain", c.vo.fusion.vision_gain},
                   {"full_confidence_inliers", c.vo.fusion.full_confidence_inliers},
                   {"gps_process_sigma", c.vo.fusion.process_sigma},
                   {"max_gps_gain", c.vo.fusion.max_gps_gain},
                   {"v_max", c.vo.v_max}};
  j["mapping"] = {{"traversable_classes", c.mapping.traversable_classes},
                  {"num_classes", c.mapping.num_classes},
                  {"grid_cells", c.mapping.grid_cells},
                  {"resolution", c.mapping.resolution},
                  {"ground_stride", c.mapping.ground.stride},
                  {"ground_max_range", c.mapping.ground.max_range},
                  {"min_obstacle_height", c.mapping.height.min_height},
                  {"max_obstacle_height", c.mapping.height.max_height},
                  {"min_box_area", c.mapping.min_box_area}};
  j["planning"] = {{"v_max", c.planning.v_max},
                   {"omega_max", c.planning.omega_max},
                   {"a_v", c.planning.a_v},
                   {"a_omega", c.planning.a_omega},
                   {"dt_plan", c.planning.dt_plan},
                   {"horizon", c.planning.horizon},
                   {"samples_v", c.planning.samples_v},
                   {"samples_omega", c.planning.samples_omega},
                   {"w_heading", c.planning.weights.heading},
                   {"w_clearance", c.planning.weights.clearance},
                   {"w_velocity", c.planning.weights.velocity},
                   {"robot_radius", c.planning.robot_radius},
                   {"max_clearance", c.planning.max_clearance},
                   {"lookahead", c.planning.lookahead}};
  j["control"] = {{"horizon_steps", c.control.horizon_steps},
                  {"dt_ctrl", c.control.dt_ctrl},
                  {"q_x", c.control.q_x},
                  {"q_y", c.control.q_y},
                  {"q_yaw", c.control.q_yaw},
                  {"r_v", c.control.r_v},
                  {"r_omega", c.control.r_omega},
                  {"v_bound", c.control.v_bound},
                  {"omega_bound", c.control.omega_bound},
                  {"v_rate", c.control.v_rate},
                  {"omega_rate", c.control.omega_rate},
                  {"max_iterations", c.control.max_iterations},
                  {"tolerance", c.control.tolerance},
                  {"track_width", c.control.track_width}};
  j["sim"] = {{"seed", c.sim.scene.seed},
              {"route", c.sim.scene.route},
              {"length", c.sim.scene.length},
              {"radius", c.sim.scene.radius},
              {"speed", c.sim.scene.speed},
              {"obstacles", c.sim.scene.obstacle_count},
              {"obstacle_clearance", c.sim.scene.obstacle_clearance},
              {"landmarks", c.sim.scene.landmark_count},
              {"texture_density", c.sim.scene.texture.density},
              {"slip_long", c.sim.slip_long},
              {"slip_lat", c.sim.slip_lat},
              {"dynamics_noise", c.sim.dynamics.enabled},
              {"sigma_v", c.sim.dynamics.sigma_v},
              {"sigma_omega", c.sim.dynamics.sigma_omega},
              {"sigma_accel", c.sim.sensors.sigma_accel},
              {"sigma_gyro", c.sim.sensors.sigma_gyro},
              {"sigma_gps", c.sim.sensors.sigma_gps},
              {"gps_period", c.sim.sensors.gps_period},
              {"gps", c.sim.sensors.gps_enabled},
              {"lidar_channels", c.sim.lidar.channels},
              {"lidar_max_range", c.sim.lidar.max_range},
              {"imu_rate", c.sim.imu_rate}};
  j["run"] = {{"camera_rate", c.run.camera_rate},
              {"max_duration", c.run.max_duration},
              {"laps", c.run.laps},
              {"anchor_frames", c.run.anchor_frames},
              {"use_truth_state", c.run.use_truth_state},
              {"dump_every", c.run.dump_every},
              {"grid_every", c.run.grid_every},
              {"annotate_every", c.run.annotate_every},
              {"wall_clock_log", c.run.wall_clock_log}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<features::FeatureTracker> make_trackers(const PipelineConfig& cfg, std::size_t n) {
  std::vector<features::FeatureTracker> t;
  for (std::size_t c = 0; c < n; ++c) {
    t.emplace_back(static_cast<int>(c), cfg.features.pyramid_levels, cfg.features.lk, cfg.features.manager);
  }
  return t;
}

}  // namespace

Pipeline::Pipeline(PipelineConfig cfg, CameraRig rig, planning::ReferenceTrajectory route,
                   vo::RobotState initial, Pose3 lidar_sensor_from_body)
    : cfg_(std::move(cfg)),
      rig_(std::move(rig)),
      route_(std::move(route)),
      lidar_sensor_from_body_(lidar_sensor_from_body),
      trackers_(make_trackers(cfg_, rig_.count())),
      odometry_(rig_, cfg_.vo, initial) {
  world_.grid = mapping::OccupancyGrid::centered(initial.position(), cfg_.mapping.grid_cells,
                                                 cfg_.mapping.grid_cells, cfg_.mapping.resolution);
}

void Pipeline::propagate(const vo::ImuSample& imu, double dt) { odometry_.propagate(imu, dt); }

planning::DwaConfig speed_capped(const planning::DwaConfig& cfg, const planning::ReferenceTrajectory& route,
                                 const Vec2& position) {
  planning::DwaConfig out = cfg;
  if (const auto target = route.speed_at(route.project(position).s)) {
    if (*target > 0.0) out.v_max = std::min(cfg.v_max, *target);
  }
  return out;
}

void Pipeline::update_world(const CycleInput& input, CycleOutput& out) {
  const vo::RobotState state = planning_state_.value_or(odometry_.state());
  auto& grid = world_.grid;
  grid.recenter(state.position());

  std::vector<mapping::CellIndex> free_cells;
  for (std::size_t c = 0; c < rig_.count() && c < input.semantics.size(); ++c) {
    if (!input.semantics[c]) continue;
    const Pose3 world_from_cam = state.pose * rig_[c].cam_from_body.inverse();
    try {
      const auto cells = mapping::ground_cells_from_semantics(*input.semantics[c], cfg_.mapping.traversable_classes,
                                                              rig_[c].intrinsics, world_from_cam, GroundPlane{},
                                                              grid, cfg_.mapping.ground);
      free_cells.insert(free_cells.end(), cells.begin(), cells.end());
    } catch (const Error& e) {
      out.warnings.push_back(fmt::format("camera {} ground projection: {}", c, e.what()));
    }
  }
  std::sort(free_cells.begin(), free_cells.end());
  free_cells.erase(std::unique(free_cells.begin(), free_cells.end()), free_cells.end());

  std::vector<Vec3> obstacle_points;
  mapping::PointCloud cloud_world;
  const Pose3 world_from_sensor = state.pose * lidar_sensor_from_body_.inverse();
  if (input.lidar) {
    cloud_world.timestamp = input.lidar->timestamp;
    cloud_world.points.reserve(input.lidar->points.size());
    for (const auto& p : input.lidar->points) cloud_world.points.push_back(world_from_sensor.apply(p));
    obstacle_points = cloud_world.points;
  }
  mapping::update_grid(grid, free_cells, obstacle_points, GroundPlane{}, cfg_.mapping.height);

  world_.boxes.clear();
  bool any_instance = false;
  for (const auto& inst : input.instances) {
    if (inst && std::any_of(inst->pixels().begin(), inst->pixels().end(), [](auto v) { return v != 0; })) {
      any_instance = true;
    }
  }
  if (input.lidar && any_instance) {
    const auto projected = mapping::project_lidar_to_image(*input.lidar, lidar_sensor_from_body_, rig_);
    for (std::size_t c = 0; c < rig_.count() && c < input.instances.size(); ++c) {
      if (!input.instances[c] || c >= input.semantics.size() || !input.semantics[c]) continue;
      try {
        const auto boxes2d = percepts::extract_boxes(*input.instances[c], *input.semantics[c],
                                                     cfg_.mapping.min_box_area);
        auto boxes = mapping::instance_to_3d_box(*input.instances[c], boxes2d, projected, static_cast<int>(c),
                                                 cloud_world, cfg_.mapping.boxes);
        world_.boxes.insert(world_.boxes.end(), boxes.begin(), boxes.end());
      } catch (const Error& e) {
        out.warnings.push_back(fmt::format("camera {} boxes: {}", c, e.what()));
      }
    }
  }
  world_.synchronize();
  world_.timestamp = input.timestamp;
}

CycleOutput Pipeline::cycle(const CycleInput& input) {
  CycleOutput out;
  auto t = Clock::now();

  const int n = static_cast<int>(trackers_.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < n; ++c) {
    if (c < static_cast<int>(input.images.size()) && input.images[c]) {
      trackers_[c].process(*input.images[c], input.frame);
    }
  }
  for (int c = 0; c < n; ++c) {
    if (c >= static_cast<int>(input.images.size()) || !input.images[c]) {
      out.warnings.push_back(fmt::format("camera {} frame {} missing; skipped", c, input.frame));
    }
  }
  out.times.features_ms = ms_since(t);

  t = Clock::now();
  std::vector<features::TrackSet> sets;
  sets.reserve(trackers_.size());
  for (const auto& tr : trackers_) sets.push_back(tr.tracks());
  try {
    out.odometry = odometry_.update(input.frame, input.timestamp, sets, input.gps, input.anchor);
  } catch (const Error& e) {
    out.warnings.push_back(fmt::format("odometry: {}", e.what()));
  }
  out.times.odometry_ms = ms_since(t);

  t = Clock::now();
  update_world(input, out);
  out.times.grid_ms = ms_since(t);

  t = Clock::now();
  const vo::RobotState state = planning_state_.value_or(odometry_.state());
  try {
    out.plan = planning::plan_detailed(state, world_.grid, route_,
                                       speed_capped(cfg_.planning, route_, state.position()));
  } catch (const Error& e) {
    out.warnings.push_back(fmt::format("planning: {}", e.what()));
    out.plan = {planning::braking_candidate(state, cfg_.planning), {}};
  }
  selected_ = out.plan.best;
  out.times.plan_ms = ms_since(t);

  t = Clock::now();
  out.control = control_substep(0.0);
  out.times.control_ms = ms_since(t);
  return out;
}

control::TrackStepResult Pipeline::control_substep(double time_offset) {
  const vo::RobotState state = planning_state_.value_or(odometry_.state());
  control::TrackStepResult r;
  try {
    r = control::track_step(state, selected_, warm_start_, cfg_.control, cfg_.planning.dt_plan, time_offset,
                            last_input_);
  } catch (const Error&) {
    r.input = {std::max(0.0, state.v - cfg_.control.brake_decel * cfg_.control.dt_ctrl), 0.0};
    r.braked = true;
  }
  warm_start_ = r.warm_start;
  last_input_ = r.input;
  return r;
}

Percentiles percentiles(std::vector<double> values) {
  Percentiles p;
  if (values.empty()) return p;
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    const double idx = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(idx));
    const auto hi = std::min(values.size() - 1, lo + 1);
    return values[lo] + (idx - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  p.p50 = at(0.5);
  p.p90 = at(0.9);
  p.p99 = at(0.99);
  p.max = values.back();
  return p;
}

double estimate_coverage(double v_max_mps, double endurance_h) {
  if (!(v_max_mps > 0.0) || !(endurance_h > 0.0)) {
    fail(ErrorCode::NonPositiveInput, "velocity and endurance must be positive");
  }
  return v_max_mps * endurance_h * 3600.0 / 1000.0;
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

namespace {

/// Shared bookkeeping and artifact writing for both run modes.
class RunRecorder {
 public:
  RunRecorder(const PipelineConfig& cfg, const RunOptions& opts, std::string mode)
      : cfg_(cfg), dir_(opts.output_dir), quiet_(opts.quiet) {
    summary_.mode = std::move(mode);
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) fail(ErrorCode::IoFailure, "cannot create output directory " + dir_);
    if (cfg.run.dump_every > 0) fs::create_directories(dir_ + "/planner", ec);
    if (cfg.run.grid_every > 0) fs::create_directories(dir_ + "/grid", ec);
    pose_ = std::make_unique<CsvWriter>(dir_ + "/pose.csv", "timestamp_s,x,y,yaw_rad,v,omega");
    control_ = std::make_unique<CsvWriter>(
        dir_ + "/control.csv", "timestamp_s,x,y,yaw,v_cmd,omega_cmd,cost,solve_iterations,solve_time_ms");
    timing_ = std::make_unique<CsvWriter>(dir_ + "/timing.csv",
                                          "frame,features_ms,odometry_ms,grid_ms,plan_ms,control_ms,total_ms");
    odometry_ = std::make_unique<CsvWriter>(
        dir_ + "/odometry.csv",
        "frame,correspondences,inliers,pnp_used,pnp_x,pnp_y,pnp_yaw,pnp_rms_px,new_landmarks,landmarks,gps_used");
    log_.open(dir_ + "/log.txt");
    if (!log_) fail(ErrorCode::IoFailure, "cannot write log");
    summary_.artifacts = {dir_ + "/pose.csv", dir_ + "/control.csv", dir_ + "/timing.csv", dir_ + "/odometry.csv",
                          dir_ + "/log.txt"};
  }

  void log(double t, const std::string& msg) {
    const std::string line = fmt::format("[t={:10.3f}s] {}", t, msg);
    log_ << line << '\n';
    if (!quiet_) fmt::print(stderr, "{}\n", line);
  }

  void pose(const vo::RobotState& s) {
    pose_->row("{:.6f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f}", s.timestamp, s.x(), s.y(), s.yaw(), s.v, s.omega);
    estimate_path_.push_back(s.position());
  }

  void control(double t, const vo::RobotState& s, const control::TrackStepResult& r, double solve_ms) {
    control_->row("{:.6f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9e},{},{:.3f}", t, s.x(), s.y(), s.yaw(), r.input.v,
                  r.input.omega, r.cost, r.iterations, cfg_.run.wall_clock_log ? solve_ms : 0.0);
  }

  void cycle(const CycleInput& in, const CycleOutput& out, const Pipeline& p) {
    ++summary_.frames;
    const auto& tm = out.times;
    timing_->row("{},{:.3f},{:.3f},{:.3f},{:.3f},{:.3f},{:.3f}", in.frame, tm.features_ms, tm.odometry_ms, tm.grid_ms,
                 tm.plan_ms, tm.control_ms, tm.total_ms());
    times_.push_back(tm);
    const auto& o = out.odometry;
    const Pose3 pp = o.pnp_pose.value_or(Pose3());
    odometry_->row("{},{},{},{:d},{:.9f},{:.9f},{:.9f},{:.4f},{},{},{:d}", in.frame, o.correspondences, o.inliers,
                   o.pnp_used, pp.translation().x(), pp.translation().y(), pp.yaw(), o.pnp_rms_px, o.new_landmarks,
                   o.landmark_count, o.gps_used);
    for (const auto& w : out.warnings) {
      log(in.timestamp, "warning: " + w);
      ++summary_.warnings;
    }
    const bool any_missing = std::any_of(in.images.begin(), in.images.end(), [](const auto& i) { return !i; });
    if (any_missing) ++summary_.skipped_frames;
    if (!out.plan.best.admissible) log(in.timestamp, "planner: no admissible candidate, braking");

    if (cfg_.run.dump_every > 0 && in.frame % cfg_.run.dump_every == 0 && !out.plan.lattice.empty()) {
      const std::string path = fmt::format("{}/planner/cycle_{:06d}.csv", dir_, in.frame);
      planning::write_lattice_dump(out.plan, path);
      add_artifact(path);
    }
    if (cfg_.run.grid_every > 0 && in.frame % cfg_.run.grid_every == 0) {
      const std::string path = fmt::format("{}/grid/grid_{:06d}.png", dir_, in.frame);
      mapping::export_grid(p.world().grid, path);
      add_artifact(path);
      add_artifact(path + ".txt");
    }
    if (cfg_.run.annotate_every > 0 && in.frame % cfg_.run.annotate_every == 0) {
      for (std::size_t c = 0; c < in.images.size(); ++c) {
        if (!in.images[c]) continue;
        const std::string d = fmt::format("{}/annotated/cam{}", dir_, c);
        std::error_code ec;
        fs::create_directories(d, ec);
        const std::string path = fmt::format("{}/frame_{:06d}.png", d, in.frame);
        write_rgb_png(report::annotate_tracks(*in.images[c], p.trackers()[c].tracks()), path);
        add_artifact(path);
      }
    }
  }

  void truth(const Vec2& truth_pos, double lateral) {
    if (!truth_path_.empty()) summary_.path_length_m += (truth_pos - truth_path_.back()).norm();
    truth_path_.push_back(truth_pos);
    lateral_sq_ += lateral * lateral;
    ++lateral_n_;
    summary_.cross_track_final_m = std::abs(lateral);
    summary_.cross_track_rms_m = std::sqrt(lateral_sq_ / lateral_n_);
  }

  void estimate_lateral(double lateral) {
    est_lateral_sq_ += lateral * lateral;
    ++est_lateral_n_;
    summary_.estimate_cross_track_rms_m = std::sqrt(est_lateral_sq_ / est_lateral_n_);
  }

  RunSummary finish(double duration, const planning::ReferenceTrajectory& route,
                    const std::optional<Vec2>& final_truth, const Vec2& final_estimate) {
    summary_.duration_s = duration;
    if (final_truth) {
      summary_.final_drift_m = (*final_truth - final_estimate).norm();
      if (summary_.path_length_m > 0.0) {
        summary_.drift_percent = 100.0 * *summary_.final_drift_m / summary_.path_length_m;
      }
    }
    std::vector<double> total, stages[5];
    for (const auto& t : times_) {
      total.push_back(t.total_ms());
      stages[0].push_back(t.features_ms);
      stages[1].push_back(t.odometry_ms);
      stages[2].push_back(t.grid_ms);
      stages[3].push_back(t.plan_ms);
      stages[4].push_back(t.control_ms);
    }
    summary_.total_ms = percentiles(total);
    for (int i = 0; i < 5; ++i) summary_.stage_ms[i] = percentiles(stages[i]);

    std::vector<report::Polyline> lines;
    std::vector<Vec2> route_pts = route.waypoints();
    if (route.closed() && !route_pts.empty()) route_pts.push_back(route_pts.front());
    lines.push_back({route_pts, Rgb{160, 160, 160}});
    if (!truth_path_.empty()) lines.push_back({truth_path_, Rgb{30, 140, 30}});
    lines.push_back({estimate_path_, Rgb{200, 40, 40}});
    const std::string traj = dir_ + "/trajectory.png";
    report::write_path_plot(traj, lines);
    add_artifact(traj);
    const std::string hist = dir_ + "/timing_hist.png";
    report::write_histogram(hist, total, summary_.budget_ms);
    add_artifact(hist);
    add_artifact(dir_ + "/summary.json");
    write_summary();
    return summary_;
  }

  RunSummary& summary() { return summary_; }

 private:
  void add_artifact(const std::string& path) {
    if (std::find(summary_.artifacts.begin(), summary_.artifacts.end(), path) == summary_.artifacts.end()) {
      summary_.artifacts.push_back(path);
    }
  }

  void write_summary() {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    auto pct = [](const Percentiles& p) { return json{{"p50", p.p50}, {"p90", p.p90}, {"p99", p.p99}, {"max", p.max}}; };
    json j;
    j["mode"] = summary_.mode;
    j["frames"] = summary_.frames;
    j["skipped_frames"] = summary_.skipped_frames;
    j["warnings"] = summary_.warnings;
    j["duration_s"] = summary_.duration_s;
    j["path_length_m"] = summary_.path_length_m;
    j["route_completed"] = summary_.route_completed;
    j["final_drift_m"] = opt(summary_.final_drift_m);
    j["drift_percent_of_path"] = opt(summary_.drift_percent);
    j["cross_track_rms_m"] = opt(summary_.cross_track_rms_m);
    j["cross_track_final_m"] = opt(summary_.cross_track_final_m);
    j["estimate_cross_track_rms_m"] = opt(summary_.estimate_cross_track_rms_m);
    j["timing_ms"] = {{"budget", summary_.budget_ms},
                      {"total", pct(summary_.total_ms)},
                      {"features", pct(summary_.stage_ms[0])},
                      {"odometry", pct(summary_.stage_ms[1])},
                      {"grid", pct(summary_.stage_ms[2])},
                      {"plan", pct(summary_.stage_ms[3])},
                      {"control", pct(summary_.stage_ms[4])},
                      {"median_within_budget", summary_.total_ms.p50 < summary_.budget_ms}};
    j["artifacts"] = summary_.artifacts;
    std::ofstream out(dir_ + "/summary.json");
    if (!out) fail(ErrorCode::IoFailure, "cannot write summary");
    out << j.dump(2) << '\n';
  }

  const PipelineConfig& cfg_;
  std::string dir_;
  bool quiet_;
  RunSummary summary_;
  std::unique_ptr<CsvWriter> pose_, control_, timing_, odometry_;
  std::ofstream log_;
  std::vector<StageTimes> times_;
  std::vector<Vec2> truth_path_, estimate_path_;
  double lateral_sq_ = 0.0, est_lateral_sq_ = 0.0;
  int lateral_n_ = 0, est_lateral_n_ = 0;
};

int substeps_per_frame(double imu_rate, double camera_rate) {
  const int n = static_cast<int>(std::lround(imu_rate / camera_rate));
  if (n < 2 || std::abs(n * camera_rate - imu_rate) > 1e-9) {
    fail(ErrorCode::InvalidArgument, "IMU rate must be a multiple (>= 2) of the camera rate");
  }
  return n;
}

}  // namespace

RunSummary run_sim(const PipelineConfig& cfg, const RunOptions& opts) {
  sim::Scene scene = sim::make_scene(cfg.sim.scene);
  if (opts.route_path) scene.route = planning::ReferenceTrajectory::load_csv(*opts.route_path);
  const CameraRig rig = CameraRig::default_rig();
  sim::RecordOptions ro;
  ro.slip_long = cfg.sim.slip_long;
  ro.slip_lat = cfg.sim.slip_lat;
  sim::SimState truth = sim::initial_state(scene, ro);

  Pipeline pipe(cfg, rig, scene.route, truth.robot_state(), cfg.sim.lidar.sensor_from_body);
  RunRecorder rec(cfg, opts, "sim");
  CsvWriter truth_csv(opts.output_dir + "/truth.csv", "timestamp_s,x,y,yaw_rad,v,omega");
  rec.summary().artifacts.push_back(opts.output_dir + "/truth.csv");

  const int steps = substeps_per_frame(cfg.sim.imu_rate, cfg.run.camera_rate);
  const int first_half = steps / 2;
  const double dt = 1.0 / cfg.sim.imu_rate;
  const double frame_dt = 1.0 / cfg.run.camera_rate;
  std::optional<vo::GpsFix> pending_gps = sim::initial_gps_fix(truth, cfg.sim.sensors);
  double progress = 0.0;
  double last_s = scene.route.project(truth.pose.position()).s;
  rec.log(0.0, fmt::format("sim run: route '{}' length {:.2f} m, seed {}", cfg.sim.scene.route,
                           scene.route.length(), cfg.sim.scene.seed));

  auto advance = [&](const control::ControlInput& u, int n) {
    for (int i = 0; i < n; ++i) {
      sim::SimState next = sim::step_dynamics(truth, u, dt, cfg.sim.dynamics);
      next.time = static_cast<double>(next.step) * dt;
      const sim::ImuGps m = sim::synth_imu_gps(truth, next, dt, cfg.sim.sensors);
      pipe.propagate(m.imu, dt);
      if (m.gps) pending_gps = m.gps;
      truth = next;
    }
  };

  for (std::int64_t frame = 0;; ++frame) {
    const double t = static_cast<double>(frame) * frame_dt;
    if (t > cfg.run.max_duration + 1e-9) break;
    truth.time = t;

    CycleInput in;
    in.frame = frame;
    in.timestamp = t;
    const Pose3 body = Pose3::planar(truth.pose.x, truth.pose.y, truth.pose.yaw);
    in.images.resize(rig.count());
    in.semantics.resize(rig.count());
    in.instances.resize(rig.count());
    for (std::size_t c = 0; c < rig.count(); ++c) {
      sim::Rendered r = sim::synth_render(scene, rig[c].intrinsics, body * rig[c].cam_from_body.inverse());
      in.images[c] = std::move(r.image);
      in.semantics[c] = percepts::SemanticMap(std::move(r.semantic), cfg.mapping.num_classes);
      in.instances[c] = std::move(r.instance);
    }
    in.lidar = sim::synth_lidar(scene, body, cfg.sim.lidar);
    in.lidar->timestamp = t;
    if (pending_gps && std::abs(pending_gps->timestamp - t) <= cfg.vo.fusion.max_epoch_offset) in.gps = pending_gps;
    pending_gps.reset();
    if (frame < cfg.run.anchor_frames) in.anchor = body;

    if (cfg.run.use_truth_state) pipe.override_state(truth.robot_state());
    const CycleOutput out = pipe.cycle(in);
    const vo::RobotState est = pipe.estimate();
    rec.pose(est);
    truth_csv.row("{:.6f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f}", t, truth.pose.x, truth.pose.y, truth.pose.yaw, truth.v,
                  truth.omega);
    const auto proj = scene.route.project(truth.pose.position());
    rec.truth(truth.pose.position(), proj.lateral);
    rec.estimate_lateral(scene.route.project(est.position()).lateral);
    const vo::RobotState control_state = cfg.run.use_truth_state ? truth.robot_state() : est;
    rec.control(t, control_state, out.control, out.times.control_ms);
    rec.cycle(in, out, pipe);

    advance(out.control.input, first_half);
    if (cfg.run.use_truth_state) pipe.override_state(truth.robot_state());
    const auto t0 = Clock::now();
    const control::TrackStepResult second = pipe.control_substep(first_half * dt);
    const double second_ms = ms_since(t0);
    rec.control(t + first_half * dt, cfg.run.use_truth_state ? truth.robot_state() : pipe.estimate(), second,
                second_ms);
    advance(second.input, steps - first_half);

    // Progress along the route (wrap-aware for closed routes).
    const double s = scene.route.project(truth.pose.position()).s;
    double ds = s - last_s;
    if (scene.route.closed()) ds -= scene.route.length() * std::round(ds / scene.route.length());
    progress += ds;
    last_s = s;
    const bool done = scene.route.closed() ? progress >= cfg.run.laps * scene.route.length()
                                           : s >= scene.route.length() - 1e-6;
    if (done) {
      rec.summary().route_completed = true;
      rec.log(truth.time, "route completed");
      break;
    }
  }
  const RunSummary summary = rec.finish(truth.time, scene.route, truth.pose.position(), pipe.estimate().position());
  return summary;
}

namespace {

struct TimedRow {
  double t;
  std::vector<double> values;
};

std::vector<TimedRow> read_timed(const std::string& path, const std::vector<std::string>& columns) {
  std::vector<TimedRow> rows;
  if (!fs::exists(path)) return rows;
  const CsvTable t = read_csv(path);
  const std::size_t ct = t.column("timestamp_s");
  std::vector<std::size_t> idx;
  for (const auto& c : columns) idx.push_back(t.column(c));
  for (const auto& r : t.rows) {
    TimedRow row{parse_double(r[ct]), {}};
    for (auto i : idx) row.values.push_back(parse_double(r[i]));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::optional<Pose3> truth_pose_at(const std::vector<TimedRow>& truth, double t) {
  if (truth.empty()) return std::nullopt;
  const auto it = std::lower_bound(truth.begin(), truth.end(), t - 1e-9,
                                   [](const TimedRow& r, double v) { return r.t < v; });
  if (it == truth.end() || std::abs(it->t - t) > 0.02) return std::nullopt;
  return Pose3::planar(it->values[0], it->values[1], it->values[2]);
}

}  // namespace

RunSummary run_dataset(const std::string& dir, const PipelineConfig& cfg_in, const RunOptions& opts) {
  if (!fs::is_directory(dir)) fail(ErrorCode::IoFailure, "dataset directory not found: " + dir);
  PipelineConfig cfg = cfg_in;

  if (fs::is_empty(dir)) {
    RunRecorder rec(cfg, opts, "dataset");
    rec.log(0.0, "empty dataset directory; nothing to run");
    const planning::ReferenceTrajectory placeholder({Vec2(0, 0), Vec2(1, 0)});
    return rec.finish(0.0, placeholder, std::nullopt, Vec2::Zero());
  }

  json manifest;
  {
    std::ifstream in(dir + "/manifest.json");
    if (!in) fail(ErrorCode::IoFailure, "missing manifest.json in " + dir);
    try {
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorCode::ParseError, std::string("manifest: ") + e.what());
    }
  }
  int frames = 0;
  double camera_rate = 10.0, imu_rate = 100.0;
  bool closed = false;
  Vec3 lidar_t(0.0, 0.0, -0.8);
  try {
    frames = manifest.at("streams").at("frames").at("per_camera").get<int>();
    camera_rate = manifest.value("camera_rate_hz", 10.0);
    imu_rate = manifest.value("imu_rate_hz", 100.0);
    closed = manifest.value("route_closed", false);
    if (manifest.contains("num_classes")) cfg.mapping.num_classes = manifest.at("num_classes").get<int>();
    if (manifest.contains("traversable_classes")) {
      cfg.mapping.traversable_classes = manifest.at("traversable_classes").get<std::set<int>>();
    }
    if (manifest.contains("lidar")) {
      const auto v = manifest.at("lidar").at("sensor_from_body_translation_m").get<std::vector<double>>();
      if (v.size() == 3) lidar_t = Vec3(v[0], v[1], v[2]);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
  const CameraRig rig = load_calibration(dir + "/calib.json");
  const planning::ReferenceTrajectory route = planning::ReferenceTrajectory::load_csv(
      opts.route_path ? *opts.route_path : dir + "/route.csv", closed);
  const auto imu = read_timed(dir + "/imu.csv", {"ax", "ay", "az", "gx", "gy", "gz"});
  const auto gps = read_timed(dir + "/gps.csv", {"x_m", "y_m", "acc_m"});
  const auto truth = read_timed(dir + "/truth.csv", {"x", "y", "yaw_rad", "v", "omega"});

  vo::RobotState initial;
  if (!truth.empty()) {
    const auto& r = truth.front();
    initial = vo::RobotState::planar(r.values[0], r.values[1], r.values[2], r.values[3], r.values[4], r.t);
  } else {
    const Vec2 p = route.point_at(0.0);
    initial = vo::RobotState::planar(p.x(), p.y(), route.heading_at(0.0));
  }
  Pipeline pipe(cfg, rig, route, initial, Pose3(Mat3::Identity(), lidar_t));
  RunRecorder rec(cfg, opts, "dataset");
  rec.log(0.0, fmt::format("dataset run: {} frames per camera from {}", frames, dir));

  const double frame_dt = 1.0 / camera_rate;
  std::size_t imu_next = 0, gps_next = 0;
  double last_t = initial.timestamp;
  for (std::int64_t frame = 0; frame < frames; ++frame) {
    const double t = static_cast<double>(frame) * frame_dt;
    while (imu_next < imu.size() && imu[imu_next].t <= t + 1e-9) {
      const auto& r = imu[imu_next++];
      const double dt = r.t - last_t;
      if (dt > 0.0 && dt <= 5.0 / imu_rate) {
        vo::ImuSample s;
        s.linear_acceleration = Vec3(r.values[0], r.values[1], r.values[2]);
        s.angular_velocity = Vec3(r.values[3], r.values[4], r.values[5]);
        s.timestamp = r.t;
        pipe.propagate(s, dt);
      }
      last_t = r.t;
    }
    CycleInput in;
    in.frame = frame;
    in.timestamp = t;
    in.images.resize(rig.count());
    in.semantics.resize(rig.count());
    in.instances.resize(rig.count());
    for (std::size_t c = 0; c < rig.count(); ++c) {
      const int ci = static_cast<int>(c);
      const std::string img = sim::frame_path(dir, ci, frame);
      if (!fs::exists(img)) continue;  // reported as a warning by the pipeline
      try {
        in.images[c] = read_gray(img);
        const CameraIntrinsics& intr = rig[c].intrinsics;
        if (in.images[c]->width() != intr.width || in.images[c]->height() != intr.height) {
          fail(ErrorCode::ShapeMismatch, fmt::format("{}x{} image, calibration says {}x{}", in.images[c]->width(),
                                                     in.images[c]->height(), intr.width, intr.height));
        }
        const std::string sem = sim::label_path(dir, ci, frame, "sem");
        const std::string inst = sim::label_path(dir, ci, frame, "inst");
        if (fs::exists(sem)) in.semantics[c] = percepts::SemanticMap(read_label16_png(sem), cfg.mapping.num_classes);
        if (fs::exists(inst)) in.instances[c] = read_label16_png(inst);
      } catch (const Error& e) {
        rec.log(t, fmt::format("warning: camera {} frame {}: {}", c, frame, e.what()));
        in.images[c].reset();
      }
    }
    const std::string sweep = sim::sweep_path(dir, frame);
    if (fs::exists(sweep)) {
      const CsvTable tbl = read_csv(sweep);
      const auto cx = tbl.column("x_m"), cy = tbl.column("y_m"), cz = tbl.column("z_m");
      mapping::PointCloud cloud;
      cloud.timestamp = t;
      for (const auto& r : tbl.rows) cloud.points.emplace_back(parse_double(r[cx]), parse_double(r[cy]), parse_double(r[cz]));
      in.lidar = std::move(cloud);
    }
    while (gps_next < gps.size() && gps[gps_next].t <= t + 1e-9) {
      const auto& g = gps[gps_next++];
      if (std::abs(g.t - t) <= cfg.vo.fusion.max_epoch_offset) {
        in.gps = vo::GpsFix{Vec2(g.values[0], g.values[1]), g.values[2], g.t};
      }
    }
    if (frame < cfg.run.anchor_frames) in.anchor = truth_pose_at(truth, t);

    const CycleOutput out = pipe.cycle(in);
    rec.pose(pipe.estimate());
    rec.control(t, pipe.estimate(), out.control, out.times.control_ms);
    if (const auto tp = truth_pose_at(truth, t)) {
      const Vec2 p = tp->translation().head<2>();
      rec.truth(p, route.project(p).lateral);
    }
    rec.estimate_lateral(route.project(pipe.estimate().position()).lateral);
    rec.cycle(in, out, pipe);
  }
  std::optional<Vec2> final_truth;
  if (frames > 0) {
    if (const auto tp = truth_pose_at(truth, (frames - 1) * frame_dt)) final_truth = tp->translation().head<2>();
  }
  return rec.finish(frames * frame_dt, route, final_truth, pipe.estimate().position());
}

sim::CommandSource make_autopilot(const sim::Scene& scene, const PipelineConfig& cfg) {
  struct State {
    mapping::OccupancyGrid grid;
    std::vector<control::ControlInput> warm;
    std::optional<control::ControlInput> last;
  };
  auto st = std::make_shared<State>();
  st->grid = mapping::OccupancyGrid::centered(scene.route.point_at(0.0), cfg.mapping.grid_cells,
                                              cfg.mapping.grid_cells, cfg.mapping.resolution);
  return [st, scene, cfg](const sim::SimState& truth, const mapping::PointCloud& sweep) {
    const vo::RobotState s = truth.robot_state();
    st->grid.recenter(s.position());
    const Pose3 world_from_sensor = s.pose * cfg.sim.lidar.sensor_from_body.inverse();
    std::vector<Vec3> pts;
    pts.reserve(sweep.points.size());
    for (const auto& p : sweep.points) pts.push_back(world_from_sensor.apply(p));
    mapping::update_grid(st->grid, {}, pts, GroundPlane{}, cfg.mapping.height);
    const auto cand = planning::plan(s, st->grid, scene.route, speed_capped(cfg.planning, scene.route, s.position()));
    const auto r = control::track_step(s, cand, st->warm, cfg.control, cfg.planning.dt_plan, 0.0, st->last);
    st->warm = r.warm_start;
    st->last = r.input;
    return r.input;
  };
}

}  // namespace amtu::pipeline
