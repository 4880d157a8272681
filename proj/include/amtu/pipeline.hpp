#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "amtu/control.hpp"
#include "amtu/features.hpp"
#include "amtu/mapping.hpp"
#include "amtu/percepts.hpp"
#include "amtu/planning.hpp"
#include "amtu/simworld.hpp"
#include "amtu/visual_odometry.hpp"

namespace amtu::pipeline {

struct FeatureConfig {
  int pyramid_levels = 3;
  features::LkParams lk;
  features::TrackManagerParams manager;
};

struct MappingConfig {
  std::set<int> traversable_classes{sim::kClassGround};
  int num_classes = percepts::kDefaultClassCount;
  int grid_cells = 400;
  double resolution = 0.1;
  mapping::GroundProjectionParams ground;
  mapping::HeightGate height;
  mapping::BoxFitParams boxes;
  int min_box_area = 20;
};

struct SimConfig {
  sim::SceneConfig scene;
  double slip_long = 0.05;
  double slip_lat = 0.05;
  sim::DynamicsNoise dynamics;
  sim::SensorNoise sensors;
  sim::LidarConfig lidar;
  double imu_rate = 100.0;
};

struct RunConfig {
  double camera_rate = 10.0;
  double max_duration = 600.0;
  int laps = 1;                 // closed routes
  int anchor_frames = 10;       // frames whose pose is taken from ground truth
  bool use_truth_state = false;  // sim mode: plan and control on the truth state
  int dump_every = 10;           // planner lattice dumps, 0 disables
  int grid_every = 50;           // grid snapshots, 0 disables
  int annotate_every = 50;       // annotated frames, 0 disables
  bool wall_clock_log = false;   // real solve times in control.csv (breaks byte-identity)
};

/// Every module's parameters; defaults are the module defaults.
struct PipelineConfig {
  FeatureConfig features;
  vo::VoConfig vo;
  MappingConfig mapping;
  planning::DwaConfig planning;
  control::NmpcConfig control;
  SimConfig sim;
  RunConfig run;
};

/// Overlays the keys present in `json_text` onto the defaults. Throws ParseError.
PipelineConfig config_from_json(const std::string& json_text);
PipelineConfig load_config(const std::string& path);
std::string config_to_json(const PipelineConfig& cfg);

struct StageTimes {
  double features_ms = 0.0;
  double odometry_ms = 0.0;
  double grid_ms = 0.0;
  double plan_ms = 0.0;
  double control_ms = 0.0;
  double total_ms() const { return features_ms + odometry_ms + grid_ms + plan_ms + control_ms; }
};

struct CycleInput {
  std::int64_t frame = 0;
  double timestamp = 0.0;
  std::vector<std::optional<GrayImage>> images;  // per camera; empty when missing
  std::vector<std::optional<percepts::SemanticMap>> semantics;
  std::vector<std::optional<percepts::InstanceMap>> instances;
  std::optional<mapping::PointCloud> lidar;  // sensor frame
  std::optional<vo::GpsFix> gps;
  std::optional<Pose3> anchor;
};

struct CycleOutput {
  vo::VoFrameReport odometry;
  planning::PlanResult plan;
  control::TrackStepResult control;
  StageTimes times;
  std::vector<std::string> warnings;
};

/// One robot: tracking, odometry, mapping, planning and control per camera frame.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, CameraRig rig, planning::ReferenceTrajectory route,
           vo::RobotState initial, Pose3 lidar_sensor_from_body);

  void propagate(const vo::ImuSample& imu, double dt);
  CycleOutput cycle(const CycleInput& input);
  /// Re-solves the controller `time_offset` seconds into the current plan.
  control::TrackStepResult control_substep(double time_offset);
  /// Replaces the estimate (used when the truth state drives planning).
  void override_state(const vo::RobotState& s) { planning_state_ = s; }

  const vo::RobotState& estimate() const { return odometry_.state(); }
  const mapping::WorldModel& world() const { return world_; }
  const std::vector<features::FeatureTracker>& trackers() const { return trackers_; }
  const planning::TrajectoryCandidate& selected() const { return selected_; }
  const std::optional<control::ControlInput>& last_input() const { return last_input_; }

 private:
  void update_world(const CycleInput& input, CycleOutput& out);

  PipelineConfig cfg_;
  CameraRig rig_;
  planning::ReferenceTrajectory route_;
  Pose3 lidar_sensor_from_body_;
  std::vector<features::FeatureTracker> trackers_;
  vo::VisualOdometry odometry_;
  mapping::WorldModel world_;
  planning::TrajectoryCandidate selected_;
  std::vector<control::ControlInput> warm_start_;
  std::optional<control::ControlInput> last_input_;
  std::optional<vo::RobotState> planning_state_;
};

/// DWA capped to the route's target speed at the robot's position.
planning::DwaConfig speed_capped(const planning::DwaConfig& cfg, const planning::ReferenceTrajectory& route,
                                 const Vec2& position);

struct Percentiles {
  double p50 = 0.0, p90 = 0.0, p99 = 0.0, max = 0.0;
};
Percentiles percentiles(std::vector<double> values);

struct RunSummary {
  std::string mode;
  int frames = 0;
  int skipped_frames = 0;
  int warnings = 0;
  double duration_s = 0.0;
  double path_length_m = 0.0;
  std::optional<double> final_drift_m;
  std::optional<double> drift_percent;
  std::optional<double> cross_track_rms_m;
  std::optional<double> cross_track_final_m;
  std::optional<double> estimate_cross_track_rms_m;
  bool route_completed = false;
  Percentiles total_ms;
  std::array<Percentiles, 5> stage_ms;  // features, odometry, grid, plan, control
  double budget_ms = 100.0;
  std::vector<std::string> artifacts;
};

struct RunOptions {
  std::string output_dir;
  std::optional<std::string> route_path;  // overrides the scene/dataset route
  bool quiet = true;
};

/// Live simulation: renders the scene, runs the pipeline, steps the dynamics.
RunSummary run_sim(const PipelineConfig& cfg, const RunOptions& opts);
/// Recorded dataset directory in the simgen layout. Throws on malformed input.
RunSummary run_dataset(const std::string& dataset_dir, const PipelineConfig& cfg, const RunOptions& opts);

/// Truth-state DWA + NMPC driver with a Lidar-only grid, for recording datasets.
sim::CommandSource make_autopilot(const sim::Scene& scene, const PipelineConfig& cfg);

/// v_max * endurance * 3600 / 1000. Throws NonPositiveInput.
double estimate_coverage(double v_max_mps, double endurance_h);

}  // namespace amtu::pipeline
