#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "amtu/control.hpp"
#include "amtu/image.hpp"
#include "amtu/kinematics.hpp"
#include "amtu/mapping.hpp"
#include "amtu/planning.hpp"
#include "amtu/visual_odometry.hpp"

namespace amtu::sim {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so streams never interfere.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream), counter_(counter) {}

  std::uint64_t next_u64() { return hash(seed_, stream_, counter_++); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller, both uniforms consumed per draw).
  double normal();
  CounterRng substream(std::uint64_t id) const {
    return CounterRng(seed_, hash(stream_, id, 0x5eed), 0);
  }

  static std::uint64_t hash(std::uint64_t a, std::uint64_t b, std::uint64_t c);

 private:
  std::uint64_t seed_, stream_, counter_;
};

enum class Stream : std::uint64_t { Scene = 1, Texture, Dynamics, Imu, Gps, Landmarks };

/// Toy taxonomy placed inside [1, N].
inline constexpr int kClassGround = 1;
inline constexpr int kClassPedestrian = 2;
inline constexpr int kClassVegetation = 3;
inline constexpr int kClassSky = 4;
inline constexpr int kSimClassCount = 4;

struct Obstacle {
  enum class Shape { Cylinder, Box };
  Shape shape = Shape::Cylinder;
  Vec2 center = Vec2::Zero();
  double radius = 0.4;                      // cylinder
  Vec2 half_size = Vec2(0.5, 0.5);          // box, in its own frame
  double yaw = 0.0;                         // box
  double height = 1.8;
  int class_id = kClassVegetation;
  int instance_id = 1;
  std::uint8_t intensity = 45;
};

struct Feature {
  Vec3 position;
  double amplitude = 80.0;  // signed intensity offset at the splat center
};

struct TextureParams {
  double cell = 0.25;
  double density = 0.55;
  double min_amplitude = 50.0;
  double max_amplitude = 90.0;
  double max_range = 10.0;
};

/// Flat world on the z = 0 ground plane.
struct Scene {
  std::uint64_t seed = 1;
  GroundPlane ground;
  TextureParams texture;
  std::uint8_t background = 110;
  double splat_sigma = 0.65;
  std::vector<Feature> landmarks;
  std::vector<Obstacle> obstacles;
  planning::ReferenceTrajectory route;

  /// Throws InvalidArgument on duplicate obstacle instance ids or non-flat ground.
  void validate() const;
};

struct SceneConfig {
  std::uint64_t seed = 1;
  std::string route = "straight";  // straight | circle | loop
  double length = 50.0;            // straight: route length; loop: perimeter
  double radius = 5.0;             // circle
  double speed = 1.0;
  int obstacle_count = 0;
  double obstacle_clearance = 2.0;  // minimum distance from route to obstacle surface
  int landmark_count = 300;
  TextureParams texture;
};

Scene make_scene(const SceneConfig& cfg);

struct RayHit {
  double t = 0.0;
  int obstacle = -1;  // -1 for ground
};

/// Nearest hit of origin + t * dir (t > 0) against obstacles and ground, within t_max.
std::optional<RayHit> raycast(const Scene& scene, const Vec3& origin, const Vec3& dir, double t_max);
std::optional<double> raycast_obstacle(const Obstacle& o, const Vec3& origin, const Vec3& dir);

struct Rendered {
  GrayImage image;
  Label16 semantic;
  Label16 instance;
};

/// Throws CameraBelowGround.
Rendered synth_render(const Scene& scene, const CameraIntrinsics& intr, const Pose3& world_from_camera);

struct LidarConfig {
  int channels = 40;
  double min_elevation_deg = -16.0;
  double max_elevation_deg = 7.0;
  double horizontal_step_deg = 0.5;
  double max_range = 30.0;
  Pose3 sensor_from_body = Pose3(Mat3::Identity(), Vec3(0.0, 0.0, -0.8));
};

/// Sensor-frame returns, ordered by azimuth then channel.
mapping::PointCloud synth_lidar(const Scene& scene, const Pose3& world_from_body,
                                const LidarConfig& cfg = {});

struct SimState {
  Pose2 pose;
  double v = 0.0;
  double omega = 0.0;
  double time = 0.0;
  std::uint64_t step = 0;
  double slip_long = 0.0;
  double slip_lat = 0.0;

  vo::RobotState robot_state() const {
    return vo::RobotState::planar(pose.x, pose.y, pose.yaw, v, omega, time);
  }
};

struct DynamicsNoise {
  std::uint64_t seed = 1;
  bool enabled = true;
  double sigma_v = 0.01;
  double sigma_omega = 0.01;
};

/// Slip-degraded unicycle step with seeded velocity noise.
SimState step_dynamics(const SimState& sim, const control::ControlInput& u, double dt,
                       const DynamicsNoise& noise);

struct SensorNoise {
  std::uint64_t seed = 1;
  double sigma_accel = 0.05;
  double sigma_gyro = 0.005;
  double sigma_gps = 0.5;
  double gps_period = 1.0;
  bool gps_enabled = true;
};

struct ImuGps {
  vo::ImuSample imu;
  std::optional<vo::GpsFix> gps;
};

/// IMU from finite differences between consecutive truth states; a GPS fix
/// whenever an epoch k * gps_period falls in (prev.time, next.time].
ImuGps synth_imu_gps(const SimState& prev, const SimState& next, double dt, const SensorNoise& noise);
/// The epoch-0 fix.
std::optional<vo::GpsFix> initial_gps_fix(const SimState& state, const SensorNoise& noise);

/// Piecewise-constant commands from a CSV `t_s,v_mps,omega_radps`.
class CommandScript {
 public:
  struct Entry {
    double t;
    control::ControlInput u;
  };
  explicit CommandScript(std::vector<Entry> entries);
  static CommandScript load_csv(const std::string& path);
  control::ControlInput at(double t) const;

 private:
  std::vector<Entry> entries_;
};

/// Called at camera rate with the truth state and that cycle's Lidar sweep
/// (sensor frame); the command is held until the next call.
using CommandSource = std::function<control::ControlInput(const SimState&, const mapping::PointCloud&)>;

struct RecordOptions {
  double duration = 10.0;
  double camera_rate = 10.0;
  double imu_rate = 100.0;
  double slip_long = 0.05;
  double slip_lat = 0.05;
  CameraRig rig = CameraRig::default_rig();
  LidarConfig lidar;
  DynamicsNoise dynamics;
  SensorNoise sensors;
};

struct RecordedDataset {
  std::string directory;
  int frames_per_camera = 0;
  int total_frames = 0;
  int lidar_sweeps = 0;
  int imu_samples = 0;
  int gps_fixes = 0;
  int truth_rows = 0;
  std::uint64_t seed = 0;
};

/// Initial truth state: at the route start, facing along it, at rest.
SimState initial_state(const Scene& scene, const RecordOptions& opts);

/// Writes the dataset layout under output_dir (created if missing). Throws IoFailure.
RecordedDataset record_dataset(const Scene& scene, const CommandSource& commands,
                               const RecordOptions& opts, const std::string& output_dir);

std::string frame_path(const std::string& dir, int camera, std::int64_t frame);
std::string label_path(const std::string& dir, int camera, std::int64_t frame, const char* kind);
std::string sweep_path(const std::string& dir, std::int64_t frame);

}  // namespace amtu::sim
