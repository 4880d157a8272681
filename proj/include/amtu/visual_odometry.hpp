#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "amtu/features.hpp"
#include "amtu/geometry.hpp"

namespace amtu::vo {

/// Robot state z: planar pose on the ground plane plus body velocities.
struct RobotState {
  Pose3 pose;  // world-from-body
  double v = 0.0;
  double omega = 0.0;
  double timestamp = 0.0;

  static RobotState planar(double x, double y, double yaw, double v = 0.0, double omega = 0.0,
                           double timestamp = 0.0) {
    return {Pose3::planar(x, y, yaw), v, omega, timestamp};
  }
  double x() const { return pose.translation().x(); }
  double y() const { return pose.translation().y(); }
  double yaw() const { return pose.yaw(); }
  Vec2 position() const { return pose.translation().head<2>(); }
};

struct Landmark {
  std::uint64_t id = 0;  // originating track id
  int camera_index = 0;
  Vec3 position;
  int observation_count = 2;
  std::int64_t created_frame = 0;
};

struct ImuSample {
  Vec3 linear_acceleration = Vec3::Zero();  // body frame, m/s^2
  Vec3 angular_velocity = Vec3::Zero();     // body frame, rad/s
  double timestamp = 0.0;
};

struct GpsFix {
  Vec2 position = Vec2::Zero();
  double horizontal_accuracy = 1.0;
  double timestamp = 0.0;
};

// ---------------------------------------------------------------------------
// Triangulation
// ---------------------------------------------------------------------------

struct ViewObservation {
  Vec2 pixel;
  Pose3 world_from_camera;
};

struct TriangulationOptions {
  double min_baseline = 0.01;
  double min_ray_angle_deg = 0.5;
  double max_reprojection_px = 2.0;
};

/// Midpoint of the shortest segment between the two viewing rays. Throws
/// DegenerateBaseline for short baselines or near-parallel rays, BehindCamera
/// when the solution is behind either view, and InvalidArgument when the
/// reprojection error exceeds the limit.
Vec3 triangulate_landmark(const ViewObservation& a, const ViewObservation& b,
                          const CameraIntrinsics& intr, const TriangulationOptions& options = {});

struct RefinedPoint {
  Vec3 point;
  double max_residual_px = 0.0;
  double rms_px = 0.0;
};

/// Gauss-Newton refinement of a point over every view, starting at `initial`.
/// Throws BehindCamera when the point leaves a view's frustum depth.
RefinedPoint refine_landmark(std::span<const ViewObservation> views, const CameraIntrinsics& intr,
                             const Vec3& initial, int iterations = 10);

// ---------------------------------------------------------------------------
// Perspective-n-Point over the rig
// ---------------------------------------------------------------------------

struct Correspondence {
  Vec3 landmark;  // world frame
  Vec2 pixel;
  int camera = 0;
};

using Jacobian26 = Eigen::Matrix<double, 2, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

struct PnpOptions {
  int max_iterations = 50;
  double step_tolerance = 1e-8;
  double outlier_threshold_px = 3.0;
  /// Huber scale used while deciding inliers; the final solve is plain least squares.
  double huber_px = 3.0;
  /// Solve only (x, y, yaw) and keep z, roll and pitch fixed.
  bool planar = false;
};

struct PnpResult {
  Pose3 pose;
  int inlier_count = 0;
  std::vector<bool> inliers;
  double rms_px = 0.0;
  int iterations = 0;
};

/// Projected minus observed pixel for the body pose `world_from_body`.
/// Throws BehindCamera when the landmark is not in front of the camera.
Eigen::Vector2d reprojection_residual(const Pose3& world_from_body, const Correspondence& c,
                                      const CameraRig& rig);

/// d(residual)/d(delta) for the right perturbation world_from_body * Exp(delta),
/// delta = (rho, phi) with rho in the body frame.
Jacobian26 reprojection_jacobian(const Pose3& world_from_body, const Correspondence& c,
                                 const CameraRig& rig);

PnpResult pnp_estimate(std::span<const Correspondence> correspondences, const CameraRig& rig,
                       const Pose3& initial, const PnpOptions& options = {});

// ---------------------------------------------------------------------------
// Prediction and fusion
// ---------------------------------------------------------------------------

/// Planar dead reckoning from one IMU sample. |v| is clamped to v_max.
RobotState imu_predict(const RobotState& state, const ImuSample& imu, double dt,
                       double v_max = 1.5);

struct PoseMeasurement {
  Pose3 pose;
  int inliers = 0;
  double timestamp = 0.0;
};

struct FusionParams {
  double vision_gain = 0.8;
  int full_confidence_inliers = 30;
  double process_sigma = 0.5;
  double max_gps_gain = 0.5;
  double max_epoch_offset = 0.05;
};

/// Fixed-gain complementary blend of the prediction with PnP and GPS.
RobotState fuse_state(const RobotState& predicted, const std::optional<PoseMeasurement>& pnp,
                      const std::optional<GpsFix>& gps, const FusionParams& params = {});

// ---------------------------------------------------------------------------
// Estimator
// ---------------------------------------------------------------------------

struct TrackKey {
  int camera = 0;
  std::uint64_t id = 0;
  auto operator<=>(const TrackKey&) const = default;
};

struct VoConfig {
  PnpOptions pnp{.planar = true};
  TriangulationOptions triangulation;
  FusionParams fusion;
  int min_correspondences = 8;
  double min_track_baseline = 0.05;
  /// New landmarks must reproject within this bound into every view of their track.
  double max_track_residual_px = 1.0;
  std::size_t max_landmarks = 2000;
  double v_max = 1.5;
};

struct VoFrameReport {
  bool pnp_used = false;
  int correspondences = 0;
  int inliers = 0;
  int new_landmarks = 0;
  std::size_t landmark_count = 0;
  bool gps_used = false;
  std::optional<Pose3> pnp_pose;
  double pnp_rms_px = 0.0;
};

/// Owns the landmark map and the fused state. Not thread-safe; the feature
/// stage hands it per-camera TrackSet snapshots once per frame.
class VisualOdometry {
 public:
  VisualOdometry(CameraRig rig, VoConfig config, RobotState initial);

  /// IMU propagation between frames.
  void propagate(const ImuSample& imu, double dt);

  /// Frame update at `timestamp`. `anchor`, when given, overrides the fused
  /// pose (metric bootstrap from ground truth during the first frames).
  VoFrameReport update(std::int64_t frame, double timestamp,
                       std::span<const features::TrackSet> cameras,
                       const std::optional<GpsFix>& gps,
                       const std::optional<Pose3>& anchor = std::nullopt);

  const RobotState& state() const { return state_; }
  const std::map<TrackKey, Landmark>& landmarks() const { return landmarks_; }

 private:
  void triangulate_new(std::int64_t frame, std::span<const features::TrackSet> cameras,
                       VoFrameReport& report);

  CameraRig rig_;
  VoConfig config_;
  RobotState state_;
  std::map<TrackKey, Landmark> landmarks_;
  std::set<TrackKey> rejected_;
  std::unordered_map<std::int64_t, Pose3> pose_history_;
};

}  // namespace amtu::vo
