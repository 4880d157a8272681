#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <string>
#include <vector>

#include "amtu/error.hpp"

// Frame conventions used throughout:
//   world  - z up, ground plane z = 0 by default
//   body   - x forward, y left, z up
//   camera - z along the optical axis, x right, y down (pixel axes)

namespace amtu {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle to (-pi, pi].
double wrap_angle(double angle);

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);
/// R = Rz(yaw) * Ry(pitch) * Rx(roll), angles in radians.
Mat3 rotation_from_ypr(double yaw, double pitch, double roll);
/// Skew-symmetric cross-product matrix.
Mat3 skew(const Vec3& v);
/// Rodrigues exponential of a rotation vector.
Mat3 so3_exp(const Vec3& phi);

/// Rigid transform x -> R x + t. The rotation is validated on construction.
class Pose3 {
 public:
  Pose3() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Pose3(const Mat3& rotation, const Vec3& translation);

  static Pose3 identity() { return {}; }
  /// Planar pose on the ground plane: translation (x, y, 0), yaw about +z.
  static Pose3 planar(double x, double y, double yaw);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Pose3 inverse() const;
  /// Yaw of the body x axis projected onto the world xy plane.
  double yaw() const;

 private:
  struct Unchecked {};
  Pose3(const Mat3& r, const Vec3& t, Unchecked) : rotation_(r), translation_(t) {}

  friend Pose3 compose_pose(const Pose3& a, const Pose3& b);
  friend Pose3 retract(const Pose3& pose, const Eigen::Matrix<double, 6, 1>& delta);

  Mat3 rotation_;
  Vec3 translation_;
};

/// a * b: applies b first, then a.
Pose3 compose_pose(const Pose3& a, const Pose3& b);
inline Pose3 operator*(const Pose3& a, const Pose3& b) { return compose_pose(a, b); }

/// Right perturbation pose * Exp(delta), delta = (translation rho, rotation phi).
Pose3 retract(const Pose3& pose, const Eigen::Matrix<double, 6, 1>& delta);

/// Max deviation of R^T R from identity plus |det R - 1|.
double orthonormality_error(const Mat3& r);

struct CameraIntrinsics {
  double fx = 160.0;
  double fy = 160.0;
  double cx = 160.0;
  double cy = 120.0;
  int width = 320;
  int height = 240;

  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;
  bool contains(const Vec2& pixel) const {
    return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() <= width - 1.0 &&
           pixel.y() <= height - 1.0;
  }
};

/// Pinhole projection. Throws BehindCamera when the camera-frame depth is <= 1e-6 m.
Vec2 project_point(const CameraIntrinsics& intr, const Pose3& cam_from_world, const Vec3& point);
/// Unit ray through a pixel, camera frame.
Vec3 unproject_ray(const CameraIntrinsics& intr, const Vec2& pixel);

struct GroundPlane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;

  static GroundPlane make(const Vec3& normal, double offset);
  double signed_distance(const Vec3& p) const { return normal.dot(p) - offset; }
};

/// Throws NoIntersection for rays parallel to the plane or hitting it behind the origin.
Vec3 ray_ground_intersection(const Vec3& origin, const Vec3& dir, const GroundPlane& plane);

struct RigCamera {
  CameraIntrinsics intrinsics;
  Pose3 cam_from_body;
};

class CameraRig {
 public:
  CameraRig() = default;
  explicit CameraRig(std::vector<RigCamera> cameras);

  /// Four cameras at yaw 0, 90, 180, 270 degrees, 0.5 m above the body origin
  /// and pitched 15 degrees down. These mounting values are assumptions, not
  /// measured calibration.
  static CameraRig default_rig(const CameraIntrinsics& intr = {});

  std::size_t count() const { return cameras_.size(); }
  const RigCamera& operator[](std::size_t i) const { return cameras_.at(i); }
  const std::vector<RigCamera>& cameras() const { return cameras_; }

 private:
  std::vector<RigCamera> cameras_;
};

/// Body-from-camera rotation for a camera mounted with the given body-frame
/// yaw/pitch/roll; positive pitch tilts the optical axis down.
Mat3 mount_rotation(double yaw, double pitch, double roll);
/// Camera-from-body pose for a camera at body-frame position `position` with
/// mounting angles in radians.
Pose3 camera_from_mount(double yaw, double pitch, double roll, const Vec3& position);

/// Calibration JSON (see docs/calibration.md).
CameraRig load_calibration(const std::string& path);
void save_calibration(const CameraRig& rig, const std::string& path);
std::string calibration_to_json(const CameraRig& rig);
CameraRig calibration_from_json(const std::string& text);

}  // namespace amtu
