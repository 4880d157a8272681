#include "amtu/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include "json.hpp"
#include <sstream>

namespace amtu {

double wrap_angle(double angle) {
  if (angle > -kPi && angle <= kPi) return angle;
  double a = std::fmod(angle + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

Mat3 rot_x(double a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}

Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

Mat3 rotation_from_ypr(double yaw, double pitch, double roll) {
  return rot_z(yaw) * rot_y(pitch) * rot_x(roll);
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

Mat3 so3_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < 1e-8) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

double orthonormality_error(const Mat3& r) {
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho + std::abs(r.determinant() - 1.0);
}

Pose3::Pose3(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    fail(ErrorCode::InvalidArgument, "pose contains non-finite values");
  }
  if (orthonormality_error(rotation) > 1e-9) {
    fail(ErrorCode::InvalidArgument, "rotation is not orthonormal with det +1");
  }
}

Pose3 Pose3::planar(double x, double y, double yaw) {
  return Pose3(rot_z(yaw), Vec3(x, y, 0.0), Unchecked{});
}

Pose3 Pose3::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return Pose3(rt, -(rt * translation_), Unchecked{});
}

double Pose3::yaw() const { return std::atan2(rotation_(1, 0), rotation_(0, 0)); }

Pose3 compose_pose(const Pose3& a, const Pose3& b) {
  return Pose3(a.rotation_ * b.rotation_, a.rotation_ * b.translation_ + a.translation_,
               Pose3::Unchecked{});
}

Pose3 retract(const Pose3& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  // Retraction (R, t) * (Exp(phi), rho): translation rho in the body frame.
  const Mat3 dr = so3_exp(delta.tail<3>());
  const Vec3 rho = delta.head<3>();
  const Mat3 r = pose.rotation_ * dr;
  return Pose3(r, pose.rotation_ * rho + pose.translation_, Pose3::Unchecked{});
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) fail(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) fail(ErrorCode::InvalidArgument, "image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    fail(ErrorCode::InvalidArgument, "principal point outside the image");
  }
}

Vec2 project_point(const CameraIntrinsics& intr, const Pose3& cam_from_world, const Vec3& point) {
  const Vec3 pc = cam_from_world.apply(point);
  if (!(pc.z() > 1e-6)) fail(ErrorCode::BehindCamera, "point depth <= 1e-6 m");
  return {intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy};
}

Vec3 unproject_ray(const CameraIntrinsics& intr, const Vec2& pixel) {
  return Vec3((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0).normalized();
}

GroundPlane GroundPlane::make(const Vec3& normal, double offset) {
  const double n = normal.norm();
  if (!(n > 0.0)) fail(ErrorCode::InvalidArgument, "ground normal must be non-zero");
  return GroundPlane{normal / n, offset / n};
}

Vec3 ray_ground_intersection(const Vec3& origin, const Vec3& dir, const GroundPlane& plane) {
  const double denom = plane.normal.dot(dir);
  if (std::abs(denom) < 1e-9) fail(ErrorCode::NoIntersection, "ray parallel to the ground");
  const double t = (plane.offset - plane.normal.dot(origin)) / denom;
  if (!(t > 0.0)) fail(ErrorCode::NoIntersection, "ground intersection behind the ray origin");
  return origin + t * dir;
}

namespace {

// Body-from-camera rotation of a forward-looking camera: optical axis along
// body +x, image x along body -y, image y along body -z.
Mat3 optical_to_body() {
  Mat3 r;
  r.col(0) = Vec3(0, -1, 0);
  r.col(1) = Vec3(0, 0, -1);
  r.col(2) = Vec3(1, 0, 0);
  return r;
}

}  // namespace

Mat3 mount_rotation(double yaw, double pitch, double roll) {
  return rotation_from_ypr(yaw, pitch, roll) * optical_to_body();
}

Pose3 camera_from_mount(double yaw, double pitch, double roll, const Vec3& position) {
  const Mat3 body_from_cam = mount_rotation(yaw, pitch, roll);
  return Pose3(body_from_cam, position).inverse();
}

CameraRig::CameraRig(std::vector<RigCamera> cameras) : cameras_(std::move(cameras)) {
  if (cameras_.empty()) fail(ErrorCode::InvalidArgument, "camera rig needs at least one camera");
  for (const auto& c : cameras_) c.intrinsics.validate();
}

CameraRig CameraRig::default_rig(const CameraIntrinsics& intr) {
  std::vector<RigCamera> cams;
  for (int k = 0; k < 4; ++k) {
    cams.push_back({intr, camera_from_mount(deg2rad(90.0 * k), deg2rad(15.0), 0.0, Vec3(0, 0, 0.5))});
  }
  return CameraRig(std::move(cams));
}

namespace {

struct Mount {
  double yaw, pitch, roll;
  Vec3 position;
};

Mount mount_from_pose(const Pose3& cam_from_body) {
  const Pose3 body_from_cam = cam_from_body.inverse();
  const Mat3 r = body_from_cam.rotation() * optical_to_body().transpose();
  Mount m;
  m.yaw = std::atan2(r(1, 0), r(0, 0));
  m.pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  m.roll = std::atan2(r(2, 1), r(2, 2));
  m.position = body_from_cam.translation();
  return m;
}

}  // namespace

std::string calibration_to_json(const CameraRig& rig) {
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : rig.cameras()) {
    const Mount m = mount_from_pose(c.cam_from_body);
    cams.push_back({
        {"intrinsics",
         {{"fx", c.intrinsics.fx},
          {"fy", c.intrinsics.fy},
          {"cx", c.intrinsics.cx},
          {"cy", c.intrinsics.cy},
          {"width", c.intrinsics.width},
          {"height", c.intrinsics.height}}},
        {"extrinsics",
         {{"yaw_deg", rad2deg(m.yaw)},
          {"pitch_deg", rad2deg(m.pitch)},
          {"roll_deg", rad2deg(m.roll)},
          {"position_m", {m.position.x(), m.position.y(), m.position.z()}}}},
    });
  }
  nlohmann::json doc = {{"format", "amtu-calibration"}, {"version", 1}, {"cameras", cams}};
  return doc.dump(2);
}

CameraRig calibration_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
    std::vector<RigCamera> cams;
    for (const auto& c : doc.at("cameras")) {
      const auto& in = c.at("intrinsics");
      CameraIntrinsics intr{in.at("fx").get<double>(), in.at("fy").get<double>(),
                            in.at("cx").get<double>(), in.at("cy").get<double>(),
                            in.at("width").get<int>(),  in.at("height").get<int>()};
      const auto& ex = c.at("extrinsics");
      const auto& p = ex.at("position_m");
      const Vec3 pos(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
      cams.push_back({intr, camera_from_mount(deg2rad(ex.at("yaw_deg").get<double>()),
                                              deg2rad(ex.at("pitch_deg").get<double>()),
                                              deg2rad(ex.value("roll_deg", 0.0)), pos)});
    }
    return CameraRig(std::move(cams));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("calibration: ") + e.what());
  }
}

CameraRig load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return calibration_from_json(ss.str());
}

void save_calibration(const CameraRig& rig, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path);
  out << calibration_to_json(rig) << "\n";
}

}  // namespace amtu
