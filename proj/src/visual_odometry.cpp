#include "amtu/visual_odometry.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

namespace amtu::vo {

using features::TrackSet;
using features::TrackState;

Vec3 triangulate_landmark(const ViewObservation& a, const ViewObservation& b,
                          const CameraIntrinsics& intr, const TriangulationOptions& options) {
  const Vec3 ca = a.world_from_camera.translation();
  const Vec3 cb = b.world_from_camera.translation();
  if ((cb - ca).norm() < options.min_baseline) {
    fail(ErrorCode::DegenerateBaseline, "baseline below minimum");
  }
  const Vec3 da = a.world_from_camera.rotation() * unproject_ray(intr, a.pixel);
  const Vec3 db = b.world_from_camera.rotation() * unproject_ray(intr, b.pixel);
  const double cos_angle = std::clamp(da.dot(db), -1.0, 1.0);
  if (std::acos(cos_angle) < deg2rad(options.min_ray_angle_deg)) {
    fail(ErrorCode::DegenerateBaseline, "viewing rays nearly parallel");
  }
  // Closest points ca + s*da and cb + t*db.
  const Vec3 w = ca - cb;
  const double bb = da.dot(db);
  const double d = da.dot(w), e = db.dot(w);
  const double denom = 1.0 - bb * bb;
  const double s = (bb * e - d) / denom;
  const double t = (e - bb * d) / denom;
  if (!(s > 0.0) || !(t > 0.0)) fail(ErrorCode::BehindCamera, "triangulated point behind a view");
  const Vec3 point = 0.5 * ((ca + s * da) + (cb + t * db));
  for (const ViewObservation* v : {&a, &b}) {
    const Vec2 proj = project_point(intr, v->world_from_camera.inverse(), point);
    if ((proj - v->pixel).norm() > options.max_reprojection_px) {
      fail(ErrorCode::InvalidArgument, "triangulated point fails the reprojection check");
    }
  }
  return point;
}

RefinedPoint refine_landmark(std::span<const ViewObservation> views, const CameraIntrinsics& intr,
                             const Vec3& initial, int iterations) {
  if (views.empty()) fail(ErrorCode::InvalidArgument, "no views to refine against");
  std::vector<Pose3> cam_from_world;
  for (const auto& v : views) cam_from_world.push_back(v.world_from_camera.inverse());
  Vec3 p = initial;
  for (int it = 0; it < iterations; ++it) {
    Mat3 h = Mat3::Zero();
    Vec3 g = Vec3::Zero();
    for (std::size_t i = 0; i < views.size(); ++i) {
      const Vec3 pc = cam_from_world[i].apply(p);
      if (pc.z() <= 1e-6) fail(ErrorCode::BehindCamera, "refined point behind a view");
      const double iz = 1.0 / pc.z();
      const Eigen::Vector2d r(intr.fx * pc.x() * iz + intr.cx - views[i].pixel.x(),
                              intr.fy * pc.y() * iz + intr.cy - views[i].pixel.y());
      Eigen::Matrix<double, 2, 3> jc;
      jc << intr.fx * iz, 0.0, -intr.fx * pc.x() * iz * iz,
            0.0, intr.fy * iz, -intr.fy * pc.y() * iz * iz;
      const Eigen::Matrix<double, 2, 3> j = jc * cam_from_world[i].rotation();
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    const Vec3 step = -h.ldlt().solve(g);
    if (!step.allFinite()) break;
    p += step;
    if (step.norm() < 1e-9) break;
  }
  RefinedPoint out{p, 0.0, 0.0};
  double sq = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Vec2 proj = project_point(intr, cam_from_world[i], p);
    const double e = (proj - views[i].pixel).norm();
    out.max_residual_px = std::max(out.max_residual_px, e);
    sq += e * e;
  }
  out.rms_px = std::sqrt(sq / static_cast<double>(views.size()));
  return out;
}

namespace {

struct ProjectionTerms {
  Vec3 body_point;
  Vec3 cam_point;
  Eigen::Vector2d residual;
};

ProjectionTerms project(const Pose3& world_from_body, const Correspondence& c,
                        const CameraRig& rig) {
  const RigCamera& cam = rig[static_cast<std::size_t>(c.camera)];
  ProjectionTerms t;
  t.body_point = world_from_body.rotation().transpose() *
                 (c.landmark - world_from_body.translation());
  t.cam_point = cam.cam_from_body.apply(t.body_point);
  if (!(t.cam_point.z() > 1e-6)) fail(ErrorCode::BehindCamera, "landmark behind camera");
  const auto& k = cam.intrinsics;
  t.residual = Eigen::Vector2d(k.fx * t.cam_point.x() / t.cam_point.z() + k.cx,
                               k.fy * t.cam_point.y() / t.cam_point.z() + k.cy) -
               c.pixel;
  return t;
}

}  // namespace

Eigen::Vector2d reprojection_residual(const Pose3& world_from_body, const Correspondence& c,
                                      const CameraRig& rig) {
  return project(world_from_body, c, rig).residual;
}

Jacobian26 reprojection_jacobian(const Pose3& world_from_body, const Correspondence& c,
                                 const CameraRig& rig) {
  const ProjectionTerms t = project(world_from_body, c, rig);
  const RigCamera& cam = rig[static_cast<std::size_t>(c.camera)];
  const auto& k = cam.intrinsics;
  const double x = t.cam_point.x(), y = t.cam_point.y(), z = t.cam_point.z();
  Eigen::Matrix<double, 2, 3> d_proj;
  d_proj << k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z);
  // Body point under the right perturbation: X_b - rho + [X_b]x phi.
  Eigen::Matrix<double, 3, 6> d_body;
  d_body.leftCols<3>() = -Mat3::Identity();
  d_body.rightCols<3>() = skew(t.body_point);
  return d_proj * cam.cam_from_body.rotation() * d_body;
}

namespace {

struct SolveOutcome {
  Pose3 pose;
  int iterations = 0;
};

// Per-correspondence weight and cost for the robust or plain objective.
double robust_cost(double r2, double huber, double* weight) {
  if (huber <= 0.0) {
    *weight = 1.0;
    return r2;
  }
  const double r = std::sqrt(r2);
  if (r <= huber) {
    *weight = 1.0;
    return r2;
  }
  *weight = huber / r;
  return 2.0 * huber * r - huber * huber;
}

double total_cost(const Pose3& pose, std::span<const Correspondence> cs,
                  const std::vector<bool>& active, const CameraRig& rig, double huber) {
  double cost = 0.0;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (!active[i]) continue;
    try {
      double w;
      cost += robust_cost(reprojection_residual(pose, cs[i], rig).squaredNorm(), huber, &w);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return cost;
}

SolveOutcome damped_gauss_newton(std::span<const Correspondence> cs,
                                 const std::vector<bool>& active, const CameraRig& rig,
                                 const Pose3& initial, const PnpOptions& opt, double huber) {
  const std::vector<int> dofs = opt.planar ? std::vector<int>{0, 1, 5}
                                           : std::vector<int>{0, 1, 2, 3, 4, 5};
  const int n = static_cast<int>(dofs.size());
  Pose3 pose = initial;
  double cost = total_cost(pose, cs, active, rig, huber);
  if (!std::isfinite(cost)) fail(ErrorCode::DivergedSolve, "initial pose puts landmarks behind a camera");
  double lambda = 1e-4;
  int rejected = 0;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      if (!active[i]) continue;
      const Eigen::Vector2d r = reprojection_residual(pose, cs[i], rig);
      const Jacobian26 j_full = reprojection_jacobian(pose, cs[i], rig);
      Eigen::MatrixXd j(2, n);
      for (int k = 0; k < n; ++k) j.col(k) = j_full.col(dofs[k]);
      double w;
      robust_cost(r.squaredNorm(), huber, &w);
      h.noalias() += w * j.transpose() * j;
      g.noalias() += w * j.transpose() * r;
    }
    Eigen::MatrixXd damped = h;
    damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
    const Eigen::VectorXd step = damped.ldlt().solve(-g);
    if (!step.allFinite()) fail(ErrorCode::DivergedSolve, "non-finite Gauss-Newton step");
    if (step.norm() < opt.step_tolerance) break;
    Vec6 delta = Vec6::Zero();
    for (int k = 0; k < n; ++k) delta[dofs[k]] = step[k];
    const Pose3 candidate = retract(pose, delta);
    const double new_cost = total_cost(candidate, cs, active, rig, huber);
    if (new_cost <= cost) {
      pose = candidate;
      cost = new_cost;
      lambda = std::max(lambda * 0.1, 1e-12);
      rejected = 0;
    } else {
      lambda *= 10.0;
      if (++rejected >= 5) fail(ErrorCode::DivergedSolve, "cost increased for 5 consecutive steps");
    }
  }
  return {pose, it};
}

}  // namespace

PnpResult pnp_estimate(std::span<const Correspondence> cs, const CameraRig& rig,
                       const Pose3& initial, const PnpOptions& options) {
  if (cs.size() < 4) fail(ErrorCode::InsufficientCorrespondences, "need at least 4 correspondences");
  for (const auto& c : cs) {
    if (c.camera < 0 || static_cast<std::size_t>(c.camera) >= rig.count()) {
      fail(ErrorCode::InvalidArgument, "correspondence camera index out of range");
    }
  }
  std::vector<bool> active(cs.size(), true);
  const SolveOutcome first = damped_gauss_newton(cs, active, rig, initial, options, options.huber_px);

  int inliers = 0;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    double err = std::numeric_limits<double>::infinity();
    try {
      err = reprojection_residual(first.pose, cs[i], rig).norm();
    } catch (const Error&) {
    }
    active[i] = err <= options.outlier_threshold_px;
    inliers += active[i];
  }
  if (inliers < 4) fail(ErrorCode::InsufficientCorrespondences, "fewer than 4 inliers");

  const SolveOutcome second = damped_gauss_newton(cs, active, rig, first.pose, options, 0.0);
  PnpResult result;
  result.pose = second.pose;
  result.inliers = active;
  result.inlier_count = inliers;
  result.iterations = first.iterations + second.iterations;
  result.rms_px = std::sqrt(total_cost(second.pose, cs, active, rig, 0.0) / inliers);
  return result;
}

RobotState imu_predict(const RobotState& state, const ImuSample& imu, double dt, double v_max) {
  if (!(dt > 0.0)) fail(ErrorCode::NonPositiveDt, "dt must be positive");
  if (dt > 0.1 + 1e-12) fail(ErrorCode::InvalidArgument, "dt must be at most 0.1 s");
  const double yaw = wrap_angle(state.yaw() + imu.angular_velocity.z() * dt);
  const double x = state.x() + state.v * dt * std::cos(yaw);
  const double y = state.y() + state.v * dt * std::sin(yaw);
  RobotState out;
  out.pose = Pose3::planar(x, y, yaw);
  out.v = std::clamp(state.v + imu.linear_acceleration.x() * dt, -v_max, v_max);
  out.omega = imu.angular_velocity.z();
  out.timestamp = state.timestamp + dt;
  return out;
}

RobotState fuse_state(const RobotState& predicted, const std::optional<PoseMeasurement>& pnp,
                      const std::optional<GpsFix>& gps, const FusionParams& params) {
  double x = predicted.x(), y = predicted.y(), yaw = predicted.yaw();
  if (pnp) {
    if (std::abs(pnp->timestamp - predicted.timestamp) > params.max_epoch_offset) {
      fail(ErrorCode::StaleMeasurement, "PnP epoch differs from the prediction by > 50 ms");
    }
    const double confidence =
        std::min(1.0, static_cast<double>(pnp->inliers) / params.full_confidence_inliers);
    const double g = confidence * params.vision_gain;
    const Vec3& t = pnp->pose.translation();
    x += g * (t.x() - x);
    y += g * (t.y() - y);
    yaw = wrap_angle(yaw + g * wrap_angle(pnp->pose.yaw() - yaw));
  }
  if (gps) {
    if (std::abs(gps->timestamp - predicted.timestamp) > params.max_epoch_offset) {
      fail(ErrorCode::StaleMeasurement, "GPS epoch differs from the prediction by > 50 ms");
    }
    const double g = std::clamp(
        params.process_sigma / (params.process_sigma + gps->horizontal_accuracy), 0.0,
        params.max_gps_gain);
    x += g * (gps->position.x() - x);
    y += g * (gps->position.y() - y);
  }
  if (!pnp && !gps) return predicted;
  RobotState out = predicted;
  out.pose = Pose3::planar(x, y, yaw);
  return out;
}

VisualOdometry::VisualOdometry(CameraRig rig, VoConfig config, RobotState initial)
    : rig_(std::move(rig)), config_(config), state_(initial) {}

void VisualOdometry::propagate(const ImuSample& imu, double dt) {
  state_ = imu_predict(state_, imu, dt, config_.v_max);
}

VoFrameReport VisualOdometry::update(std::int64_t frame, double timestamp,
                                     std::span<const TrackSet> cameras,
                                     const std::optional<GpsFix>& gps,
                                     const std::optional<Pose3>& anchor) {
  VoFrameReport report;

  // Landmarks whose track ended can never be observed again.
  std::set<TrackKey> alive;
  for (const auto& set : cameras) {
    for (const auto& t : set.tracks) {
      if (t.status == TrackState::Active) alive.insert({set.camera_index, t.id});
    }
  }
  std::erase_if(landmarks_, [&](const auto& kv) { return !alive.contains(kv.first); });
  std::erase_if(rejected_, [&](const TrackKey& k) { return !alive.contains(k); });

  std::vector<Correspondence> cs;
  std::vector<TrackKey> keys;
  for (const auto& set : cameras) {
    for (const auto& t : set.tracks) {
      if (t.status != TrackState::Active || t.positions.back().frame != frame) continue;
      const TrackKey key{set.camera_index, t.id};
      auto it = landmarks_.find(key);
      if (it == landmarks_.end()) continue;
      cs.push_back({it->second.position, t.latest(), set.camera_index});
      keys.push_back(key);
      ++it->second.observation_count;
    }
  }
  report.correspondences = static_cast<int>(cs.size());

  std::optional<PoseMeasurement> measurement;
  if (static_cast<int>(cs.size()) >= config_.min_correspondences) {
    try {
      const PnpResult pnp = pnp_estimate(cs, rig_, state_.pose, config_.pnp);
      measurement = PoseMeasurement{pnp.pose, pnp.inlier_count, timestamp};
      report.pnp_used = true;
      report.inliers = pnp.inlier_count;
      report.pnp_pose = pnp.pose;
      report.pnp_rms_px = pnp.rms_px;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (!pnp.inliers[i]) {
          landmarks_.erase(keys[i]);
          rejected_.insert(keys[i]);
        }
      }
    } catch (const Error&) {
      measurement.reset();
    }
  }

  RobotState predicted = state_;
  predicted.timestamp = timestamp;
  state_ = fuse_state(predicted, measurement, std::nullopt, config_.fusion);
  if (gps) {
    // The fix moves the whole local map with the robot so that the next PnP
    // solve does not pull the estimate back onto the drifted landmarks.
    const Vec3 before = state_.pose.translation();
    state_ = fuse_state(state_, std::nullopt, gps, config_.fusion);
    const Vec3 shift = state_.pose.translation() - before;
    for (auto& [key, lm] : landmarks_) lm.position += shift;
    for (auto& [f, pose] : pose_history_) pose = Pose3(pose.rotation(), pose.translation() + shift);
  }
  report.gps_used = gps.has_value();
  if (anchor) state_.pose = *anchor;
  pose_history_[frame] = state_.pose;

  triangulate_new(frame, cameras, report);

  while (landmarks_.size() > config_.max_landmarks) {
    auto oldest = std::min_element(landmarks_.begin(), landmarks_.end(), [](const auto& a, const auto& b) {
      return a.second.created_frame < b.second.created_frame;
    });
    landmarks_.erase(oldest);
  }
  // Poses older than every live track's first observation are no longer needed.
  std::int64_t oldest_needed = frame;
  for (const auto& set : cameras) {
    for (const auto& t : set.tracks) oldest_needed = std::min(oldest_needed, t.positions.front().frame);
  }
  std::erase_if(pose_history_, [&](const auto& kv) { return kv.first < oldest_needed; });

  report.landmark_count = landmarks_.size();
  return report;
}

void VisualOdometry::triangulate_new(std::int64_t frame, std::span<const TrackSet> cameras,
                                     VoFrameReport& report) {
  for (const auto& set : cameras) {
    const RigCamera& cam = rig_[static_cast<std::size_t>(set.camera_index)];
    const Pose3 body_from_cam = cam.cam_from_body.inverse();
    for (const auto& t : set.tracks) {
      if (t.status != TrackState::Active || t.positions.size() < 2) continue;
      if (t.positions.back().frame != frame) continue;
      const TrackKey key{set.camera_index, t.id};
      if (landmarks_.contains(key) || rejected_.contains(key)) continue;
      const auto& first = t.positions.front();
      auto hist = pose_history_.find(first.frame);
      if (hist == pose_history_.end()) continue;
      const Pose3 cam_a = hist->second * body_from_cam;
      const Pose3 cam_b = state_.pose * body_from_cam;
      if ((cam_a.translation() - cam_b.translation()).norm() < config_.min_track_baseline) continue;
      std::vector<ViewObservation> views;
      for (const auto& o : t.positions) {
        const auto h = pose_history_.find(o.frame);
        if (h != pose_history_.end()) views.push_back({o.pixel, h->second * body_from_cam});
      }
      try {
        const Vec3 p0 = triangulate_landmark({first.pixel, cam_a}, {t.latest(), cam_b},
                                             cam.intrinsics, config_.triangulation);
        const RefinedPoint r = refine_landmark(views, cam.intrinsics, p0);
        if (r.max_residual_px > config_.max_track_residual_px) {
          rejected_.insert(key);
          continue;
        }
        landmarks_[key] = Landmark{t.id, set.camera_index, r.point, static_cast<int>(t.positions.size()), frame};
        ++report.new_landmarks;
      } catch (const Error& e) {
        // Low parallax resolves itself as the baseline grows; anything else is a bad track.
        if (e.code() != ErrorCode::DegenerateBaseline) rejected_.insert(key);
      }
    }
  }
}

}  // namespace amtu::vo
