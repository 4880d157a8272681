#include "amtu/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

#include "amtu/csv.hpp"

namespace amtu::sim {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

}  // namespace

std::uint64_t CounterRng::hash(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t x = mix64(a + 0x9E3779B97F4A7C15ULL);
  x = mix64(x ^ (b + 0x632BE59BD9B4E019ULL));
  return mix64(x ^ (c + 0xD6E8FEB86659FD93ULL));
}

double CounterRng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

void Scene::validate() const {
  std::set<int> ids;
  for (const auto& o : obstacles) {
    if (o.instance_id <= 0 || !ids.insert(o.instance_id).second) {
      fail(ErrorCode::InvalidArgument, "obstacle instance ids must be positive and unique");
    }
  }
  if ((ground.normal - Vec3::UnitZ()).norm() > 1e-12 || ground.offset != 0.0) {
    fail(ErrorCode::InvalidArgument, "simulated ground must be the z = 0 plane");
  }
}

namespace {

planning::ReferenceTrajectory make_route(const SceneConfig& cfg) {
  if (cfg.route == "straight") {
    return planning::ReferenceTrajectory::straight(Vec2::Zero(), 0.0, cfg.length, 0.5, cfg.speed);
  }
  if (cfg.route == "circle") {
    return planning::ReferenceTrajectory::circle(Vec2(0.0, cfg.radius), cfg.radius, 360, cfg.speed);
  }
  if (cfg.route == "loop") {
    // Stadium: two straights joined by semicircles of radius r, total length cfg.length.
    const double r = std::min(8.0, cfg.length / (2.0 * kPi + 2.0));
    const double a = (cfg.length - 2.0 * kPi * r) / 2.0;
    std::vector<Vec2> pts;
    const int ns = std::max(1, static_cast<int>(std::round(a / 0.5)));
    const int na = 180;
    for (int i = 0; i < ns; ++i) pts.emplace_back(a * i / ns, 0.0);
    for (int i = 0; i < na; ++i) {
      const double t = -kPi / 2.0 + kPi * i / na;
      pts.emplace_back(a + r * std::cos(t), r + r * std::sin(t));
    }
    for (int i = 0; i < ns; ++i) pts.emplace_back(a - a * i / ns, 2.0 * r);
    for (int i = 0; i < na; ++i) {
      const double t = kPi / 2.0 + kPi * i / na;
      pts.emplace_back(r * std::cos(t), r + r * std::sin(t));
    }
    return planning::ReferenceTrajectory(std::move(pts), true,
                                         std::vector<std::optional<double>>(2 * ns + 2 * na, cfg.speed));
  }
  fail(ErrorCode::InvalidArgument, "unknown route kind " + cfg.route);
}

}  // namespace

Scene make_scene(const SceneConfig& cfg) {
  Scene scene;
  scene.seed = cfg.seed;
  scene.texture = cfg.texture;
  scene.route = make_route(cfg);
  const auto& route = scene.route;

  CounterRng rng(cfg.seed, static_cast<std::uint64_t>(Stream::Landmarks));
  for (int i = 0; i < cfg.landmark_count; ++i) {
    const double s = rng.uniform(0.0, route.length());
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double lateral = side * rng.uniform(3.0, 12.0);
    const double height = rng.uniform(0.3, 3.0);
    const double amp = rng.uniform(60.0, 100.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const double h = route.heading_at(s);
    const Vec2 p = route.point_at(s) + lateral * Vec2(-std::sin(h), std::cos(h));
    scene.landmarks.push_back({Vec3(p.x(), p.y(), height), amp});
  }

  CounterRng orng(cfg.seed, static_cast<std::uint64_t>(Stream::Scene));
  int placed = 0;
  for (int attempt = 0; placed < cfg.obstacle_count && attempt < 100 * (cfg.obstacle_count + 1); ++attempt) {
    Obstacle o;
    const bool pedestrian = orng.uniform() < 0.3;
    o.shape = pedestrian ? Obstacle::Shape::Box : Obstacle::Shape::Cylinder;
    o.class_id = pedestrian ? kClassPedestrian : kClassVegetation;
    o.radius = orng.uniform(0.2, 0.6);
    o.half_size = Vec2(0.2, 0.3);
    o.yaw = orng.uniform(-kPi, kPi);
    o.height = pedestrian ? 1.7 : orng.uniform(1.5, 4.0);
    o.intensity = static_cast<std::uint8_t>(pedestrian ? 60 : 35);
    const double extent = pedestrian ? o.half_size.norm() : o.radius;
    const double s = orng.uniform(0.0, route.length());
    const double side = orng.uniform() < 0.5 ? -1.0 : 1.0;
    const double lateral = side * (cfg.obstacle_clearance + extent + orng.uniform(0.0, 4.0));
    const double h = route.heading_at(s);
    o.center = route.point_at(s) + lateral * Vec2(-std::sin(h), std::cos(h));
    if (std::abs(route.project(o.center).lateral) < cfg.obstacle_clearance + extent) continue;
    bool overlaps = false;
    for (const auto& other : scene.obstacles) {
      if ((other.center - o.center).norm() < 2.0) overlaps = true;
    }
    if (overlaps) continue;
    o.instance_id = ++placed;
    scene.obstacles.push_back(o);
  }
  scene.validate();
  return scene;
}

std::optional<double> raycast_obstacle(const Obstacle& o, const Vec3& origin, const Vec3& dir) {
  constexpr double kMinT = 1e-9;
  double best = std::numeric_limits<double>::infinity();
  if (o.shape == Obstacle::Shape::Cylinder) {
    const double dx = origin.x() - o.center.x(), dy = origin.y() - o.center.y();
    const double a = dir.x() * dir.x() + dir.y() * dir.y();
    const double b = 2.0 * (dx * dir.x() + dy * dir.y());
    const double c = dx * dx + dy * dy - o.radius * o.radius;
    if (a > 1e-18) {
      const double disc = b * b - 4.0 * a * c;
      if (disc >= 0.0) {
        const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
        for (double t : {q / a, q != 0.0 ? c / q : q / a}) {
          const double z = origin.z() + t * dir.z();
          if (t > kMinT && z >= 0.0 && z <= o.height) best = std::min(best, t);
        }
      }
    }
    if (std::abs(dir.z()) > 1e-18) {
      const double t = (o.height - origin.z()) / dir.z();
      const double px = dx + t * dir.x(), py = dy + t * dir.y();
      if (t > kMinT && px * px + py * py <= o.radius * o.radius) best = std::min(best, t);
    }
  } else {
    const double c = std::cos(o.yaw), s = std::sin(o.yaw);
    const double rx = origin.x() - o.center.x(), ry = origin.y() - o.center.y();
    const double lo[3] = {-o.half_size.x(), -o.half_size.y(), 0.0};
    const double hi[3] = {o.half_size.x(), o.half_size.y(), o.height};
    const double p[3] = {c * rx + s * ry, -s * rx + c * ry, origin.z()};
    const double d[3] = {c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z()};
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
      if (std::abs(d[k]) < 1e-18) {
        if (p[k] < lo[k] || p[k] > hi[k]) return std::nullopt;
        continue;
      }
      double t0 = (lo[k] - p[k]) / d[k], t1 = (hi[k] - p[k]) / d[k];
      if (t0 > t1) std::swap(t0, t1);
      tmin = std::max(tmin, t0);
      tmax = std::min(tmax, t1);
    }
    if (tmax < tmin || tmax <= kMinT) return std::nullopt;
    best = tmin > kMinT ? tmin : tmax;
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

std::optional<RayHit> raycast(const Scene& scene, const Vec3& origin, const Vec3& dir, double t_max) {
  std::optional<RayHit> hit;
  const double denom = scene.ground.normal.dot(dir);
  if (denom < -1e-12) {
    const double t = (scene.ground.offset - scene.ground.normal.dot(origin)) / denom;
    if (t > 0.0 && t <= t_max) hit = RayHit{t, -1};
  }
  for (std::size_t i = 0; i < scene.obstacles.size(); ++i) {
    const auto t = raycast_obstacle(scene.obstacles[i], origin, dir);
    if (t && *t <= t_max && (!hit || *t < hit->t)) hit = RayHit{*t, static_cast<int>(i)};
  }
  return hit;
}

namespace {

struct PixelRect {
  int x0, y0, x1, y1;
};

// Conservative image-space bounds of an obstacle (full image when any corner
// of its bounding box is near or behind the camera).
PixelRect obstacle_rect(const Obstacle& o, const CameraIntrinsics& intr, const Pose3& cam_from_world) {
  const double ext = o.shape == Obstacle::Shape::Cylinder ? o.radius : o.half_size.norm();
  double umin = 1e18, umax = -1e18, vmin = 1e18, vmax = -1e18;
  for (int k = 0; k < 8; ++k) {
    const Vec3 corner(o.center.x() + ((k & 1) ? ext : -ext), o.center.y() + ((k & 2) ? ext : -ext),
                      (k & 4) ? o.height : 0.0);
    const Vec3 pc = cam_from_world.apply(corner);
    if (pc.z() < 0.05) return {0, 0, intr.width - 1, intr.height - 1};
    const double u = intr.fx * pc.x() / pc.z() + intr.cx;
    const double v = intr.fy * pc.y() / pc.z() + intr.cy;
    umin = std::min(umin, u), umax = std::max(umax, u);
    vmin = std::min(vmin, v), vmax = std::max(vmax, v);
  }
  const auto clampi = [](double x, int lo, int hi) {
    return static_cast<int>(std::clamp(x, static_cast<double>(lo), static_cast<double>(hi)));
  };
  return {clampi(std::floor(umin) - 1, -1, intr.width), clampi(std::floor(vmin) - 1, -1, intr.height),
          clampi(std::ceil(umax) + 1, -1, intr.width), clampi(std::ceil(vmax) + 1, -1, intr.height)};
}

}  // namespace

Rendered synth_render(const Scene& scene, const CameraIntrinsics& intr, const Pose3& world_from_camera) {
  intr.validate();
  const Vec3 origin = world_from_camera.translation();
  if (!(scene.ground.signed_distance(origin) > 0.0)) {
    fail(ErrorCode::CameraBelowGround, "camera is not above the ground plane");
  }
  const int w = intr.width, h = intr.height;
  const Mat3& rot = world_from_camera.rotation();
  const Pose3 cam_from_world = world_from_camera.inverse();

  Rendered out{GrayImage(w, h), Label16(w, h), Label16(w, h)};
  std::vector<double> zbuf(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
  std::vector<float> base(zbuf.size(), static_cast<float>(scene.background));

  std::vector<PixelRect> rects;
  for (const auto& o : scene.obstacles) rects.push_back(obstacle_rect(o, intr, cam_from_world));

  const double n_o = scene.ground.normal.dot(origin);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Camera-frame ray with unit z, so every t below is a z-depth.
      const Vec3 dir = rot * Vec3((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double denom = scene.ground.normal.dot(dir);
      const double t_ground =
          denom < -1e-12 ? (scene.ground.offset - n_o) / denom : std::numeric_limits<double>::infinity();
      double t_obs = std::numeric_limits<double>::infinity();
      int hit = -1;
      for (std::size_t k = 0; k < scene.obstacles.size(); ++k) {
        const PixelRect& r = rects[k];
        if (x < r.x0 || x > r.x1 || y < r.y0 || y > r.y1) continue;
        const auto t = raycast_obstacle(scene.obstacles[k], origin, dir);
        if (t && *t < t_obs) {
          t_obs = *t;
          hit = static_cast<int>(k);
        }
      }
      if (hit >= 0 && t_obs < t_ground) {
        const Obstacle& o = scene.obstacles[hit];
        out.semantic[i] = static_cast<std::uint16_t>(o.class_id);
        out.instance[i] = static_cast<std::uint16_t>(o.instance_id);
        zbuf[i] = t_obs;
        base[i] = o.intensity;
      } else {
        out.semantic[i] = std::isfinite(t_ground) ? kClassGround : kClassSky;
      }
    }
  }

  std::vector<float> acc(zbuf.size(), 0.0f);
  const double inv2s2 = 1.0 / (2.0 * scene.splat_sigma * scene.splat_sigma);
  auto splat = [&](const Vec3& world, double amplitude) {
    const Vec3 pc = cam_from_world.apply(world);
    if (pc.z() < 0.1) return;
    const double u = intr.fx * pc.x() / pc.z() + intr.cx;
    const double v = intr.fy * pc.y() / pc.z() + intr.cy;
    const int ui = static_cast<int>(std::lround(u)), vi = static_cast<int>(std::lround(v));
    if (ui < -1 || vi < -1 || ui > w || vi > h) return;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int px = ui + dx, py = vi + dy;
        if (px < 0 || py < 0 || px >= w || py >= h) continue;
        const std::size_t i = static_cast<std::size_t>(py) * w + px;
        if (pc.z() >= zbuf[i]) continue;
        const double ex = px - u, ey = py - v;
        acc[i] += static_cast<float>(amplitude * std::exp(-(ex * ex + ey * ey) * inv2s2));
      }
    }
  };

  const auto& tex = scene.texture;
  const std::uint64_t tex_key = CounterRng::hash(scene.seed, static_cast<std::uint64_t>(Stream::Texture), 0);
  const long i0 = static_cast<long>(std::floor((origin.x() - tex.max_range) / tex.cell));
  const long i1 = static_cast<long>(std::floor((origin.x() + tex.max_range) / tex.cell));
  const long j0 = static_cast<long>(std::floor((origin.y() - tex.max_range) / tex.cell));
  const long j1 = static_cast<long>(std::floor((origin.y() + tex.max_range) / tex.cell));
  for (long j = j0; j <= j1; ++j) {
    for (long i = i0; i <= i1; ++i) {
      CounterRng cell_rng(tex_key, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
      if (cell_rng.uniform() >= tex.density) continue;
      const Vec3 p((i + cell_rng.uniform()) * tex.cell, (j + cell_rng.uniform()) * tex.cell, 0.0);
      const double amp = cell_rng.uniform(tex.min_amplitude, tex.max_amplitude) *
                         (cell_rng.uniform() < 0.5 ? -1.0 : 1.0);
      if ((p.head<2>() - origin.head<2>()).norm() > tex.max_range) continue;
      splat(p, amp);
    }
  }
  for (const auto& f : scene.landmarks) splat(f.position, f.amplitude);

  for (std::size_t i = 0; i < acc.size(); ++i) {
    out.image[i] = static_cast<std::uint8_t>(std::clamp(std::lround(base[i] + acc[i]), 0L, 255L));
  }
  return out;
}

mapping::PointCloud synth_lidar(const Scene& scene, const Pose3& world_from_body, const LidarConfig& cfg) {
  if (cfg.channels < 1 || !(cfg.horizontal_step_deg > 0.0) || !(cfg.max_range > 0.0)) {
    fail(ErrorCode::InvalidArgument, "invalid Lidar configuration");
  }
  const Pose3 world_from_sensor = world_from_body * cfg.sensor_from_body.inverse();
  const Vec3 origin = world_from_sensor.translation();
  const Mat3& rot = world_from_sensor.rotation();
  const int azimuths = static_cast<int>(std::lround(360.0 / cfg.horizontal_step_deg));
  mapping::PointCloud cloud;
  for (int a = 0; a < azimuths; ++a) {
    const double az = deg2rad(a * cfg.horizontal_step_deg);
    for (int c = 0; c < cfg.channels; ++c) {
      const double el = deg2rad(cfg.channels == 1
                                    ? cfg.min_elevation_deg
                                    : cfg.min_elevation_deg + c * (cfg.max_elevation_deg - cfg.min_elevation_deg) /
                                                                  (cfg.channels - 1));
      const Vec3 ds(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const auto hit = raycast(scene, origin, rot * ds, cfg.max_range);
      if (hit) cloud.points.push_back(hit->t * ds);
    }
  }
  return cloud;
}

SimState step_dynamics(const SimState& sim, const control::ControlInput& u, double dt,
                       const DynamicsNoise& noise) {
  if (!(dt > 0.0)) fail(ErrorCode::NonPositiveDt, "dt must be positive");
  if (sim.slip_long < 0.0 || sim.slip_long > 0.3 || sim.slip_lat < 0.0 || sim.slip_lat > 0.3) {
    fail(ErrorCode::InvalidArgument, "slip fractions must lie in [0, 0.3]");
  }
  double v = u.v * (1.0 - sim.slip_long);
  double w = u.omega * (1.0 - sim.slip_lat);
  if (noise.enabled) {
    CounterRng rng(noise.seed, static_cast<std::uint64_t>(Stream::Dynamics), sim.step * 4);
    v += noise.sigma_v * rng.normal();
    w += noise.sigma_omega * rng.normal();
  }
  SimState next = sim;
  next.pose = unicycle_step(sim.pose, v, w, dt);
  next.v = v;
  next.omega = w;
  next.time = sim.time + dt;
  next.step = sim.step + 1;
  return next;
}

namespace {

std::int64_t gps_epoch(double t, double period) {
  return static_cast<std::int64_t>(std::floor(t / period + 1e-9));
}

vo::GpsFix gps_fix_at(const SimState& s, std::int64_t epoch, const SensorNoise& noise) {
  CounterRng rng(noise.seed, static_cast<std::uint64_t>(Stream::Gps), static_cast<std::uint64_t>(epoch) * 4);
  vo::GpsFix fix;
  fix.position = s.pose.position() + noise.sigma_gps * Vec2(rng.normal(), rng.normal());
  fix.horizontal_accuracy = noise.sigma_gps;
  fix.timestamp = s.time;
  return fix;
}

}  // namespace

ImuGps synth_imu_gps(const SimState& prev, const SimState& next, double dt, const SensorNoise& noise) {
  if (!(dt > 0.0)) fail(ErrorCode::NonPositiveDt, "dt must be positive");
  const double dyaw = wrap_angle(next.pose.yaw - prev.pose.yaw);
  const double mid = prev.pose.yaw + 0.5 * dyaw;
  const Vec2 v0 = prev.v * Vec2(std::cos(prev.pose.yaw), std::sin(prev.pose.yaw));
  const Vec2 v1 = next.v * Vec2(std::cos(next.pose.yaw), std::sin(next.pose.yaw));
  const Vec2 a_world = (v1 - v0) / dt;
  const double c = std::cos(mid), s = std::sin(mid);

  CounterRng rng(noise.seed, static_cast<std::uint64_t>(Stream::Imu), next.step * 8);
  ImuGps out;
  out.imu.linear_acceleration = Vec3(c * a_world.x() + s * a_world.y() + noise.sigma_accel * rng.normal(),
                                     -s * a_world.x() + c * a_world.y() + noise.sigma_accel * rng.normal(),
                                     9.81 + noise.sigma_accel * rng.normal());
  out.imu.angular_velocity = Vec3(noise.sigma_gyro * rng.normal(), noise.sigma_gyro * rng.normal(),
                                  dyaw / dt + noise.sigma_gyro * rng.normal());
  out.imu.timestamp = next.time;
  if (noise.gps_enabled) {
    if (!(noise.gps_period > 0.0)) fail(ErrorCode::InvalidArgument, "GPS period must be positive");
    const auto e = gps_epoch(next.time, noise.gps_period);
    if (e > gps_epoch(prev.time, noise.gps_period)) out.gps = gps_fix_at(next, e, noise);
  }
  return out;
}

std::optional<vo::GpsFix> initial_gps_fix(const SimState& state, const SensorNoise& noise) {
  if (!noise.gps_enabled) return std::nullopt;
  return gps_fix_at(state, gps_epoch(state.time, noise.gps_period), noise);
}

CommandScript::CommandScript(std::vector<Entry> entries) : entries_(std::move(entries)) {
  std::stable_sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) { return a.t < b.t; });
}

CommandScript CommandScript::load_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const auto ct = t.column("t_s"), cv = t.column("v_mps"), cw = t.column("omega_radps");
  std::vector<Entry> entries;
  for (const auto& row : t.rows) {
    entries.push_back({parse_double(row[ct]), {parse_double(row[cv]), parse_double(row[cw])}});
  }
  return CommandScript(std::move(entries));
}

control::ControlInput CommandScript::at(double t) const {
  control::ControlInput u;
  for (const auto& e : entries_) {
    if (e.t > t + 1e-9) break;
    u = e.u;
  }
  return u;
}

std::string frame_path(const std::string& dir, int camera, std::int64_t frame) {
  return fmt::format("{}/frames/cam{}/frame_{:06d}.png", dir, camera, frame);
}

std::string label_path(const std::string& dir, int camera, std::int64_t frame, const char* kind) {
  return fmt::format("{}/labels/cam{}/frame_{:06d}_{}.png", dir, camera, frame, kind);
}

std::string sweep_path(const std::string& dir, std::int64_t frame) {
  return fmt::format("{}/lidar/sweep_{:06d}.csv", dir, frame);
}

SimState initial_state(const Scene& scene, const RecordOptions& opts) {
  SimState s;
  const Vec2 p = scene.route.point_at(0.0);
  s.pose = {p.x(), p.y(), scene.route.heading_at(0.0)};
  s.slip_long = opts.slip_long;
  s.slip_lat = opts.slip_lat;
  return s;
}

RecordedDataset record_dataset(const Scene& scene, const CommandSource& commands,
                               const RecordOptions& opts, const std::string& output_dir) {
  if (opts.duration < 0.0 || !(opts.camera_rate > 0.0) || !(opts.imu_rate > 0.0)) {
    fail(ErrorCode::InvalidArgument, "invalid recording options");
  }
  const int per_frame = static_cast<int>(std::lround(opts.imu_rate / opts.camera_rate));
  if (per_frame < 1 || std::abs(per_frame * opts.camera_rate - opts.imu_rate) > 1e-9) {
    fail(ErrorCode::InvalidArgument, "IMU rate must be a multiple of the camera rate");
  }
  std::error_code ec;
  for (std::size_t k = 0; k < opts.rig.count(); ++k) {
    fs::create_directories(fmt::format("{}/frames/cam{}", output_dir, k), ec);
    fs::create_directories(fmt::format("{}/labels/cam{}", output_dir, k), ec);
  }
  fs::create_directories(output_dir + "/lidar", ec);
  if (ec || !fs::is_directory(output_dir)) fail(ErrorCode::IoFailure, "cannot create " + output_dir);

  save_calibration(opts.rig, output_dir + "/calib.json");
  scene.route.save_csv(output_dir + "/route.csv");
  CsvWriter imu_csv(output_dir + "/imu.csv", "timestamp_s,ax,ay,az,gx,gy,gz");
  CsvWriter gps_csv(output_dir + "/gps.csv", "timestamp_s,x_m,y_m,acc_m");
  CsvWriter truth_csv(output_dir + "/truth.csv", "timestamp_s,x,y,yaw_rad,v,omega");

  RecordedDataset rec;
  rec.directory = output_dir;
  rec.seed = scene.seed;
  const double dt = 1.0 / opts.imu_rate;
  const auto steps = static_cast<std::int64_t>(std::llround(opts.duration * opts.imu_rate));
  SimState sim = initial_state(scene, opts);
  auto write_truth = [&](const SimState& s) {
    truth_csv.row("{:.6f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f}", s.time, s.pose.x, s.pose.y, s.pose.yaw, s.v, s.omega);
    ++rec.truth_rows;
  };
  auto write_gps = [&](const vo::GpsFix& g) {
    gps_csv.row("{:.6f},{:.9f},{:.9f},{:.6f}", g.timestamp, g.position.x(), g.position.y(), g.horizontal_accuracy);
    ++rec.gps_fixes;
  };
  write_truth(sim);
  if (steps > 0) {
    if (auto g = initial_gps_fix(sim, opts.sensors)) write_gps(*g);
  }

  control::ControlInput u;
  for (std::int64_t k = 0; k < steps; ++k) {
    if (k % per_frame == 0) {
      const std::int64_t frame = k / per_frame;
      const Pose3 body = Pose3::planar(sim.pose.x, sim.pose.y, sim.pose.yaw);
      for (std::size_t c = 0; c < opts.rig.count(); ++c) {
        const Pose3 world_from_cam = body * opts.rig[c].cam_from_body.inverse();
        const Rendered r = synth_render(scene, opts.rig[c].intrinsics, world_from_cam);
        write_gray_png(r.image, frame_path(output_dir, static_cast<int>(c), frame));
        write_label16_png(r.semantic, label_path(output_dir, static_cast<int>(c), frame, "sem"));
        write_label16_png(r.instance, label_path(output_dir, static_cast<int>(c), frame, "inst"));
        ++rec.total_frames;
      }
      const mapping::PointCloud sweep = synth_lidar(scene, body, opts.lidar);
      {
        CsvWriter lidar_csv(sweep_path(output_dir, frame), "x_m,y_m,z_m");
        for (const auto& p : sweep.points) lidar_csv.row("{:.9f},{:.9f},{:.9f}", p.x(), p.y(), p.z());
      }
      ++rec.lidar_sweeps;
      ++rec.frames_per_camera;
      u = commands(sim, sweep);
    }
    const SimState next = step_dynamics(sim, u, dt, opts.dynamics);
    const ImuGps meas = synth_imu_gps(sim, next, dt, opts.sensors);
    const auto& a = meas.imu.linear_acceleration;
    const auto& g = meas.imu.angular_velocity;
    imu_csv.row("{:.6f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f}", meas.imu.timestamp, a.x(), a.y(), a.z(), g.x(),
                g.y(), g.z());
    ++rec.imu_samples;
    if (meas.gps) write_gps(*meas.gps);
    sim = next;
    write_truth(sim);
  }

  nlohmann::ordered_json m;
  m["format"] = "amtu-dataset";
  m["version"] = 1;
  m["seed"] = scene.seed;
  m["duration_s"] = opts.duration;
  m["camera_rate_hz"] = opts.camera_rate;
  m["imu_rate_hz"] = opts.imu_rate;
  m["cameras"] = opts.rig.count();
  m["route_closed"] = scene.route.closed();
  m["classes"] = {{"ground", kClassGround}, {"pedestrian", kClassPedestrian},
                  {"vegetation", kClassVegetation}, {"sky", kClassSky}};
  m["num_classes"] = kSimClassCount;
  m["traversable_classes"] = {kClassGround};
  const Vec3& lt = opts.lidar.sensor_from_body.translation();
  m["lidar"] = {{"channels", opts.lidar.channels},
                {"sensor_from_body_translation_m", {lt.x(), lt.y(), lt.z()}}};
  m["streams"] = {{"frames", {{"per_camera", rec.frames_per_camera}, {"total", rec.total_frames}}},
                  {"labels", {{"per_camera", rec.frames_per_camera}, {"total", 2 * rec.total_frames}}},
                  {"lidar", rec.lidar_sweeps},
                  {"imu", rec.imu_samples},
                  {"gps", rec.gps_fixes},
                  {"truth", rec.truth_rows}};
  std::ofstream mf(output_dir + "/manifest.json");
  if (!mf) fail(ErrorCode::IoFailure, "cannot write manifest");
  mf << m.dump(2) << "\n";
  return rec;
}

}  // namespace amtu::sim
