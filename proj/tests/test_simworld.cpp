#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "amtu/features.hpp"
#include "amtu/simworld.hpp"

using namespace amtu;
using namespace amtu::sim;

namespace {

std::filesystem::path tmp_root() {
  const char* tmp = std::getenv("AMTU_TEST_TMP");
  return tmp ? tmp : "/tmp/amtu_test_simworld";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Pose3 camera_pose(const Pose3& body, int camera = 0) {
  return body * CameraRig::default_rig()[camera].cam_from_body.inverse();
}

Scene flat_scene() {
  Scene s;
  s.texture.density = 0.0;
  return s;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("CounterRng is a pure function of seed, stream and counter") {
  CounterRng a(5, 2), b(5, 2), c(5, 3);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  CounterRng d(5, 2, 50);
  CounterRng e(5, 2);
  for (int i = 0; i < 50; ++i) e.next_u64();
  CHECK(d.next_u64() == e.next_u64());

  double sum = 0, sq = 0;
  CounterRng n(1, 1);
  for (int i = 0; i < 20000; ++i) {
    const double x = n.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / 20000) < 0.03);
  CHECK(std::abs(sq / 20000 - 1.0) < 0.05);
}

TEST_CASE("make_scene is seed-determined and validates") {
  SceneConfig cfg;
  cfg.obstacle_count = 6;
  const Scene a = make_scene(cfg), b = make_scene(cfg);
  REQUIRE(a.landmarks.size() == b.landmarks.size());
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) CHECK(a.landmarks[i].position == b.landmarks[i].position);
  REQUIRE(a.obstacles.size() == 6);
  for (std::size_t i = 0; i < a.obstacles.size(); ++i) CHECK(a.obstacles[i].center == b.obstacles[i].center);
  cfg.seed = 2;
  CHECK(make_scene(cfg).landmarks[0].position != a.landmarks[0].position);

  Scene dup = a;
  dup.obstacles[1].instance_id = dup.obstacles[0].instance_id;
  CHECK_THROWS_AS(dup.validate(), Error);
}

TEST_CASE("synth_render empty scene") {
  const Scene s = flat_scene();
  const Rendered r = synth_render(s, CameraIntrinsics{}, camera_pose(Pose3::identity()));
  // Default rig: 0.5 m high, pitched 15 degrees down, no roll.
  const double horizon = 120.0 - 160.0 * std::tan(deg2rad(15.0));
  for (int y = 0; y < r.image.height(); ++y) {
    for (int x = 0; x < r.image.width(); ++x) {
      CHECK(r.image.at(x, y) == s.background);
      CHECK(r.instance.at(x, y) == 0);
      CHECK(r.semantic.at(x, y) == (y > horizon ? kClassGround : kClassSky));
    }
  }
}

TEST_CASE("synth_render landmark on the optical axis") {
  Scene s = flat_scene();
  const Pose3 cam = camera_pose(Pose3::planar(1, 2, 0.4));
  s.landmarks.push_back({cam.apply(Vec3(0, 0, 5)), 80.0});
  const Rendered r = synth_render(s, CameraIntrinsics{}, cam);
  int bx = -1, by = -1, best = -1;
  for (int y = 0; y < r.image.height(); ++y) {
    for (int x = 0; x < r.image.width(); ++x) {
      if (r.image.at(x, y) > best) {
        best = r.image.at(x, y);
        bx = x;
        by = y;
      }
    }
  }
  CHECK(bx == 160);
  CHECK(by == 120);
  CHECK(best == s.background + 80);
}

TEST_CASE("synth_render rejects cameras below ground") {
  const Pose3 below(Mat3::Identity(), Vec3(0, 0, -0.1));
  CHECK(code_of([&] { synth_render(flat_scene(), CameraIntrinsics{}, below); }) == ErrorCode::CameraBelowGround);
}

TEST_CASE("semantic and instance maps are consistent") {
  Scene s;
  s.obstacles.push_back({Obstacle::Shape::Cylinder, Vec2(3, 0.3), 0.4, {}, 0, 1.8, kClassPedestrian, 7, 40});
  s.obstacles.push_back({Obstacle::Shape::Box, Vec2(5, -1), 0.0, Vec2(0.5, 0.8), 0.3, 1.2, kClassVegetation, 9, 60});
  const Rendered r = synth_render(s, CameraIntrinsics{}, camera_pose(Pose3::identity()));
  int seen7 = 0, seen9 = 0;
  for (std::size_t i = 0; i < r.semantic.size(); ++i) {
    CHECK(r.semantic[i] >= 1);
    CHECK(r.semantic[i] <= kSimClassCount);
    if (r.instance[i] == 7) {
      ++seen7;
      CHECK(r.semantic[i] == kClassPedestrian);
    } else if (r.instance[i] == 9) {
      ++seen9;
      CHECK(r.semantic[i] == kClassVegetation);
    } else {
      CHECK(r.instance[i] == 0);
      CHECK((r.semantic[i] == kClassGround || r.semantic[i] == kClassSky));
    }
  }
  CHECK(seen7 > 100);
  CHECK(seen9 > 100);
}

TEST_CASE("tracked flow matches the analytic ground flow") {
  Scene s;
  s.seed = 4;
  const CameraIntrinsics intr;
  const Pose3 cam0 = camera_pose(Pose3::identity());
  const Pose3 cam1 = camera_pose(Pose3::planar(0.05, 0, 0));
  const Rendered r0 = synth_render(s, intr, cam0);
  const Rendered r1 = synth_render(s, intr, cam1);

  std::vector<Vec2> pts;
  for (const auto& k : features::fast_detect(r0.image)) {
    // Below the horizon, and far enough from the border that the LK window stays inside.
    const Vec2& q = k.position;
    if (q.y() > 100 && q.y() < 200 && q.x() > 20 && q.x() < 300) pts.push_back(q);
  }
  REQUIRE(pts.size() >= 30);
  const auto p0 = features::build_pyramid(r0.image, 3);
  const auto p1 = features::build_pyramid(r1.image, 3);
  const auto tracked = features::lk_track(p0, p1, pts);

  Vec2 measured = Vec2::Zero(), analytic = Vec2::Zero();
  int n = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (tracked[i].status != features::TrackStatus::TrackedOk) continue;
    const Vec3 dir = cam0.rotation() * unproject_ray(intr, pts[i]);
    const Vec3 g = ray_ground_intersection(cam0.translation(), dir, s.ground);
    measured += tracked[i].position - pts[i];
    analytic += project_point(intr, cam1.inverse(), g) - pts[i];
    ++n;
  }
  REQUIRE(n >= 30);
  measured /= n;
  analytic /= n;
  CHECK(analytic.norm() > 0.5);
  CHECK((measured - analytic).norm() < 0.2);
}

TEST_CASE("synth_lidar flat ground ranges") {
  const Scene s = flat_scene();
  const LidarConfig cfg;
  const auto cloud = synth_lidar(s, Pose3::planar(3, -1, 0.7), cfg);
  const double h = 0.8;
  std::vector<double> ground_els;
  for (int c = 0; c < cfg.channels; ++c) {
    const double el = deg2rad(cfg.min_elevation_deg + c * (cfg.max_elevation_deg - cfg.min_elevation_deg) / (cfg.channels - 1));
    if (el < 0 && h / std::sin(-el) <= cfg.max_range) ground_els.push_back(el);
  }
  const std::size_t k = ground_els.size();
  REQUIRE(k > 0);
  REQUIRE(cloud.points.size() == k * 720);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    CHECK(std::abs(p.z() + h) < 1e-9);
    const double expected = h / std::sin(-ground_els[i % k]);
    CHECK(std::abs(p.norm() - expected) < 1e-9 * expected);
  }

  LidarConfig up = cfg;
  up.min_elevation_deg = 1.0;
  up.max_elevation_deg = 7.0;
  CHECK(synth_lidar(s, Pose3::identity(), up).points.empty());
}

TEST_CASE("synth_lidar box hits lie on surfaces") {
  Scene s = flat_scene();
  s.obstacles.push_back({Obstacle::Shape::Box, Vec2(2.25, 0), 0.0, Vec2(0.25, 1.0), 0.0, 1.8, kClassVegetation, 1, 45});
  const LidarConfig cfg;
  const auto cloud = synth_lidar(s, Pose3::identity(), cfg);
  int ahead = 0;
  for (const Vec3& ps : cloud.points) {
    const Vec3 p = ps + Vec3(0, 0, 0.8);
    const bool ground = std::abs(p.z()) < 1e-9;
    const bool front = std::abs(p.x() - 2.0) < 1e-9 && std::abs(p.y()) <= 1.0 + 1e-9;
    const bool side = std::abs(std::abs(p.y()) - 1.0) < 1e-9 && p.x() >= 2.0 - 1e-9 && p.x() <= 2.5 + 1e-9;
    CHECK((ground || front || side));
    if (!ground) CHECK(p.z() <= 1.8 + 1e-9);
    if (std::abs(std::atan2(ps.y(), ps.x())) < 1e-12) {
      ++ahead;
      CHECK(std::abs(ps.x() - 2.0) < 1e-9);
    }
  }
  CHECK(ahead == cfg.channels);
}

TEST_CASE("step_dynamics") {
  const DynamicsNoise off{1, false};
  SimState s;
  s.pose = {1, 2, 0.3};
  const SimState rest = step_dynamics(s, {}, 0.1, off);
  CHECK(rest.pose == s.pose);
  CHECK(rest.time == doctest::Approx(0.1));

  SimState slip;
  slip.slip_long = 0.1;
  for (int i = 0; i < 1000; ++i) slip = step_dynamics(slip, {1.0, 0.0}, 0.01, off);
  CHECK(slip.pose.x == doctest::Approx(9.0).epsilon(1e-12));

  SimState sim;
  Pose2 model;
  for (int i = 0; i < 10000; ++i) {
    const control::ControlInput u{1.0 + 0.5 * std::sin(0.01 * i), 0.8 * std::cos(0.003 * i)};
    sim = step_dynamics(sim, u, 0.01, off);
    model = control::predict_model(model, u, 0.01);
  }
  CHECK(std::abs(sim.pose.x - model.x) < 1e-12);
  CHECK(std::abs(sim.pose.y - model.y) < 1e-12);
  CHECK(std::abs(wrap_angle(sim.pose.yaw - model.yaw)) < 1e-12);

  const DynamicsNoise on{7, true};
  SimState a, b;
  for (int i = 0; i < 100; ++i) {
    a = step_dynamics(a, {1.0, 0.2}, 0.01, on);
    b = step_dynamics(b, {1.0, 0.2}, 0.01, on);
  }
  CHECK(a.pose == b.pose);
  CHECK(a.pose.x != doctest::Approx(sim.pose.x));

  SimState bad;
  bad.slip_lat = 0.31;
  CHECK_THROWS_AS(step_dynamics(bad, {}, 0.01, off), Error);
  CHECK_THROWS_AS(step_dynamics(s, {}, 0.0, off), Error);
}

TEST_CASE("synth_imu_gps readouts and GPS epochs") {
  SensorNoise quiet;
  quiet.sigma_accel = quiet.sigma_gyro = quiet.sigma_gps = 0.0;
  const DynamicsNoise off{1, false};

  SimState s;
  s.pose.yaw = 0.3;
  s.v = 1.0;
  SimState n = step_dynamics(s, {1.0, 0.0}, 0.01, off);
  ImuGps m = synth_imu_gps(s, n, 0.01, quiet);
  CHECK(std::abs(m.imu.linear_acceleration.x()) < 1e-12);
  CHECK(std::abs(m.imu.angular_velocity.z()) < 1e-12);
  CHECK(m.imu.linear_acceleration.z() == doctest::Approx(9.81));

  s.omega = 0.5;
  n = step_dynamics(s, {1.0, 0.5}, 0.01, off);
  m = synth_imu_gps(s, n, 0.01, quiet);
  CHECK(m.imu.angular_velocity.z() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.imu.linear_acceleration.y() == doctest::Approx(0.5).epsilon(1e-4));

  for (const double period : {1.0, 0.3, 2.5}) {
    SensorNoise noise;
    noise.gps_period = period;
    SimState t;
    int fixes = initial_gps_fix(t, noise) ? 1 : 0;
    for (int i = 0; i < 10000; ++i) {
      const SimState next = step_dynamics(t, {1.0, 0.1}, 0.01, off);
      if (synth_imu_gps(t, next, 0.01, noise).gps) ++fixes;
      t = next;
    }
    CHECK(fixes == static_cast<int>(std::floor(100.0 / period + 1e-9)) + 1);
  }

  SensorNoise no_gps;
  no_gps.gps_enabled = false;
  CHECK_FALSE(initial_gps_fix(SimState{}, no_gps));
  CHECK_THROWS_AS(synth_imu_gps(s, n, 0.0, quiet), Error);
}

TEST_CASE("CommandScript is piecewise constant") {
  const CommandScript script({{2.0, {0.5, 0.1}}, {0.0, {1.0, 0.0}}, {5.0, {0.0, 0.0}}});
  CHECK(script.at(-1.0) == control::ControlInput{});
  CHECK(script.at(0.0) == control::ControlInput{1.0, 0.0});
  CHECK(script.at(1.99) == control::ControlInput{1.0, 0.0});
  CHECK(script.at(2.0) == control::ControlInput{0.5, 0.1});
  CHECK(script.at(100.0) == control::ControlInput{});

  const auto path = tmp_root() / "script.csv";
  std::filesystem::create_directories(tmp_root());
  std::ofstream(path) << "t_s,v_mps,omega_radps\n0,1.0,0.0\n2,0.5,0.1\n";
  const CommandScript loaded = CommandScript::load_csv(path.string());
  CHECK(loaded.at(2.5) == control::ControlInput{0.5, 0.1});
}

TEST_CASE("record_dataset counts, layout and determinism") {
  SceneConfig sc;
  sc.length = 20.0;
  sc.obstacle_count = 3;
  sc.landmark_count = 100;
  const Scene scene = make_scene(sc);
  const CommandSource cmd = [](const SimState&, const mapping::PointCloud&) {
    return control::ControlInput{0.8, 0.1};
  };
  RecordOptions opts;
  opts.duration = 1.0;

  const auto a = tmp_root() / "rec_a";
  const auto b = tmp_root() / "rec_b";
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
  const RecordedDataset ra = record_dataset(scene, cmd, opts, a.string());
  record_dataset(scene, cmd, opts, b.string());

  CHECK(ra.frames_per_camera == 10);
  CHECK(ra.total_frames == 40);
  CHECK(ra.lidar_sweeps == 10);
  CHECK(ra.imu_samples == 100);
  CHECK(ra.truth_rows == 101);
  CHECK(ra.gps_fixes == 2);

  for (const char* f : {"calib.json", "route.csv", "imu.csv", "gps.csv", "truth.csv", "manifest.json"}) {
    CHECK(std::filesystem::exists(a / f));
  }
  CHECK(std::filesystem::exists(frame_path(a.string(), 3, 9)));
  CHECK(std::filesystem::exists(label_path(a.string(), 2, 0, "sem")));
  CHECK(std::filesystem::exists(sweep_path(a.string(), 9)));
  CHECK(frame_path("d", 1, 7) == "d/frames/cam1/frame_000007.png");
  CHECK(label_path("d", 0, 12, "inst") == "d/labels/cam0/frame_000012_inst.png");
  CHECK(sweep_path("d", 3) == "d/lidar/sweep_000003.csv");

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["seed"] == scene.seed);
  CHECK(manifest["streams"]["frames"]["total"] == 40);
  CHECK(manifest["streams"]["imu"] == 100);

  CHECK(slurp(a / "truth.csv") == slurp(b / "truth.csv"));
  CHECK(slurp(a / "imu.csv") == slurp(b / "imu.csv"));
  for (int frame : {0, 5, 9}) {
    for (int c = 0; c < 4; ++c) {
      CHECK(slurp(label_path(a.string(), c, frame, "sem")) == slurp(label_path(b.string(), c, frame, "sem")));
      CHECK(slurp(label_path(a.string(), c, frame, "inst")) == slurp(label_path(b.string(), c, frame, "inst")));
      CHECK(slurp(frame_path(a.string(), c, frame)) == slurp(frame_path(b.string(), c, frame)));
    }
  }

  const auto e = tmp_root() / "rec_empty";
  std::filesystem::remove_all(e);
  opts.duration = 0.0;
  const RecordedDataset re = record_dataset(scene, cmd, opts, e.string());
  CHECK(re.total_frames == 0);
  CHECK(re.gps_fixes == 0);
  const auto empty_manifest = nlohmann::json::parse(slurp(e / "manifest.json"));
  CHECK(empty_manifest["streams"]["frames"]["total"] == 0);
}
