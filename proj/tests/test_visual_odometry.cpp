#include <algorithm>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "scenarios.hpp"

#include "amtu/visual_odometry.hpp"

using namespace amtu;
using namespace amtu::vo;

using scenario::make_scene;
using scenario::perturb;
using scenario::rotation_error;
using scenario::VoScene;

TEST_CASE("triangulate_landmark exact and degenerate") {
  const CameraIntrinsics intr;
  const Pose3 a = Pose3(rotation_from_ypr(0.1, 0.0, 0.0), Vec3(0, 0, 0));
  const Pose3 b = Pose3(rotation_from_ypr(-0.05, 0.02, 0.0), Vec3(0.5, 0.1, 0));
  const Vec3 p(0.7, -0.3, 6.0);
  const ViewObservation va{project_point(intr, a.inverse(), p), a};
  const ViewObservation vb{project_point(intr, b.inverse(), p), b};
  CHECK((triangulate_landmark(va, vb, intr) - p).norm() < 1e-6);
  CHECK_THROWS_AS(triangulate_landmark(va, va, intr), Error);

  try {
    triangulate_landmark(va, ViewObservation{vb.pixel + Vec2(40, 0), b}, intr);
    FAIL("expected a rejection");
  } catch (const Error& e) {
    CHECK(e.code() != ErrorCode::DivergedSolve);
  }
}

TEST_CASE("triangulation Monte-Carlo bound with 0.5 px noise") {
  // 640x480 at fx 500: 0.5 m baseline, 5 m depth. Depth sigma is about 0.07 m,
  // so 0.15 m holds for the 95th percentile of draws.
  const CameraIntrinsics intr{500, 500, 320, 240, 640, 480};
  std::mt19937 rng(9);
  std::normal_distribution<double> n(0.0, 0.5);
  const Pose3 a = Pose3::identity();
  const Pose3 b(Mat3::Identity(), Vec3(0.5, 0, 0));
  const Vec3 p(0.25, 0.1, 5.0);
  std::vector<double> err;
  for (int i = 0; i < 1000; ++i) {
    const ViewObservation va{project_point(intr, a.inverse(), p) + Vec2(n(rng), n(rng)), a};
    const ViewObservation vb{project_point(intr, b.inverse(), p) + Vec2(n(rng), n(rng)), b};
    err.push_back((triangulate_landmark(va, vb, intr) - p).norm());
  }
  std::sort(err.begin(), err.end());
  CHECK(err[949] <= 0.15);
}

TEST_CASE("refine_landmark converges to the exact point") {
  const CameraIntrinsics intr;
  const Vec3 p(1.0, 0.5, 8.0);
  std::vector<ViewObservation> views;
  for (int i = 0; i < 5; ++i) {
    const Pose3 w(rotation_from_ypr(0.02 * i, 0, 0), Vec3(0.1 * i, 0.02 * i, 0));
    views.push_back({project_point(intr, w.inverse(), p), w});
  }
  const RefinedPoint r = refine_landmark(views, intr, p + Vec3(0.3, -0.2, 0.8));
  CHECK((r.point - p).norm() < 1e-8);
  CHECK(r.max_residual_px < 1e-6);
}

TEST_CASE("reprojection Jacobian matches finite differences") {
  const CameraRig rig = CameraRig::default_rig();
  std::mt19937 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const VoScene s = make_scene(rng, rig, 1);
    const Pose3 pose = perturb(s.truth, rng, 0.2, 3.0);
    const Correspondence& c = s.corr[trial % s.corr.size()];
    const auto f = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return reprojection_residual(retract(pose, Vec6(d)), c, rig);
    };
    const Eigen::MatrixXd fd = oracle::central_difference(f, Eigen::VectorXd::Zero(6), 1e-6);
    CHECK(oracle::relative_error(reprojection_jacobian(pose, c, rig), fd) < 1e-5);
  }
}

TEST_CASE("pnp_estimate exact recovery") {
  const CameraRig rig = CameraRig::default_rig();
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const VoScene s = make_scene(rng, rig, 6);
    const PnpResult at_truth = pnp_estimate(s.corr, rig, s.truth);
    CHECK((at_truth.pose.translation() - s.truth.translation()).norm() < 1e-9);
    CHECK(rotation_error(at_truth.pose, s.truth) < 1e-9);

    const PnpResult r = pnp_estimate(s.corr, rig, perturb(s.truth, rng, 0.3, 5.0));
    CHECK((r.pose.translation() - s.truth.translation()).norm() < 1e-6);
    CHECK(rotation_error(r.pose, s.truth) < 1e-6);
    CHECK(r.inlier_count == static_cast<int>(s.corr.size()));
  }
}

TEST_CASE("pnp_estimate with gross outliers") {
  const CameraRig rig = CameraRig::default_rig();
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> ang(0, 2 * kPi);
  for (int trial = 0; trial < 20; ++trial) {
    VoScene s = make_scene(rng, rig, 5);
    for (std::size_t i = 0; i < s.corr.size(); i += 5) {
      const double a = ang(rng);
      s.corr[i].pixel += 50.0 * Vec2(std::cos(a), std::sin(a));
    }
    const PnpResult r = pnp_estimate(s.corr, rig, perturb(s.truth, rng, 0.3, 5.0));
    CHECK((r.pose.translation() - s.truth.translation()).norm() < 1e-3);
    CHECK(r.inlier_count == 16);
    for (std::size_t i = 0; i < s.corr.size(); ++i) CHECK(r.inliers[i] == (i % 5 != 0));
  }
}

TEST_CASE("pnp_estimate planar mode keeps z, roll and pitch") {
  const CameraRig rig = CameraRig::default_rig();
  std::mt19937 rng(13);
  const VoScene base = make_scene(rng, rig, 6);
  // Same body-frame points and pixels, moved under a planar truth pose.
  VoScene s{Pose3::planar(3, -2, 0.7), {}};
  for (const auto& c : base.corr) {
    const Vec3 body = base.truth.inverse().apply(c.landmark);
    s.corr.push_back({s.truth.apply(body), c.pixel, c.camera});
  }
  PnpOptions opt;
  opt.planar = true;
  const PnpResult r = pnp_estimate(s.corr, rig, Pose3::planar(3.2, -2.1, 0.65), opt);
  CHECK((r.pose.translation() - s.truth.translation()).norm() < 1e-6);
  CHECK(rotation_error(r.pose, s.truth) < 1e-6);
  CHECK(r.pose.translation().z() == 0.0);
}

TEST_CASE("pnp_estimate insufficient correspondences") {
  const CameraRig rig = CameraRig::default_rig();
  std::mt19937 rng(15);
  VoScene s = make_scene(rng, rig, 1);
  s.corr.resize(3);
  CHECK_THROWS_AS(pnp_estimate(s.corr, rig, s.truth), Error);
}

TEST_CASE("imu_predict") {
  const RobotState s0 = RobotState::planar(1, 2, 0.3, 0.0, 0.0, 5.0);
  const RobotState still = imu_predict(s0, {}, 0.1);
  CHECK(still.x() == doctest::Approx(1.0));
  CHECK(still.y() == doctest::Approx(2.0));
  CHECK(still.yaw() == doctest::Approx(0.3));
  CHECK(still.timestamp == doctest::Approx(5.1));

  ImuSample accel;
  accel.linear_acceleration = Vec3(1, 0, 0);
  CHECK(imu_predict(RobotState{}, accel, 0.1).v == doctest::Approx(0.1));

  ImuSample turn;
  turn.angular_velocity = Vec3(0, 0, kPi / 2);
  RobotState s = RobotState::planar(0, 0, 0, 1.0);
  for (int i = 0; i < 100; ++i) s = imu_predict(s, turn, 0.01);
  const double r = 2.0 / kPi;
  const Vec2 expected(r, r);
  CHECK((s.position() - expected).norm() <= 0.02 * expected.norm());

  CHECK_THROWS_AS(imu_predict(s0, {}, 0.0), Error);
  CHECK_THROWS_AS(imu_predict(s0, {}, 0.2), Error);
}

TEST_CASE("fuse_state gains") {
  const RobotState pred = RobotState::planar(0, 0, 0, 0.5, 0.0, 1.0);
  const RobotState none = fuse_state(pred, std::nullopt, std::nullopt);
  CHECK(none.x() == 0.0);
  CHECK(none.y() == 0.0);

  const RobotState agree = fuse_state(pred, PoseMeasurement{pred.pose, 30, 1.0}, std::nullopt);
  CHECK(std::abs(agree.x()) < 1e-15);
  CHECK(std::abs(agree.yaw()) < 1e-15);

  const RobotState pnp = fuse_state(pred, PoseMeasurement{Pose3::planar(1, 0, 0), 30, 1.0}, std::nullopt);
  CHECK(pnp.x() == doctest::Approx(0.8).epsilon(1e-12));

  const RobotState half = fuse_state(pred, PoseMeasurement{Pose3::planar(1, 0, 0.2), 15, 1.0}, std::nullopt);
  CHECK(half.x() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(half.yaw() == doctest::Approx(0.08).epsilon(1e-12));

  const RobotState gps = fuse_state(pred, std::nullopt, GpsFix{Vec2(2, 0), 0.5, 1.0});
  CHECK(gps.x() == doctest::Approx(1.0).epsilon(1e-12));
  const RobotState gps_noisy = fuse_state(pred, std::nullopt, GpsFix{Vec2(2, 0), 1.5, 1.0});
  CHECK(gps_noisy.x() == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(fuse_state(pred, PoseMeasurement{pred.pose, 30, 1.2}, std::nullopt), Error);
  CHECK_THROWS_AS(fuse_state(pred, std::nullopt, GpsFix{Vec2(0, 0), 0.5, 0.9}), Error);

  // Idempotent when every measurement agrees with the prediction.
  const RobotState all = fuse_state(pred, PoseMeasurement{pred.pose, 40, 1.0}, GpsFix{pred.position(), 0.5, 1.0});
  CHECK(std::abs(all.x()) < 1e-15);
  CHECK(std::abs(all.y()) < 1e-15);
}
