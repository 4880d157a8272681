// Acceptance runner: one [PASS]/[FAIL] line per criterion; exit status 1 on any failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "oracles.hpp"
#include "scenarios.hpp"

#include "amtu/control.hpp"
#include "amtu/features.hpp"
#include "amtu/percepts.hpp"
#include "amtu/pipeline.hpp"
#include "amtu/planning.hpp"
#include "amtu/visual_odometry.hpp"

using namespace amtu;

namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;  // 0: no limit
  std::function<Outcome()> run;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

pipeline::PipelineConfig sim_config(const std::string& route, std::uint64_t seed) {
  pipeline::PipelineConfig cfg;
  cfg.sim.scene.route = route;
  cfg.sim.scene.seed = seed;
  cfg.sim.dynamics.seed = seed;
  cfg.sim.sensors.seed = seed;
  cfg.run.dump_every = 0;
  cfg.run.grid_every = 0;
  cfg.run.annotate_every = 0;
  return cfg;
}

pipeline::RunSummary run(const pipeline::PipelineConfig& cfg, const fs::path& out) {
  fs::remove_all(out);
  pipeline::RunOptions opts;
  opts.output_dir = out.string();
  return pipeline::run_sim(cfg, opts);
}

double value_or_nan(const std::optional<double>& v) { return v.value_or(std::nan("")); }

Outcome metrics_oracles() {
  std::mt19937 rng(1001);
  double worst = 0.0;
  int sets = 0;
  for (int trial = 0; trial < 200; ++trial, ++sets) {
    const int w = 1 + trial % 32, h = 1 + (trial * 7) % 32, n = 2 + trial % 6;
    const Label16 p = scenario::random_labels(rng, w, h, n), g = scenario::random_labels(rng, w, h, n);
    const percepts::SemanticMap sp(p, n), sg(g, n);
    worst = std::max(worst, std::abs(percepts::overall_accuracy(sp, sg) - oracle::overall_accuracy(p, g)));
    worst = std::max(worst, std::abs(percepts::mean_iou(sp, sg, n).mean_iou - oracle::mean_iou(p, g, n)));
  }
  const auto th = percepts::coco_thresholds();
  bool defined_match = true;
  for (int trial = 0; trial < 200; ++trial, ++sets) {
    const auto frames = scenario::random_box_frames(rng, 1 + trial % 3);
    const auto got = percepts::average_precision(frames, th);
    const auto want = oracle::average_precision(frames, th);
    if (got.has_value() != want.has_value()) defined_match = false;
    if (got && want) worst = std::max(worst, std::abs(*got - *want));
  }
  return {defined_match && worst <= 1e-12, fmt::format("{} sets, max |diff| {:.3g} (tol 1e-12)", sets, worst)};
}

Outcome fast_oracle() {
  std::mt19937 rng(1002);
  int identical = 0;
  std::size_t total = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const GrayImage img = oracle::random_image(rng, 64, 64);
    const features::FastParams p;
    const auto want = oracle::fast_candidates(img, p.threshold, p.arc_length);
    identical += oracle::as_corners(features::fast_candidates(img, p)) == want;
    total += want.size();
  }
  return {identical == 50, fmt::format("{}/50 images bit-identical, {} candidates", identical, total)};
}

Outcome lk_shifts() {
  std::mt19937 rng(1003);
  std::uniform_int_distribution<int> s(-8, 8);
  int good = 0, total = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const GrayImage big = oracle::textured_image(rng, 260, 220, 900);
    const int sx = s(rng), sy = s(rng);
    const GrayImage prev = scenario::shifted_crop(big, 20, 20, 220, 180);
    const GrayImage next = scenario::shifted_crop(big, 20 - sx, 20 - sy, 220, 180);
    const auto pp = features::build_pyramid(prev, 3), pn = features::build_pyramid(next, 3);
    std::vector<Vec2> pts;
    for (int y = 40; y < 140; y += 9) {
      for (int x = 40; x < 180; x += 9) pts.emplace_back(x, y);
    }
    const auto res = features::lk_track(pp, pn, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ++total;
      if (res[i].status == features::TrackStatus::TrackedOk && (res[i].position - pts[i] - Vec2(sx, sy)).norm() < 0.1) {
        ++good;
      }
    }
  }
  const double frac = static_cast<double>(good) / total;
  return {frac >= 0.95, fmt::format("{}/{} points within 0.1 px ({:.2f}%, need 95%)", good, total, 100 * frac)};
}

Outcome pnp() {
  const CameraRig rig = CameraRig::default_rig();
  std::mt19937 rng(1004);
  int exact = 0;
  double worst_t = 0.0, worst_r = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const scenario::VoScene s = scenario::make_scene(rng, rig, 6);
    const vo::PnpResult r = vo::pnp_estimate(s.corr, rig, scenario::perturb(s.truth, rng, 0.3, 5.0));
    const double et = (r.pose.translation() - s.truth.translation()).norm();
    const double er = scenario::rotation_error(r.pose, s.truth);
    worst_t = std::max(worst_t, et);
    worst_r = std::max(worst_r, er);
    exact += et < 1e-6 && er < 1e-6;
  }
  std::uniform_real_distribution<double> ang(0, 2 * kPi);
  int robust = 0;
  for (int trial = 0; trial < 100; ++trial) {
    scenario::VoScene s = scenario::make_scene(rng, rig, 5);
    for (std::size_t i = 0; i < s.corr.size(); i += 5) {
      const double a = ang(rng);
      s.corr[i].pixel += 50.0 * Vec2(std::cos(a), std::sin(a));
    }
    const vo::PnpResult r = vo::pnp_estimate(s.corr, rig, scenario::perturb(s.truth, rng, 0.3, 5.0));
    robust += (r.pose.translation() - s.truth.translation()).norm() < 1e-3 && r.inlier_count == 16;
  }
  return {exact == 100 && robust >= 95,
          fmt::format("exact {}/100 (worst {:.2g} m, {:.2g} rad); 20% outliers {}/100 (need 95)", exact, worst_t,
                      worst_r, robust)};
}

Outcome jacobians() {
  const CameraRig rig = CameraRig::default_rig();
  std::mt19937 rng(1005);
  double worst_pnp = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const scenario::VoScene s = scenario::make_scene(rng, rig, 1);
    const Pose3 pose = scenario::perturb(s.truth, rng, 0.2, 3.0);
    const vo::Correspondence& c = s.corr[trial % s.corr.size()];
    const auto f = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return vo::reprojection_residual(retract(pose, vo::Vec6(d)), c, rig);
    };
    const Eigen::MatrixXd fd = oracle::central_difference(f, Eigen::VectorXd::Zero(6), 1e-6);
    worst_pnp = std::max(worst_pnp, oracle::relative_error(vo::reprojection_jacobian(pose, c, rig), fd));
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_nmpc = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Pose2 s{u(rng) * 10, u(rng) * 10, u(rng) * 3};
    const control::ControlInput in{1.5 * u(rng), u(rng)};
    const double dt = 0.05;
    const auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      const Pose2 p = control::predict_model({x(0), x(1), x(2)}, {x(3), x(4)}, dt);
      return Eigen::Vector3d(p.x, p.y, x(2) + x(4) * dt);
    };
    Eigen::VectorXd x0(5);
    x0 << s.x, s.y, s.yaw, in.v, in.omega;
    const control::ModelJacobians j = control::model_jacobians(s, in, dt);
    Eigen::MatrixXd analytic(3, 5);
    analytic << j.wrt_state, j.wrt_input;
    worst_nmpc = std::max(worst_nmpc, oracle::relative_error(analytic, oracle::central_difference(f, x0, 1e-6)));
  }
  return {worst_pnp < 1e-5 && worst_nmpc < 1e-5,
          fmt::format("reprojection worst {:.2g}, dynamics worst {:.2g} (tol 1e-5, 100 each)", worst_pnp, worst_nmpc)};
}

Outcome loss_properties() {
  percepts::Tensor3 s(1, 1, 2), o(1, 1, 2);
  const percepts::SemanticMap one(Label16(1, 1, 1), 2);
  const double ln2_err = std::abs(percepts::multitask_loss(s, one, o, Label16(1, 1, 1), {1.0, 0.0}) - std::log(2.0));

  std::mt19937 rng(1006);
  double worst_lin = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + trial % 5, w = 2 + trial % 7, n = 2 + trial % 6, k = 2 + trial % 4;
    const auto sem = scenario::random_logits(rng, h, w, n), inst = scenario::random_logits(rng, h, w, k);
    const Label16 sl = scenario::random_labels(rng, w, h, n), il = scenario::random_labels(rng, w, h, k);
    const percepts::SemanticMap sm(sl, n);
    const percepts::LossWeights wt{0.3 + trial * 0.01, 1.1};
    const double base = percepts::multitask_loss(sem, sm, inst, il, wt);
    worst_lin = std::max(worst_lin,
                         std::abs(percepts::multitask_loss(sem, sm, inst, il, {2 * wt.alpha, 2 * wt.beta}) - 2 * base));
    auto sem_s = sem, inst_s = inst;
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double a = shift(rng), b = shift(rng);
        for (int c = 0; c < n; ++c) sem_s.at(y, x, c) += a;
        for (int c = 0; c < k; ++c) inst_s.at(y, x, c) += b;
      }
    }
    worst_shift = std::max(worst_shift, std::abs(percepts::multitask_loss(sem_s, sm, inst_s, il, wt) - base));
  }
  return {ln2_err <= 1e-12 && worst_lin <= 1e-12 && worst_shift <= 1e-9,
          fmt::format("ln2 err {:.2g} (1e-12), linearity {:.2g} (1e-12), shift {:.2g} (1e-9)", ln2_err, worst_lin,
                      worst_shift)};
}

Outcome planner_safety() {
  const planning::DwaConfig cfg;
  std::mt19937 rng(1007);
  int admissible = 0, violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const scenario::Scenario s = scenario::random_scenario(rng);
    const auto best = planning::plan(s.state, s.grid, s.route, cfg);
    if (!best.admissible) continue;
    ++admissible;
    const auto occ = oracle::occupied_centers(s.grid);
    for (const auto& st : best.states) {
      if (oracle::clearance(s.grid, occ, st.position(), cfg.max_clearance) < cfg.robot_radius) {
        ++violations;
        break;
      }
    }
  }
  int braking = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const scenario::Scenario s = scenario::blocked_scenario(rng);
    const auto best = planning::plan(s.state, s.grid, s.route, cfg);
    braking += !best.admissible && best.command.omega == 0.0 &&
               std::abs(best.command.v - std::max(0.0, s.state.v - cfg.a_v * cfg.dt_plan)) < 1e-12;
  }
  return {violations == 0 && braking == 50,
          fmt::format("1000 scenarios ({} admissible), {} violations; blocked braking {}/50", admissible, violations,
                      braking)};
}

Outcome planner_oracle() {
  const planning::DwaConfig cfg;
  std::mt19937 rng(1008);
  int equal = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const scenario::Scenario s = scenario::random_scenario(rng);
    const auto got = planning::plan(s.state, s.grid, s.route, cfg);
    const auto want = oracle::plan(s.state, s.grid, s.route, cfg);
    bool same = got.admissible == want.admissible;
    if (same && want.admissible) {
      same = got.command.v == want.v && got.command.omega == want.omega && got.score && *got.score == want.score;
    }
    equal += same;
  }
  return {equal == 100, fmt::format("{}/100 scenarios bit-exact", equal)};
}

Outcome tracking(const fs::path& work) {
  auto straight = sim_config("straight", 1);
  straight.sim.scene.length = 50.0;
  straight.sim.scene.speed = 1.0;
  straight.run.use_truth_state = true;
  const auto a = run(straight, work / "c09_straight");

  auto circle = sim_config("circle", 1);
  circle.sim.scene.radius = 5.0;
  circle.run.use_truth_state = true;
  const auto b = run(circle, work / "c09_circle");

  const double rms = value_or_nan(a.cross_track_rms_m), fin = value_or_nan(a.cross_track_final_m);
  const double crms = value_or_nan(b.cross_track_rms_m);
  const bool ok = a.route_completed && b.route_completed && rms < 0.1 && std::abs(fin) < 0.05 && crms < 0.15;
  return {ok, fmt::format("straight RMS {:.4f} m (<0.1), final {:.4f} m (<0.05); circle RMS {:.4f} m (<0.15)", rms,
                          fin, crms)};
}

pipeline::RunSummary loop_no_gps;

Outcome drift(const fs::path& work) {
  auto no_gps = sim_config("loop", 1);
  no_gps.sim.scene.length = 100.0;
  no_gps.sim.sensors.gps_enabled = false;
  loop_no_gps = run(no_gps, work / "c10_loop_nogps");

  auto gps = sim_config("loop", 1);
  gps.sim.scene.length = 100.0;
  const auto g = run(gps, work / "c10_loop_gps");

  const double pct = value_or_nan(loop_no_gps.drift_percent), m = value_or_nan(g.final_drift_m);
  return {loop_no_gps.route_completed && g.route_completed && pct <= 1.0 && m <= 0.3,
          fmt::format("no GPS {:.3f}% of {:.1f} m (<=1%); GPS {:.3f} m (<=0.3 m)", pct, loop_no_gps.path_length_m, m)};
}

Outcome timing() {
  const auto& t = loop_no_gps.total_ms;
  return {loop_no_gps.frames > 0 && t.p50 < 100.0,
          fmt::format("median cycle {:.1f} ms, p90 {:.1f} ms over {} frames (<100 ms)", t.p50, t.p90,
                      loop_no_gps.frames)};
}

Outcome coverage() {
  const double km = pipeline::estimate_coverage(1.5, 6.0);
  return {std::abs(km - 32.4) < 1e-9, fmt::format("estimate_coverage(1.5, 6) = {:.6f} km", km)};
}

Outcome determinism(const fs::path& work) {
  auto cfg = sim_config("straight", 7);
  cfg.sim.scene.length = 20.0;
  cfg.sim.scene.obstacle_count = 3;
  cfg.run.max_duration = 8.0;
  run(cfg, work / "c13_a");
  run(cfg, work / "c13_b");
  bool same = true;
  std::size_t bytes = 0;
  for (const char* f : {"pose.csv", "control.csv"}) {
    const std::string a = slurp(work / "c13_a" / f), b = slurp(work / "c13_b" / f);
    same = same && !a.empty() && a == b;
    bytes += a.size();
  }
  return {same, fmt::format("pose.csv and control.csv {} ({} bytes)", same ? "byte-identical" : "DIFFER", bytes)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "amtu_acceptance";
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--work") work = argv[i + 1];
  }
  fs::create_directories(work);

  const std::vector<Criterion> criteria{
      {1, "metrics oracle suite", 10, metrics_oracles},
      {2, "FAST oracle equivalence", 5, fast_oracle},
      {3, "LK translation recovery", 10, lk_shifts},
      {4, "PnP exactness and robustness", 20, pnp},
      {5, "Jacobian checks", 0, jacobians},
      {6, "loss properties", 0, loss_properties},
      {7, "planner safety property", 60, planner_safety},
      {8, "planner oracle equivalence", 0, planner_oracle},
      {9, "closed-loop tracking", 60, [&] { return tracking(work); }},
      {10, "closed-loop odometry drift", 0, [&] { return drift(work); }},
      {11, "timing budget", 0, timing},
      {12, "coverage arithmetic", 0, coverage},
      {13, "determinism", 0, [&] { return determinism(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string limit;
    if (c.time_limit_s > 0) {
      limit = fmt::format(", limit {:.0f} s", c.time_limit_s);
      if (secs >= c.time_limit_s) o.pass = false;
    }
    failed += !o.pass;
    fmt::print("[{}] C{:<2} {}: {} ({:.2f} s{})\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail, secs, limit);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
