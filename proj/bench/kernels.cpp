// Serial reference vs OpenMP kernel timings on simworld frames.
#include <random>

#include <benchmark/benchmark.h>

#include "scenarios.hpp"

#include "amtu/features.hpp"
#include "amtu/planning.hpp"
#include "amtu/simworld.hpp"

using namespace amtu;

namespace {

struct FramePair {
  GrayImage first;
  GrayImage second;
};

const FramePair& frames() {
  static const FramePair pair = [] {
    sim::SceneConfig cfg;
    cfg.seed = 4;
    const sim::Scene scene = sim::make_scene(cfg);
    const Pose3 mount = CameraRig::default_rig()[0].cam_from_body.inverse();
    const CameraIntrinsics intr;
    return FramePair{sim::synth_render(scene, intr, mount).image,
                     sim::synth_render(scene, intr, Pose3::planar(0.05, 0, 0.01) * mount).image};
  }();
  return pair;
}

void BM_FastDetect(benchmark::State& state) {
  const GrayImage& img = frames().first;
  for (auto _ : state) benchmark::DoNotOptimize(features::fast_detect(img));
}

void BM_FastDetectSerial(benchmark::State& state) {
  const GrayImage& img = frames().first;
  for (auto _ : state) benchmark::DoNotOptimize(features::fast_detect_serial(img));
}

struct LkInput {
  features::ImagePyramid prev, next;
  std::vector<Vec2> points;
};

const LkInput& lk_input() {
  static const LkInput in = [] {
    LkInput r{features::build_pyramid(frames().first, 3), features::build_pyramid(frames().second, 3), {}};
    for (const auto& k : features::fast_detect(frames().first)) r.points.push_back(k.position);
    return r;
  }();
  return in;
}

void BM_LkTrack(benchmark::State& state) {
  const LkInput& in = lk_input();
  for (auto _ : state) benchmark::DoNotOptimize(features::lk_track(in.prev, in.next, in.points));
  state.counters["points"] = static_cast<double>(in.points.size());
}

void BM_LkTrackSerial(benchmark::State& state) {
  const LkInput& in = lk_input();
  for (auto _ : state) benchmark::DoNotOptimize(features::lk_track_serial(in.prev, in.next, in.points));
  state.counters["points"] = static_cast<double>(in.points.size());
}

const scenario::Scenario& plan_input() {
  static const scenario::Scenario s = [] {
    std::mt19937 rng(42);
    return scenario::random_scenario(rng, 200);
  }();
  return s;
}

void BM_Plan(benchmark::State& state) {
  const auto& s = plan_input();
  const planning::DwaConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(planning::plan(s.state, s.grid, s.route, cfg));
}

void BM_PlanSerial(benchmark::State& state) {
  const auto& s = plan_input();
  const planning::DwaConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(planning::plan_serial(s.state, s.grid, s.route, cfg));
}

}  // namespace

BENCHMARK(BM_FastDetect)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_FastDetectSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LkTrack)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LkTrackSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Plan)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_PlanSerial)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
