#include "amtu/planning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "amtu/csv.hpp"

namespace amtu::planning {

ReferenceTrajectory::ReferenceTrajectory(std::vector<Vec2> waypoints, bool closed,
                                         std::vector<std::optional<double>> speeds)
    : points_(std::move(waypoints)), speeds_(std::move(speeds)), closed_(closed) {
  if (points_.size() < 2) fail(ErrorCode::InvalidArgument, "route needs at least 2 waypoints");
  if (speeds_.empty()) speeds_.resize(points_.size());
  if (speeds_.size() != points_.size()) {
    fail(ErrorCode::InvalidArgument, "speed count differs from waypoint count");
  }
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    if (points_[i] == points_[i + 1]) fail(ErrorCode::InvalidArgument, "repeated consecutive waypoint");
  }
  if (closed_ && points_.front() == points_.back()) points_.pop_back(), speeds_.pop_back();
  if (points_.size() < 2) fail(ErrorCode::InvalidArgument, "route needs at least 2 distinct waypoints");
  cumulative_.assign(1, 0.0);
  for (std::size_t i = 0; i < segment_count(); ++i) {
    cumulative_.push_back(cumulative_.back() + (segment_end(i) - points_[i]).norm());
  }
}

ReferenceTrajectory ReferenceTrajectory::straight(const Vec2& start, double heading, double length,
                                                  double spacing, std::optional<double> speed) {
  const int n = std::max(1, static_cast<int>(std::ceil(length / spacing - 1e-9)));
  const Vec2 dir(std::cos(heading), std::sin(heading));
  std::vector<Vec2> pts;
  for (int i = 0; i <= n; ++i) pts.push_back(start + dir * (length * i / n));
  return ReferenceTrajectory(std::move(pts), false,
                             std::vector<std::optional<double>>(n + 1, speed));
}

ReferenceTrajectory ReferenceTrajectory::circle(const Vec2& center, double radius, int segments,
                                                std::optional<double> speed) {
  std::vector<Vec2> pts;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * kPi * i / segments - kPi / 2.0;
    pts.push_back(center + radius * Vec2(std::cos(a), std::sin(a)));
  }
  return ReferenceTrajectory(std::move(pts), true,
                             std::vector<std::optional<double>>(segments, speed));
}

ReferenceTrajectory::Projection ReferenceTrajectory::project(const Vec2& p) const {
  Projection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < segment_count(); ++i) {
    const Vec2& a = points_[i];
    const Vec2 d = segment_end(i) - a;
    const double len2 = d.squaredNorm();
    const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
    const Vec2 q = a + t * d;
    const double d2 = (p - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.s = cumulative_[i] + t * std::sqrt(len2);
      best.point = q;
      const double cross = d.x() * (p - a).y() - d.y() * (p - a).x();
      best.lateral = (cross < 0.0 ? -1.0 : 1.0) * std::sqrt(d2);
    }
  }
  return best;
}

std::size_t ReferenceTrajectory::segment_at(double s) const {
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end() - 1, s);
  const auto idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - cumulative_.begin() - 1));
  return std::min(idx, segment_count() - 1);
}

Vec2 ReferenceTrajectory::point_at(double s) const {
  if (closed_) {
    s = std::fmod(s, length());
    if (s < 0.0) s += length();
  }
  const std::size_t i = segment_at(s);
  const Vec2& a = points_[i];
  const Vec2 d = segment_end(i) - a;
  return a + d * ((s - cumulative_[i]) / (cumulative_[i + 1] - cumulative_[i]));
}

double ReferenceTrajectory::heading_at(double s) const {
  if (closed_) {
    s = std::fmod(s, length());
    if (s < 0.0) s += length();
  }
  const std::size_t i = segment_at(s);
  const Vec2 d = segment_end(i) - points_[i];
  return std::atan2(d.y(), d.x());
}

std::optional<double> ReferenceTrajectory::speed_at(double s) const {
  if (closed_) {
    s = std::fmod(s, length());
    if (s < 0.0) s += length();
  }
  return speeds_[segment_at(s)];
}

ReferenceTrajectory ReferenceTrajectory::load_csv(const std::string& path, bool closed) {
  const CsvTable t = read_csv(path);
  const std::size_t cx = t.column("x_m"), cy = t.column("y_m");
  const bool has_v = t.has_column("v_target_mps");
  std::vector<Vec2> pts;
  std::vector<std::optional<double>> speeds;
  for (const auto& row : t.rows) {
    pts.emplace_back(parse_double(row[cx]), parse_double(row[cy]));
    const std::string* v = has_v ? &row[t.column("v_target_mps")] : nullptr;
    speeds.push_back(v && !v->empty() ? std::optional<double>(parse_double(*v)) : std::nullopt);
  }
  return ReferenceTrajectory(std::move(pts), closed, std::move(speeds));
}

void ReferenceTrajectory::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path);
  out << std::setprecision(17) << "x_m,y_m,v_target_mps\n";
  for (std::size_t i = 0; i < points_.size(); ++i) {
    out << points_[i].x() << ',' << points_[i].y() << ',';
    if (speeds_[i]) out << *speeds_[i];
    out << '\n';
  }
}

void DwaConfig::validate() const {
  if (!(v_max > 0 && omega_max > 0 && a_v > 0 && a_omega > 0 && dt_plan > 0 && horizon >= dt_plan &&
        robot_radius > 0 && max_clearance > 0 && lookahead > 0)) {
    fail(ErrorCode::InvalidArgument, "planner parameters must be positive");
  }
  if (samples_v < 3 || samples_omega < 3) {
    fail(ErrorCode::InvalidArgument, "planner needs at least 3 samples per axis");
  }
  if (weights.heading < 0 || weights.clearance < 0 || weights.velocity < 0) {
    fail(ErrorCode::InvalidArgument, "planner weights must be non-negative");
  }
}

Window dynamic_window(const vo::RobotState& state, const DwaConfig& cfg) {
  Window w;
  w.v_hi = std::min(cfg.v_max, state.v + cfg.a_v * cfg.dt_plan);
  w.v_lo = std::min(std::max(0.0, state.v - cfg.a_v * cfg.dt_plan), w.v_hi);
  w.omega_hi = std::min(cfg.omega_max, state.omega + cfg.a_omega * cfg.dt_plan);
  w.omega_lo = std::max(-cfg.omega_max, state.omega - cfg.a_omega * cfg.dt_plan);
  if (w.omega_lo > w.omega_hi) w.omega_lo = w.omega_hi = std::clamp(state.omega, -cfg.omega_max, cfg.omega_max);
  return w;
}

std::vector<Pose2> rollout(const Pose2& start, const VelocityCommand& cmd, double dt_plan,
                           double horizon) {
  if (!(dt_plan > 0.0) || horizon < dt_plan) {
    fail(ErrorCode::InvalidArgument, "rollout needs dt_plan > 0 and horizon >= dt_plan");
  }
  const auto steps = static_cast<std::size_t>(std::ceil(horizon / dt_plan - 1e-9));
  std::vector<Pose2> states;
  states.reserve(steps + 1);
  states.push_back(start);
  for (std::size_t k = 0; k < steps; ++k) {
    states.push_back(unicycle_step(states.back(), cmd.v, cmd.omega, dt_plan));
  }
  return states;
}

namespace {

// Minimum clearance along the candidate, or nullopt when a state leaves the grid.
template <typename Query>
std::optional<double> min_clearance(const TrajectoryCandidate& c, const mapping::OccupancyGrid& grid,
                                    const Query& query) {
  double m = std::numeric_limits<double>::infinity();
  for (const Pose2& s : c.states) {
    if (!grid.cell_of(s.position())) return std::nullopt;
    m = std::min(m, query(s.position()));
  }
  return m;
}

bool admissible_given(double v, std::optional<double> clearance, const DwaConfig& cfg) {
  if (!clearance || *clearance < cfg.robot_radius) return false;
  return v * v <= 2.0 * cfg.a_v * (*clearance - cfg.robot_radius);
}

}  // namespace

bool admissible(const TrajectoryCandidate& candidate, const mapping::OccupancyGrid& grid,
                const DwaConfig& cfg) {
  const auto m = min_clearance(candidate, grid, [&](const Vec2& p) {
    return mapping::clearance_query(grid, p, cfg.max_clearance);
  });
  return admissible_given(candidate.command.v, m, cfg);
}

bool admissible(const TrajectoryCandidate& candidate, const mapping::ClearanceIndex& index,
                const mapping::OccupancyGrid& grid, const DwaConfig& cfg) {
  const auto m = min_clearance(candidate, grid, [&](const Vec2& p) { return index.query(p); });
  return admissible_given(candidate.command.v, m, cfg);
}

ScoreTerms score_terms(const TrajectoryCandidate& candidate, double min_clear,
                       const ReferenceTrajectory& ref, const DwaConfig& cfg) {
  const Pose2& end = candidate.states.back();
  const auto proj = ref.project(end.position());
  const double tangent = ref.heading_at(proj.s);
  const Vec2 target = proj.point + cfg.lookahead * Vec2(std::cos(tangent), std::sin(tangent));
  const Vec2 d = target - end.position();
  const double bearing = std::atan2(d.y(), d.x());
  ScoreTerms t;
  t.heading = 1.0 - std::abs(wrap_angle(end.yaw - bearing)) / kPi;
  t.clearance = std::min(min_clear, cfg.max_clearance) / cfg.max_clearance;
  t.velocity = candidate.command.v / cfg.v_max;
  t.total = cfg.weights.heading * t.heading + cfg.weights.clearance * t.clearance +
            cfg.weights.velocity * t.velocity;
  return t;
}

double score_candidate(const TrajectoryCandidate& candidate, const mapping::OccupancyGrid& grid,
                       const ReferenceTrajectory& ref, const vo::RobotState& /*state*/,
                       const DwaConfig& cfg) {
  const auto m = min_clearance(candidate, grid, [&](const Vec2& p) {
    return mapping::clearance_query(grid, p, cfg.max_clearance);
  });
  if (!admissible_given(candidate.command.v, m, cfg)) {
    fail(ErrorCode::NotAdmissible, "cannot score an inadmissible candidate");
  }
  return score_terms(candidate, *m, ref, cfg).total;
}

TrajectoryCandidate braking_candidate(const vo::RobotState& state, const DwaConfig& cfg) {
  TrajectoryCandidate c;
  const double v0 = std::max(0.0, state.v);
  c.command = {std::max(0.0, v0 - cfg.a_v * cfg.dt_plan), 0.0};
  const auto steps = static_cast<std::size_t>(std::ceil(cfg.horizon / cfg.dt_plan - 1e-9));
  c.states.push_back({state.x(), state.y(), state.yaw()});
  for (std::size_t k = 0; k < steps; ++k) {
    const double v = std::max(0.0, v0 - cfg.a_v * cfg.dt_plan * static_cast<double>(k + 1));
    c.states.push_back(unicycle_step(c.states.back(), v, 0.0, cfg.dt_plan));
  }
  c.admissible = false;
  return c;
}

bool ranks_before(const TrajectoryCandidate& a, const TrajectoryCandidate& b) {
  if (a.admissible != b.admissible) return a.admissible;
  const double sa = a.score.value_or(-std::numeric_limits<double>::infinity());
  const double sb = b.score.value_or(-std::numeric_limits<double>::infinity());
  if (sa != sb) return sa > sb;
  const double wa = std::abs(a.command.omega), wb = std::abs(b.command.omega);
  if (wa != wb) return wa < wb;
  if (a.command.v != b.command.v) return a.command.v < b.command.v;
  return a.command.omega < b.command.omega;
}

namespace {

double lattice_value(double lo, double hi, int i, int n) {
  return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}

PlanResult plan_impl(const vo::RobotState& state, const mapping::OccupancyGrid& grid,
                     const ReferenceTrajectory& ref, const DwaConfig& cfg, bool parallel) {
  cfg.validate();
  const Pose2 start{state.x(), state.y(), state.yaw()};
  if (!grid.cell_of(start.position())) fail(ErrorCode::OutOfGrid, "robot is outside the grid");
  const Window w = dynamic_window(state, cfg);
  const mapping::ClearanceIndex index(grid, cfg.max_clearance);

  PlanResult result;
  const int n = cfg.samples_v * cfg.samples_omega;
  result.lattice.resize(n);
  auto evaluate = [&](int i) {
    TrajectoryCandidate& c = result.lattice[i];
    c.command = {lattice_value(w.v_lo, w.v_hi, i / cfg.samples_omega, cfg.samples_v),
                 lattice_value(w.omega_lo, w.omega_hi, i % cfg.samples_omega, cfg.samples_omega)};
    c.states = rollout(start, c.command, cfg.dt_plan, cfg.horizon);
    const auto m = min_clearance(c, grid, [&](const Vec2& p) { return index.query(p); });
    c.admissible = admissible_given(c.command.v, m, cfg);
    if (c.admissible) c.score = score_terms(c, *m, ref, cfg).total;
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < n; ++i) evaluate(i);
  } else {
    for (int i = 0; i < n; ++i) evaluate(i);
  }

  const TrajectoryCandidate* best = nullptr;
  for (const auto& c : result.lattice) {
    if (c.admissible && (!best || ranks_before(c, *best))) best = &c;
  }
  result.best = best ? *best : braking_candidate(state, cfg);
  return result;
}

}  // namespace

PlanResult plan_detailed(const vo::RobotState& state, const mapping::OccupancyGrid& grid,
                         const ReferenceTrajectory& ref, const DwaConfig& cfg) {
  return plan_impl(state, grid, ref, cfg, true);
}

TrajectoryCandidate plan(const vo::RobotState& state, const mapping::OccupancyGrid& grid,
                         const ReferenceTrajectory& ref, const DwaConfig& cfg) {
  return plan_impl(state, grid, ref, cfg, true).best;
}

TrajectoryCandidate plan_serial(const vo::RobotState& state, const mapping::OccupancyGrid& grid,
                                const ReferenceTrajectory& ref, const DwaConfig& cfg) {
  return plan_impl(state, grid, ref, cfg, false).best;
}

void write_lattice_dump(const PlanResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path);
  out << std::setprecision(10) << "v,omega,admissible,score\n";
  for (const auto& c : result.lattice) {
    out << c.command.v << ',' << c.command.omega << ',' << (c.admissible ? 1 : 0) << ',';
    if (c.score) out << *c.score;
    out << '\n';
  }
}

}  // namespace amtu::planning
