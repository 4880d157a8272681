#pragma once

#include <optional>
#include <string>
#include <vector>

#include "amtu/kinematics.hpp"
#include "amtu/mapping.hpp"
#include "amtu/visual_odometry.hpp"

namespace amtu::planning {

struct VelocityCommand {
  double v = 0.0;
  double omega = 0.0;
  friend bool operator==(const VelocityCommand&, const VelocityCommand&) = default;
};

struct TrajectoryCandidate {
  VelocityCommand command;
  std::vector<Pose2> states;  // spaced dt_plan, starting at the robot
  std::optional<double> score;
  bool admissible = false;
};

/// Global route: ordered waypoints with optional per-waypoint target speeds.
class ReferenceTrajectory {
 public:
  struct Projection {
    double s = 0.0;        // arc length of the closest point
    Vec2 point;            // closest point on the route
    double lateral = 0.0;  // signed distance, positive to the left of travel
  };

  ReferenceTrajectory() = default;
  /// Throws InvalidArgument for fewer than 2 waypoints or repeated consecutive points.
  ReferenceTrajectory(std::vector<Vec2> waypoints, bool closed = false,
                      std::vector<std::optional<double>> speeds = {});

  static ReferenceTrajectory straight(const Vec2& start, double heading, double length,
                                      double spacing = 0.5, std::optional<double> speed = {});
  static ReferenceTrajectory circle(const Vec2& center, double radius, int segments = 360,
                                    std::optional<double> speed = {});

  const std::vector<Vec2>& waypoints() const { return points_; }
  const std::vector<std::optional<double>>& speeds() const { return speeds_; }
  bool closed() const { return closed_; }
  double length() const { return cumulative_.back(); }

  /// Closest route point; ties go to the earliest segment.
  Projection project(const Vec2& p) const;
  /// Route point at arc length s. Closed routes wrap; open routes extend
  /// along the first/last segment direction beyond their ends.
  Vec2 point_at(double s) const;
  double heading_at(double s) const;
  /// Target speed of the segment containing s, if any waypoint defines one.
  std::optional<double> speed_at(double s) const;

  /// CSV with header `x_m,y_m,v_target_mps`; empty speed cells mean "none".
  static ReferenceTrajectory load_csv(const std::string& path, bool closed = false);
  void save_csv(const std::string& path) const;

 private:
  std::size_t segment_count() const { return closed_ ? points_.size() : points_.size() - 1; }
  const Vec2& segment_end(std::size_t i) const { return points_[(i + 1) % points_.size()]; }
  std::size_t segment_at(double s) const;

  std::vector<Vec2> points_;
  std::vector<std::optional<double>> speeds_;
  std::vector<double> cumulative_;  // arc length at the start of each segment, plus total
  bool closed_ = false;
};

struct DwaWeights {
  double heading = 1.0;
  double clearance = 1.0;
  double velocity = 0.5;
};

struct DwaConfig {
  double v_max = 1.5;
  double omega_max = 1.0;
  double a_v = 0.5;
  double a_omega = 1.0;
  double dt_plan = 0.1;
  double horizon = 3.0;
  int samples_v = 11;
  int samples_omega = 21;
  DwaWeights weights;
  double robot_radius = 0.5;
  /// Clearance saturation; must exceed v_max^2 / (2 a_v) + robot_radius so
  /// free space admits v_max.
  double max_clearance = 3.0;
  /// Arc length past the candidate endpoint's route projection that the
  /// heading term aims at.
  double lookahead = 2.0;

  void validate() const;
};

struct Window {
  double v_lo, v_hi, omega_lo, omega_hi;
};

Window dynamic_window(const vo::RobotState& state, const DwaConfig& cfg);

std::vector<Pose2> rollout(const Pose2& start, const VelocityCommand& cmd, double dt_plan,
                           double horizon);

/// Every state keeps clearance >= robot_radius and v^2 <= 2 a_v (min clearance - robot_radius).
/// States outside the grid count as collisions.
bool admissible(const TrajectoryCandidate& candidate, const mapping::OccupancyGrid& grid,
                const DwaConfig& cfg);
bool admissible(const TrajectoryCandidate& candidate, const mapping::ClearanceIndex& index,
                const mapping::OccupancyGrid& grid, const DwaConfig& cfg);

struct ScoreTerms {
  double heading = 0.0;
  double clearance = 0.0;
  double velocity = 0.0;
  double total = 0.0;
};

/// Throws NotAdmissible for an inadmissible candidate.
double score_candidate(const TrajectoryCandidate& candidate, const mapping::OccupancyGrid& grid,
                       const ReferenceTrajectory& ref, const vo::RobotState& state,
                       const DwaConfig& cfg);
ScoreTerms score_terms(const TrajectoryCandidate& candidate, double min_clearance,
                       const ReferenceTrajectory& ref, const DwaConfig& cfg);

struct PlanResult {
  TrajectoryCandidate best;
  std::vector<TrajectoryCandidate> lattice;  // row-major over (v, omega)
};

/// Best admissible lattice candidate (ties: lower |omega|, lower v, lower omega),
/// else the braking fallback flagged inadmissible. Candidates are scored in
/// parallel; selection is serial and order-independent.
PlanResult plan_detailed(const vo::RobotState& state, const mapping::OccupancyGrid& grid,
                         const ReferenceTrajectory& ref, const DwaConfig& cfg);
TrajectoryCandidate plan(const vo::RobotState& state, const mapping::OccupancyGrid& grid,
                         const ReferenceTrajectory& ref, const DwaConfig& cfg);
/// Single-threaded reference of plan.
TrajectoryCandidate plan_serial(const vo::RobotState& state, const mapping::OccupancyGrid& grid,
                                const ReferenceTrajectory& ref, const DwaConfig& cfg);

TrajectoryCandidate braking_candidate(const vo::RobotState& state, const DwaConfig& cfg);

/// True when a ranks strictly before b in the selection order.
bool ranks_before(const TrajectoryCandidate& a, const TrajectoryCandidate& b);

/// CSV `v,omega,admissible,score` for the full lattice.
void write_lattice_dump(const PlanResult& result, const std::string& path);

}  // namespace amtu::planning
