#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "amtu/kinematics.hpp"
#include "amtu/planning.hpp"
#include "amtu/visual_odometry.hpp"

namespace amtu::control {

struct ControlInput {
  double v = 0.0;
  double omega = 0.0;
  friend bool operator==(const ControlInput&, const ControlInput&) = default;
};

struct WheelSpeeds {
  double left = 0.0;
  double right = 0.0;
};

/// Differential-drive map: v -/+ omega * track_width / 2.
WheelSpeeds wheel_speeds(const ControlInput& u, double track_width);

struct NmpcConfig {
  int horizon_steps = 20;
  double dt_ctrl = 0.05;
  double q_x = 10.0, q_y = 10.0, q_yaw = 1.0;
  double r_v = 0.1, r_omega = 0.1;
  double v_bound = 1.5;
  double omega_bound = 1.0;
  double v_rate = 0.1;      // per step
  double omega_rate = 0.2;  // per step
  int max_iterations = 30;
  double tolerance = 1e-6;
  double track_width = 0.6;
  double brake_decel = 0.5;

  void validate() const;
};

/// Identical kinematics to the planner's rollout.
Pose2 predict_model(const Pose2& state, const ControlInput& u, double dt);

struct ModelJacobians {
  Eigen::Matrix3d wrt_state;
  Eigen::Matrix<double, 3, 2> wrt_input;
};

/// Analytic derivatives of predict_model (yaw output unwrapped).
ModelJacobians model_jacobians(const Pose2& state, const ControlInput& u, double dt);

struct NmpcSolution {
  std::vector<ControlInput> inputs;  // H
  std::vector<Pose2> states;         // H + 1, states[0] is the initial state
  double cost = 0.0;
  int iterations = 0;
  std::vector<double> cost_history;  // cost after each accepted iterate, starting with the initial guess
};

/// Inputs that carry the model exactly from reference[k] to reference[k+1]
/// (inverse of the arc step), used as the input penalty's zero point.
std::vector<ControlInput> reference_inputs(std::span<const Pose2> reference, double dt);

/// Tracking cost of an input sequence against reference[1..H]; inputs are
/// penalized relative to reference_inputs.
double nmpc_cost(const Pose2& state, std::span<const Pose2> reference,
                 std::span<const ControlInput> inputs, const NmpcConfig& cfg);

/// Forward clamp: rate bound against the preceding input, then the box.
/// The result satisfies both whenever `previous` lies inside the box.
void project_inputs(std::vector<ControlInput>& inputs, const std::optional<ControlInput>& previous,
                    const NmpcConfig& cfg);

/// Iterated linearization with projected Gauss-Newton steps. `warm_start` is
/// the prior solution; it is shifted by one step before use. `previous` is
/// the input currently applied and bounds the rate of inputs[0].
/// Throws ReferenceLengthMismatch, NonFiniteCost.
NmpcSolution nmpc_solve(const Pose2& state, std::span<const Pose2> reference,
                        std::optional<std::span<const ControlInput>> warm_start,
                        const NmpcConfig& cfg, const std::optional<ControlInput>& previous = {});

/// H + 1 reference states sampled from the candidate at dt_ctrl starting
/// `time_offset` seconds into it; positions linear, yaw along the shortest arc,
/// held at the final state past the end.
std::vector<Pose2> resample_candidate(const planning::TrajectoryCandidate& candidate,
                                      double dt_plan, const NmpcConfig& cfg,
                                      double time_offset = 0.0);

struct TrackStepResult {
  ControlInput input;
  std::vector<ControlInput> warm_start;
  double cost = 0.0;
  int iterations = 0;
  bool braked = false;
};

TrackStepResult track_step(const vo::RobotState& state, const planning::TrajectoryCandidate& selected,
                           const std::vector<ControlInput>& prev_solution, const NmpcConfig& cfg,
                           double dt_plan = 0.1, double time_offset = 0.0,
                           const std::optional<ControlInput>& previous = {});

}  // namespace amtu::control
