#include "amtu/control.hpp"

#include <algorithm>
#include <cmath>

namespace amtu::control {

WheelSpeeds wheel_speeds(const ControlInput& u, double track_width) {
  return {u.v - u.omega * track_width / 2.0, u.v + u.omega * track_width / 2.0};
}

void NmpcConfig::validate() const {
  if (horizon_steps < 2) fail(ErrorCode::InvalidArgument, "NMPC horizon must be at least 2 steps");
  if (!(dt_ctrl > 0.0)) fail(ErrorCode::NonPositiveDt, "dt_ctrl must be positive");
  if (q_x < 0 || q_y < 0 || q_yaw < 0 || r_v < 0 || r_omega < 0) {
    fail(ErrorCode::InvalidArgument, "NMPC weights must be non-negative");
  }
  if (!(v_bound > 0 && omega_bound > 0 && v_rate > 0 && omega_rate > 0)) {
    fail(ErrorCode::InvalidArgument, "NMPC bounds must be positive");
  }
}

Pose2 predict_model(const Pose2& state, const ControlInput& u, double dt) {
  if (!(dt > 0.0)) fail(ErrorCode::NonPositiveDt, "dt must be positive");
  return unicycle_step(state, u.v, u.omega, dt);
}

ModelJacobians model_jacobians(const Pose2& s, const ControlInput& u, double dt) {
  ModelJacobians j;
  j.wrt_state.setIdentity();
  j.wrt_input.setZero();
  const double half = 0.5 * u.omega * dt;
  const double k = sinc(half);
  // d sinc / dh
  const double dk = std::abs(half) < 1e-4 ? -half / 3.0 + half * half * half / 30.0
                                           : (half * std::cos(half) - std::sin(half)) / (half * half);
  const double chord = u.v * dt * k;
  const double mid = s.yaw + half;
  const double cm = std::cos(mid), sm = std::sin(mid);
  j.wrt_state(0, 2) = -chord * sm;
  j.wrt_state(1, 2) = chord * cm;
  j.wrt_input(0, 0) = dt * k * cm;
  j.wrt_input(1, 0) = dt * k * sm;
  const double dchord = u.v * dt * dk * 0.5 * dt;
  j.wrt_input(0, 1) = dchord * cm - chord * sm * 0.5 * dt;
  j.wrt_input(1, 1) = dchord * sm + chord * cm * 0.5 * dt;
  j.wrt_input(2, 1) = dt;
  return j;
}

namespace {

void check_reference(std::span<const Pose2> reference, const NmpcConfig& cfg) {
  if (reference.size() != static_cast<std::size_t>(cfg.horizon_steps) + 1) {
    fail(ErrorCode::ReferenceLengthMismatch, "reference must hold horizon_steps + 1 states");
  }
}

std::vector<Pose2> simulate(const Pose2& start, std::span<const ControlInput> inputs, double dt) {
  std::vector<Pose2> xs;
  xs.reserve(inputs.size() + 1);
  xs.push_back(start);
  for (const auto& u : inputs) xs.push_back(unicycle_step(xs.back(), u.v, u.omega, dt));
  return xs;
}

Eigen::Vector3d residual(const Pose2& x, const Pose2& ref) {
  return {x.x - ref.x, x.y - ref.y, wrap_angle(x.yaw - ref.yaw)};
}

double cost_of(const std::vector<Pose2>& xs, std::span<const Pose2> reference,
               std::span<const ControlInput> inputs, std::span<const ControlInput> u_ref,
               const NmpcConfig& cfg) {
  double j = 0.0;
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const Eigen::Vector3d e = residual(xs[k], reference[k]);
    const double dv = inputs[k - 1].v - u_ref[k - 1].v;
    const double dw = inputs[k - 1].omega - u_ref[k - 1].omega;
    j += cfg.q_x * e.x() * e.x() + cfg.q_y * e.y() * e.y() + cfg.q_yaw * e.z() * e.z() +
         cfg.r_v * dv * dv + cfg.r_omega * dw * dw;
  }
  return j;
}

}  // namespace

std::vector<ControlInput> reference_inputs(std::span<const Pose2> reference, double dt) {
  if (!(dt > 0.0)) fail(ErrorCode::NonPositiveDt, "dt must be positive");
  std::vector<ControlInput> u;
  for (std::size_t k = 0; k + 1 < reference.size(); ++k) {
    const Pose2& a = reference[k];
    const Pose2& b = reference[k + 1];
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double turn = wrap_angle(b.yaw - a.yaw);
    const double forward = dx * std::cos(a.yaw) + dy * std::sin(a.yaw);
    double arc = std::hypot(dx, dy);
    if (std::abs(turn) > 1e-9) arc *= (turn / 2.0) / std::sin(turn / 2.0);
    u.push_back({std::copysign(arc, forward) / dt, turn / dt});
  }
  return u;
}

double nmpc_cost(const Pose2& state, std::span<const Pose2> reference,
                 std::span<const ControlInput> inputs, const NmpcConfig& cfg) {
  check_reference(reference, cfg);
  if (inputs.size() != static_cast<std::size_t>(cfg.horizon_steps)) {
    fail(ErrorCode::InvalidArgument, "input sequence must hold horizon_steps inputs");
  }
  return cost_of(simulate(state, inputs, cfg.dt_ctrl), reference, inputs,
                 reference_inputs(reference, cfg.dt_ctrl), cfg);
}

void project_inputs(std::vector<ControlInput>& inputs, const std::optional<ControlInput>& previous,
                    const NmpcConfig& cfg) {
  std::optional<ControlInput> prev = previous;
  for (auto& u : inputs) {
    if (prev) {
      u.v = std::clamp(u.v, prev->v - cfg.v_rate, prev->v + cfg.v_rate);
      u.omega = std::clamp(u.omega, prev->omega - cfg.omega_rate, prev->omega + cfg.omega_rate);
    }
    u.v = std::clamp(u.v, -cfg.v_bound, cfg.v_bound);
    u.omega = std::clamp(u.omega, -cfg.omega_bound, cfg.omega_bound);
    prev = u;
  }
}

NmpcSolution nmpc_solve(const Pose2& state, std::span<const Pose2> reference,
                        std::optional<std::span<const ControlInput>> warm_start,
                        const NmpcConfig& cfg, const std::optional<ControlInput>& previous) {
  cfg.validate();
  check_reference(reference, cfg);
  const int h = cfg.horizon_steps;
  const double dt = cfg.dt_ctrl;

  const std::vector<ControlInput> u_ref = reference_inputs(reference, dt);
  std::vector<ControlInput> u(h);
  if (warm_start && warm_start->size() == static_cast<std::size_t>(h)) {
    for (int k = 0; k < h; ++k) u[k] = (*warm_start)[std::min(k + 1, h - 1)];
  } else {
    u = u_ref;
  }
  project_inputs(u, previous, cfg);

  NmpcSolution sol;
  std::vector<Pose2> xs = simulate(state, u, dt);
  double cost = cost_of(xs, reference, u, u_ref, cfg);
  if (!std::isfinite(cost)) fail(ErrorCode::NonFiniteCost, "initial NMPC cost is not finite");
  sol.cost_history.push_back(cost);

  const Eigen::Vector3d q(cfg.q_x, cfg.q_y, cfg.q_yaw);
  Eigen::VectorXd r_diag(2 * h);
  for (int k = 0; k < h; ++k) r_diag.segment<2>(2 * k) << cfg.r_v, cfg.r_omega;

  auto try_step = [&](const Eigen::VectorXd& dir, std::vector<ControlInput>& out_u,
                      std::vector<Pose2>& out_x, double& out_cost) {
    double alpha = 1.0;
    for (int attempt = 0; attempt < 30; ++attempt, alpha *= 0.5) {
      std::vector<ControlInput> cand(h);
      for (int k = 0; k < h; ++k) {
        cand[k] = {u[k].v + alpha * dir(2 * k), u[k].omega + alpha * dir(2 * k + 1)};
      }
      project_inputs(cand, previous, cfg);
      auto cx = simulate(state, cand, dt);
      const double c = cost_of(cx, reference, cand, u_ref, cfg);
      if (!std::isfinite(c)) fail(ErrorCode::NonFiniteCost, "NMPC cost diverged");
      if (c < cost) {
        out_u = std::move(cand);
        out_x = std::move(cx);
        out_cost = c;
        return true;
      }
    }
    return false;
  };

  for (int it = 0; it < cfg.max_iterations; ++it) {
    // Sensitivities of every predicted state to every input, by forward recursion.
    Eigen::MatrixXd hess = r_diag.asDiagonal();
    Eigen::VectorXd grad(2 * h);
    for (int k = 0; k < h; ++k) grad.segment<2>(2 * k) << cfg.r_v * (u[k].v - u_ref[k].v), cfg.r_omega * (u[k].omega - u_ref[k].omega);
    Eigen::MatrixXd sens = Eigen::MatrixXd::Zero(3, 2 * h);
    for (int k = 0; k < h; ++k) {
      const ModelJacobians jac = model_jacobians(xs[k], u[k], dt);
      sens = (jac.wrt_state * sens).eval();
      sens.block<3, 2>(0, 2 * k) += jac.wrt_input;
      const Eigen::Vector3d e = residual(xs[k + 1], reference[k + 1]);
      const Eigen::MatrixXd qs = q.asDiagonal() * sens;
      hess.noalias() += sens.transpose() * qs;
      grad.noalias() += sens.transpose() * q.cwiseProduct(e);
    }
    if (!grad.allFinite() || !hess.allFinite()) fail(ErrorCode::NonFiniteCost, "NMPC linearization diverged");
    hess.diagonal().array() += 1e-9;
    const Eigen::VectorXd gn = -hess.ldlt().solve(grad);

    std::vector<ControlInput> next_u;
    std::vector<Pose2> next_x;
    double next_cost = cost;
    bool accepted = gn.allFinite() && try_step(gn, next_u, next_x, next_cost);
    if (!accepted) {
      const double scale = 1.0 / std::max(1.0, hess.diagonal().maxCoeff());
      accepted = try_step(-scale * grad, next_u, next_x, next_cost);
    }
    if (!accepted) break;
    const double decrease = cost - next_cost;
    u = std::move(next_u);
    xs = std::move(next_x);
    cost = next_cost;
    sol.cost_history.push_back(cost);
    sol.iterations = it + 1;
    if (decrease < cfg.tolerance) break;
  }

  sol.inputs = std::move(u);
  sol.states = std::move(xs);
  sol.cost = cost;
  return sol;
}

std::vector<Pose2> resample_candidate(const planning::TrajectoryCandidate& candidate,
                                      double dt_plan, const NmpcConfig& cfg, double time_offset) {
  const auto& s = candidate.states;
  if (s.size() < 2) fail(ErrorCode::InvalidArgument, "candidate needs at least 2 states");
  std::vector<Pose2> out;
  out.reserve(cfg.horizon_steps + 1);
  for (int k = 0; k <= cfg.horizon_steps; ++k) {
    const double f = (time_offset + k * cfg.dt_ctrl) / dt_plan;
    const auto i = static_cast<std::size_t>(std::max(0.0, std::floor(f + 1e-9)));
    if (i >= s.size() - 1) {
      out.push_back(s.back());
      continue;
    }
    const double a = std::clamp(f - static_cast<double>(i), 0.0, 1.0);
    const Pose2& p = s[i];
    const Pose2& q = s[i + 1];
    out.push_back({p.x + a * (q.x - p.x), p.y + a * (q.y - p.y),
                   wrap_angle(p.yaw + a * wrap_angle(q.yaw - p.yaw))});
  }
  return out;
}

TrackStepResult track_step(const vo::RobotState& state, const planning::TrajectoryCandidate& selected,
                           const std::vector<ControlInput>& prev_solution, const NmpcConfig& cfg,
                           double dt_plan, double time_offset,
                           const std::optional<ControlInput>& previous) {
  const auto reference = resample_candidate(selected, dt_plan, cfg, time_offset);
  const Pose2 x0{state.x(), state.y(), state.yaw()};
  TrackStepResult out;
  try {
    std::optional<std::span<const ControlInput>> warm;
    if (!prev_solution.empty()) warm = std::span<const ControlInput>(prev_solution);
    NmpcSolution sol = nmpc_solve(x0, reference, warm, cfg, previous);
    out.input = sol.inputs.front();
    out.warm_start = std::move(sol.inputs);
    out.cost = sol.cost;
    out.iterations = sol.iterations;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteCost) throw;
    out.input = {std::max(0.0, state.v - cfg.brake_decel * cfg.dt_ctrl), 0.0};
    out.braked = true;
  }
  return out;
}

}  // namespace amtu::control
