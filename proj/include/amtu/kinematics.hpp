#pragma once

#include <cmath>

#include "amtu/geometry.hpp"

namespace amtu {

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const Pose2&, const Pose2&) = default;
};

/// sin(h) / h, series-expanded near zero.
inline double sinc(double h) { return std::abs(h) < 1e-4 ? 1.0 - h * h / 6.0 : std::sin(h) / h; }

/// Exact unicycle step under constant (v, omega) for dt, written as a chord of
/// length v dt sinc(omega dt / 2) at the midpoint heading so that it stays
/// well conditioned as omega approaches zero.
inline Pose2 unicycle_step(const Pose2& s, double v, double omega, double dt) {
  const double half = 0.5 * omega * dt;
  const double chord = v * dt * sinc(half);
  const double mid = s.yaw + half;
  return {s.x + chord * std::cos(mid), s.y + chord * std::sin(mid),
          omega == 0.0 ? s.yaw : wrap_angle(s.yaw + omega * dt)};
}

}  // namespace amtu
