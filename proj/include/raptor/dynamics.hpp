// SPDX-License-Identifier: Apache-2.0
//
// Rigid-body quadrotor model with quadratic per-motor thrust curves and an
// asymmetric first-order motor lag.
//
// Frames: world z points up, body z is the thrust axis. Attitude is a
// scalar-first unit quaternion rotating body vectors into the world frame.
//
// Rotor layout (symmetric X, body x forward, body y left):
//
//   index  azimuth  position (per-axis arm d = l_arm / sqrt(2))  yaw sign
//     0      45 deg   (+d, +d)                                     +1
//     1     135 deg   (-d, +d)                                     -1
//     2     225 deg   (-d, -d)                                     +1
//     3     315 deg   (+d, -d)                                     -1
//
// Mixer (body torque from per-motor thrust f_i):
//   tau_x = d * ( f0 + f1 - f2 - f3)
//   tau_y = d * (-f0 + f1 + f2 - f3)
//   tau_z = c_m * ( f0 - f1 + f2 - f3)
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace raptor {

inline constexpr double kGravity = 9.81;
inline constexpr int kNumMotors = 4;

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using Motor4 = std::array<double, kNumMotors>;

/// Dynamics parameters of one quadrotor.
struct QuadParams {
  double mass = 0.0;        // kg
  double arm_length = 0.0;  // m
  std::array<double, 3> thrust_coeffs{};  // N, constant/linear/quadratic in u
  double moment_coeff = 0.0;              // m (yaw torque per unit thrust)
  Vec3 inertia = Vec3::Zero();            // kg m^2, diagonal (J_xx, J_yy, J_zz)
  double motor_tau_up = 0.0;              // s
  double motor_tau_down = 0.0;            // s

  bool operator==(const QuadParams&) const = default;
};

/// Simulator ground-truth state.
struct QuadState {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();  // body frame
  Motor4 prev_action{};
  Motor4 motor_speeds{};

  bool operator==(const QuadState& o) const {
    return position == o.position && orientation.coeffs() == o.orientation.coeffs() &&
           linear_velocity == o.linear_velocity && angular_velocity == o.angular_velocity &&
           prev_action == o.prev_action && motor_speeds == o.motor_speeds;
  }
};

/// Normalized rotor setpoints, clamped to [0, 1] on construction.
struct MotorCommand {
  Motor4 u{};

  MotorCommand() = default;
  explicit MotorCommand(const Motor4& raw) {
    for (int i = 0; i < kNumMotors; ++i) u[i] = std::clamp(raw[i], 0.0, 1.0);
  }
  static MotorCommand uniform(double value) { return MotorCommand(Motor4{value, value, value, value}); }
};

enum class Integrator { rk4, euler };

struct SimConfig {
  double dt = 0.01;
  Integrator integrator = Integrator::rk4;
  double gravity = kGravity;
};

/// Thrust multipliers applied per motor on top of the sampled thrust curve.
/// All ones for an unperturbed vehicle.
using ThrustScale = Motor4;
inline constexpr ThrustScale kNominalThrust{1.0, 1.0, 1.0, 1.0};

/// Raised when the integrated state stops being finite.
class SimulationDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<double, kNumMotors> kRotorX{+1.0, -1.0, -1.0, +1.0};
inline constexpr std::array<double, kNumMotors> kRotorY{+1.0, +1.0, -1.0, -1.0};
inline constexpr std::array<double, kNumMotors> kYawSign{+1.0, -1.0, +1.0, -1.0};

inline double thrust_curve(const QuadParams& params, double u) {
  const auto& c = params.thrust_coeffs;
  return c[0] + c[1] * u + c[2] * u * u;
}

/// Command whose steady thrust equals one quarter of the weight. Solves the
/// quadratic directly; returns a value outside [0,1] if hovering is impossible.
inline double hover_command(const QuadParams& params, double gravity = kGravity) {
  const auto& c = params.thrust_coeffs;
  const double target = params.mass * gravity / kNumMotors;
  const double disc = c[1] * c[1] - 4.0 * c[2] * (c[0] - target);
  return (-c[1] + std::sqrt(disc)) / (2.0 * c[2]);
}

/// Exact exponential update of the first-order motor lag, with separate time
/// constants for rising and falling setpoints.
inline Motor4 motor_lag_step(const Motor4& speeds, const MotorCommand& cmd, const QuadParams& params,
                             double dt) {
  Motor4 out{};
  for (int i = 0; i < kNumMotors; ++i) {
    const double tau = cmd.u[i] > speeds[i] ? params.motor_tau_up : params.motor_tau_down;
    const double next = cmd.u[i] + (speeds[i] - cmd.u[i]) * std::exp(-dt / tau);
    out[i] = std::clamp(next, 0.0, 1.0);
  }
  return out;
}

/// Time derivative of the rigid-body part of the state.
struct RigidBodyRate {
  Vec3 position;
  Eigen::Vector4d orientation;  // (w, x, y, z)
  Vec3 linear_velocity;
  Vec3 angular_velocity;
};

/// Per-motor thrusts at the given motor speeds.
inline Motor4 motor_thrusts(const QuadParams& params, const Motor4& speeds,
                            const ThrustScale& scale = kNominalThrust) {
  Motor4 f{};
  for (int i = 0; i < kNumMotors; ++i) f[i] = scale[i] * thrust_curve(params, speeds[i]);
  return f;
}

/// Body-frame torque produced by the given per-motor thrusts.
inline Vec3 body_torque(const QuadParams& params, const Motor4& thrusts) {
  const double d = params.arm_length / std::sqrt(2.0);
  Vec3 tau = Vec3::Zero();
  for (int i = 0; i < kNumMotors; ++i) {
    tau.x() += d * kRotorY[i] * thrusts[i];
    tau.y() -= d * kRotorX[i] * thrusts[i];
    tau.z() += kYawSign[i] * params.moment_coeff * thrusts[i];
  }
  return tau;
}

inline RigidBodyRate dynamics_derivative(const QuadState& state, const QuadParams& params,
                                         const ThrustScale& scale = kNominalThrust,
                                         double gravity = kGravity) {
  const Motor4 f = motor_thrusts(params, state.motor_speeds, scale);
  const double total = f[0] + f[1] + f[2] + f[3];

  RigidBodyRate rate;
  rate.position = state.linear_velocity;
  rate.linear_velocity = state.orientation * Vec3(0.0, 0.0, total / params.mass) - Vec3(0.0, 0.0, gravity);

  const Vec3& w = state.angular_velocity;
  const Vec3 jw = params.inertia.cwiseProduct(w);
  rate.angular_velocity = (body_torque(params, f) - w.cross(jw)).cwiseQuotient(params.inertia);

  // q_dot = 0.5 * q (x) (0, w)
  const Quat& q = state.orientation;
  const Quat qd = q * Quat(0.0, w.x(), w.y(), w.z());
  rate.orientation = 0.5 * Eigen::Vector4d(qd.w(), qd.x(), qd.y(), qd.z());
  return rate;
}

namespace detail {

inline QuadState advance(const QuadState& s, const RigidBodyRate& r, double h) {
  QuadState out = s;
  out.position = s.position + h * r.position;
  out.linear_velocity = s.linear_velocity + h * r.linear_velocity;
  out.angular_velocity = s.angular_velocity + h * r.angular_velocity;
  out.orientation = Quat(s.orientation.w() + h * r.orientation[0], s.orientation.x() + h * r.orientation[1],
                         s.orientation.y() + h * r.orientation[2], s.orientation.z() + h * r.orientation[3]);
  return out;
}

inline bool finite(const QuadState& s) {
  return s.position.allFinite() && s.linear_velocity.allFinite() && s.angular_velocity.allFinite() &&
         s.orientation.coeffs().allFinite();
}

}  // namespace detail

/// Advances the plant one control step: motor lag first (exact), then the
/// rigid body with motor speeds held over the step.
inline QuadState integrate_step(const QuadState& state, const QuadParams& params, const MotorCommand& action,
                                const SimConfig& cfg, const ThrustScale& scale = kNominalThrust) {
  QuadState s = state;
  s.motor_speeds = motor_lag_step(state.motor_speeds, action, params, cfg.dt);

  const double h = cfg.dt;
  QuadState next;
  if (cfg.integrator == Integrator::euler) {
    next = detail::advance(s, dynamics_derivative(s, params, scale, cfg.gravity), h);
  } else {
    const RigidBodyRate k1 = dynamics_derivative(s, params, scale, cfg.gravity);
    const RigidBodyRate k2 = dynamics_derivative(detail::advance(s, k1, h / 2), params, scale, cfg.gravity);
    const RigidBodyRate k3 = dynamics_derivative(detail::advance(s, k2, h / 2), params, scale, cfg.gravity);
    const RigidBodyRate k4 = dynamics_derivative(detail::advance(s, k3, h), params, scale, cfg.gravity);
    RigidBodyRate sum;
    sum.position = (k1.position + 2 * k2.position + 2 * k3.position + k4.position) / 6.0;
    sum.orientation = (k1.orientation + 2 * k2.orientation + 2 * k3.orientation + k4.orientation) / 6.0;
    sum.linear_velocity =
        (k1.linear_velocity + 2 * k2.linear_velocity + 2 * k3.linear_velocity + k4.linear_velocity) / 6.0;
    sum.angular_velocity =
        (k1.angular_velocity + 2 * k2.angular_velocity + 2 * k3.angular_velocity + k4.angular_velocity) / 6.0;
    next = detail::advance(s, sum, h);
  }
  next.orientation.normalize();
  next.prev_action = action.u;
  if (!detail::finite(next)) throw SimulationDiverged("non-finite quadrotor state after integration");
  return next;
}

}  // namespace raptor
