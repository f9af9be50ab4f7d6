// SPDX-License-Identifier: Apache-2.0
//
// Quadrotor control task: reset distribution, error-state observations,
// reward, termination and episode bookkeeping.
//
// Observation layout (22 values):
//   [0..2]   position error p - p_ref (world)
//   [3..11]  rotation matrix R(q), row-major
//   [12..14] velocity error v - v_ref (world)
//   [15..17] angular velocity (body)
//   [18..21] previous action
// Teacher observations append the four motor speeds at [22..25].
#pragma once

#include "raptor/dynamics.hpp"
#include "raptor/rng.hpp"
#include "raptor/trajectory.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

namespace raptor {

inline constexpr int kObsDim = 22;
inline constexpr int kTeacherObsDim = 26;
inline constexpr int kActionDim = 4;

using Observation = Eigen::Matrix<double, kObsDim, 1>;
using TeacherObservation = Eigen::Matrix<double, kTeacherObsDim, 1>;

struct TerminationConfig {
  double position_factor = 20.0;  // times l_arm
  double max_velocity = 2.0;      // m/s, error velocity
  double max_angular_velocity = 35.0;
};

struct EnvConfig {
  SimConfig sim;
  int horizon = 500;
  double target_start_probability = 0.1;
  double null_task_probability = 0.5;
  LangevinConfig langevin;
  double init_position_factor = 10.0;  // times l_arm
  bool init_position_ball = false;     // per-axis box by default
  double init_max_angle = std::numbers::pi / 2.0;
  double init_max_velocity = 1.0;
  double init_max_angular_velocity = 1.0;
  TerminationConfig termination;
};

inline Observation observe(const QuadState& state, const ReferenceState& ref) {
  Observation o;
  o.segment<3>(0) = state.position - ref.position;
  const Eigen::Matrix3d r = state.orientation.toRotationMatrix();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) o[3 + 3 * i + j] = r(i, j);
  o.segment<3>(12) = state.linear_velocity - ref.velocity;
  o.segment<3>(15) = state.angular_velocity;
  for (int i = 0; i < kActionDim; ++i) o[18 + i] = state.prev_action[i];
  return o;
}

inline TeacherObservation teacher_observe(const QuadState& state, const ReferenceState& ref) {
  TeacherObservation o;
  o.head<kObsDim>() = observe(state, ref);
  for (int i = 0; i < kNumMotors; ++i) o[kObsDim + i] = state.motor_speeds[i];
  return o;
}

inline bool terminal(const QuadState& state, const ReferenceState& ref, const QuadParams& params,
                     const TerminationConfig& cfg = {}) {
  return (state.position - ref.position).norm() > cfg.position_factor * params.arm_length ||
         (state.linear_velocity - ref.velocity).norm() > cfg.max_velocity ||
         state.angular_velocity.norm() > cfg.max_angular_velocity;
}

inline double action_change(const Motor4& a, const Motor4& b) {
  double s = 0.0;
  for (int i = 0; i < kActionDim; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Reward of a transition, evaluated on the post-transition error state.
/// `prev_action` is the action held before `action` was applied.
inline double reward(const QuadState& next, const ReferenceState& next_ref, const Motor4& action,
                     const Motor4& prev_action, bool is_terminal) {
  const double position_error = (next.position - next_ref.position).norm();
  const double qz = std::abs(next.orientation.z());
  const double yaw_term = std::acos(std::clamp(1.0 - qz, -1.0, 1.0));
  return 1.5 - position_error - 0.2 * yaw_term - action_change(action, prev_action) -
         (is_terminal ? 100.0 : 0.0);
}

/// State at the target: origin, level, at rest, motors and previous action
/// at the hover command.
inline QuadState target_state(const QuadParams& params) {
  QuadState s;
  const double uh = std::clamp(hover_command(params), 0.0, 1.0);
  s.motor_speeds = {uh, uh, uh, uh};
  s.prev_action = s.motor_speeds;
  return s;
}

inline Vec3 uniform_direction(Rng& rng) {
  Vec3 d;
  do {
    d = Vec3(normal(rng), normal(rng), normal(rng));
  } while (d.norm() < 1e-12);
  return d.normalized();
}

/// Samples an initial state; the reference is returned separately by the
/// environment since it depends on the drawn task.
inline QuadState sample_initial_state(const QuadParams& params, Rng& rng, const EnvConfig& cfg = {}) {
  QuadState s = target_state(params);
  const double pos_max = cfg.init_position_factor * params.arm_length;
  if (cfg.init_position_ball) {
    s.position = uniform_direction(rng) * pos_max * std::cbrt(uniform(rng, 0.0, 1.0));
  } else {
    for (int i = 0; i < 3; ++i) s.position[i] = uniform(rng, -pos_max, pos_max);
  }
  const Vec3 axis = uniform_direction(rng);
  const double angle = uniform(rng, 0.0, cfg.init_max_angle);
  s.orientation = Quat(Eigen::AngleAxisd(angle, axis));
  auto bounded = [&rng](double max_norm) {
    Vec3 v(uniform(rng, -max_norm, max_norm), uniform(rng, -max_norm, max_norm), uniform(rng, -max_norm, max_norm));
    if (v.norm() > max_norm) v *= max_norm / v.norm();
    return v;
  };
  s.linear_velocity = bounded(cfg.init_max_velocity);
  s.angular_velocity = bounded(cfg.init_max_angular_velocity);
  if (bernoulli(rng, cfg.target_start_probability)) s = target_state(params);
  return s;
}

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;  // horizon reached without termination
};

/// Disturbance state layered on top of the nominal parameters.
struct Perturbation {
  double added_mass = 0.0;  // kg
  ThrustScale thrust_scale = kNominalThrust;
};

/// One quadrotor task instance. Value type: copying an environment forks it.
class Environment {
 public:
  explicit Environment(const QuadParams& params, const EnvConfig& cfg = {})
      : nominal_(params), plant_(params), cfg_(cfg), state_(target_state(params)),
        reference_(ReferenceTrajectory::null()) {}

  /// Samples an initial state and a task from the training mixture.
  void reset(Rng& rng) {
    perturbation_ = {};
    plant_ = nominal_;
    state_ = sample_initial_state(nominal_, rng, cfg_);
    if (sample_task(rng, cfg_.null_task_probability) == TaskKind::null_trajectory) {
      reference_ = ReferenceTrajectory::null();
    } else {
      reference_ = ReferenceTrajectory::langevin(state_.position, cfg_.langevin);
    }
    steps_ = 0;
    done_ = false;
  }

  void reset_to(const QuadState& state, const ReferenceTrajectory& reference) {
    state_ = state;
    reference_ = reference;
    steps_ = 0;
    done_ = false;
  }

  Observation observation() const { return observe(state_, reference_.current()); }
  TeacherObservation teacher_observation() const { return teacher_observe(state_, reference_.current()); }

  StepResult step(const MotorCommand& action, Rng& rng) {
    const Motor4 prev = state_.prev_action;
    state_ = integrate_step(state_, plant_, action, cfg_.sim, perturbation_.thrust_scale);
    reference_.advance(cfg_.sim.dt, rng);
    ++steps_;
    StepResult r;
    r.terminal = terminal(state_, reference_.current(), nominal_, cfg_.termination);
    r.reward = reward(state_, reference_.current(), action.u, prev, r.terminal);
    r.truncated = !r.terminal && steps_ >= cfg_.horizon;
    r.observation = observation();
    done_ = r.terminal || r.truncated;
    return r;
  }

  // Disturbances.
  void apply_impulse(const Vec3& delta_v) { state_.linear_velocity += delta_v; }
  void add_payload(double delta_mass);
  void set_thrust_scale(int motor, double scale) {
    perturbation_.thrust_scale.at(static_cast<std::size_t>(motor)) = scale;
  }

  const QuadParams& params() const { return nominal_; }
  const QuadParams& plant() const { return plant_; }
  const Perturbation& perturbation() const { return perturbation_; }
  const EnvConfig& config() const { return cfg_; }
  const QuadState& state() const { return state_; }
  QuadState& mutable_state() { return state_; }
  const ReferenceState& reference() const { return reference_.current(); }
  ReferenceTrajectory& reference_trajectory() { return reference_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }

 private:
  QuadParams nominal_;
  QuadParams plant_;  // nominal plus payload
  EnvConfig cfg_;
  Perturbation perturbation_;
  QuadState state_;
  ReferenceTrajectory reference_;
  int steps_ = 0;
  bool done_ = false;
};

inline void Environment::add_payload(double delta_mass) {
  if (plant_.mass + delta_mass <= 0.0) throw std::invalid_argument("payload would make the mass non-positive");
  perturbation_.added_mass += delta_mass;
  plant_.mass += delta_mass;
}

/// Time-indexed log of one rollout. All per-step arrays have equal length.
struct EpisodeRecord {
  std::vector<Observation> observations;  // observation the action was computed from
  std::vector<Motor4> student_actions;
  std::vector<Motor4> teacher_actions;
  std::vector<double> rewards;
  std::vector<std::vector<double>> hidden_states;  // after the step's update
  std::vector<bool> terminal;
  std::vector<Vec3> positions;                     // post-step
  std::vector<Vec3> velocities;
  std::vector<ReferenceState> references;          // post-step
  QuadParams params;

  std::size_t size() const { return observations.size(); }
  bool terminated() const { return !terminal.empty() && terminal.back(); }
};

}  // namespace raptor
