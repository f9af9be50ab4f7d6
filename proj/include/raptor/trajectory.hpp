// SPDX-License-Identifier: Apache-2.0
//
// Reference trajectories: the null reference, second-order Langevin random
// walks used during training, and Lissajous figure-eights for evaluation.
#pragma once

#include "raptor/dynamics.hpp"
#include "raptor/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace raptor {

struct ReferenceState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();

  bool operator==(const ReferenceState&) const = default;
};

struct LangevinConfig {
  double stiffness = 1.0;  // 1/s^2
  double damping = 1.0;    // 1/s
  double sigma = 0.4;      // m/s^(3/2)
  double clamp = 2.0;      // m

  bool valid() const { return stiffness > 0 && damping > 0 && sigma >= 0 && clamp > 0; }
};

/// One Euler-Maruyama step of v_dot = -damping v - stiffness p + sigma xi.
/// Position is advanced with the pre-step velocity and clamped per axis; the
/// velocity of a clamped axis is zeroed.
inline ReferenceState langevin_step(const ReferenceState& ref, const LangevinConfig& cfg, double dt, Rng& rng) {
  ReferenceState out;
  const double noise_scale = cfg.sigma * std::sqrt(dt);
  for (int i = 0; i < 3; ++i) {
    const double p = ref.position[i];
    const double v = ref.velocity[i];
    const double xi = cfg.sigma > 0.0 ? normal(rng) : 0.0;
    double vn = v + (-cfg.damping * v - cfg.stiffness * p) * dt + noise_scale * xi;
    double pn = p + v * dt;
    if (std::abs(pn) > cfg.clamp) {
      pn = std::clamp(pn, -cfg.clamp, cfg.clamp);
      vn = 0.0;
    }
    out.position[i] = pn;
    out.velocity[i] = vn;
  }
  return out;
}

struct Fig8Config {
  double period = 10.0;     // s
  double amplitude_x = 1.0; // m
  double amplitude_y = 0.5; // m
  double ramp = 1.0;        // s

  bool valid() const { return period > 0 && ramp >= 0; }
};

/// Lissajous figure-eight (1:2 frequency ratio) with a linear speed ramp.
///
/// The ramp is a time dilation: the phase clock runs at rate r(t) = t / ramp
/// during the ramp and at rate 1 afterwards, so the vehicle starts from rest at
/// the origin. After the ramp the reference is exactly periodic.
inline ReferenceState lissajous_figure_eight(const Fig8Config& cfg, double t) {
  double phase_time = 0.0;
  double rate = 1.0;
  if (cfg.ramp > 0.0 && t < cfg.ramp) {
    phase_time = t * t / (2.0 * cfg.ramp);
    rate = t / cfg.ramp;
  } else {
    phase_time = t - cfg.ramp / 2.0;
  }
  const double w = 2.0 * std::numbers::pi / cfg.period;
  ReferenceState ref;
  ref.position = Vec3(cfg.amplitude_x * std::sin(w * phase_time), cfg.amplitude_y * std::sin(2.0 * w * phase_time), 0.0);
  ref.velocity = Vec3(cfg.amplitude_x * w * std::cos(w * phase_time) * rate,
                      cfg.amplitude_y * 2.0 * w * std::cos(2.0 * w * phase_time) * rate, 0.0);
  return ref;
}

enum class TaskKind { null_trajectory, langevin };

/// Training task mixture: half null reference, half Langevin walk.
inline TaskKind sample_task(Rng& rng, double null_probability = 0.5) {
  return bernoulli(rng, null_probability) ? TaskKind::null_trajectory : TaskKind::langevin;
}

/// Stateful reference source owned by an environment.
class ReferenceTrajectory {
 public:
  enum class Kind { null_trajectory, langevin, figure_eight };

  static ReferenceTrajectory null() { return ReferenceTrajectory(Kind::null_trajectory); }

  static ReferenceTrajectory langevin(const Vec3& start, const LangevinConfig& cfg) {
    ReferenceTrajectory r(Kind::langevin);
    r.langevin_ = cfg;
    r.state_.position = start;
    return r;
  }

  /// Figure-eight centered at `origin`.
  static ReferenceTrajectory figure_eight(const Fig8Config& cfg, const Vec3& origin = Vec3::Zero()) {
    ReferenceTrajectory r(Kind::figure_eight);
    r.fig8_ = cfg;
    r.origin_ = origin;
    r.state_ = r.fig8_at(0.0);
    return r;
  }

  Kind kind() const { return kind_; }
  const ReferenceState& current() const { return state_; }
  double time() const { return time_; }
  const Fig8Config& fig8() const { return fig8_; }

  /// Moves the whole reference by `offset` (keeps its shape).
  void shift(const Vec3& offset) {
    origin_ += offset;
    state_.position += offset;
  }

  void advance(double dt, Rng& rng) {
    time_ += dt;
    switch (kind_) {
      case Kind::null_trajectory:
        state_.velocity.setZero();
        break;
      case Kind::langevin:
        state_ = langevin_step(state_, langevin_, dt, rng);
        break;
      case Kind::figure_eight:
        state_ = fig8_at(time_);
        break;
    }
  }

 private:
  explicit ReferenceTrajectory(Kind kind) : kind_(kind) {}

  ReferenceState fig8_at(double t) const {
    ReferenceState s = lissajous_figure_eight(fig8_, t);
    s.position += origin_;
    return s;
  }

  Kind kind_;
  ReferenceState state_;
  LangevinConfig langevin_;
  Fig8Config fig8_;
  Vec3 origin_ = Vec3::Zero();
  double time_ = 0.0;
};

}  // namespace raptor
