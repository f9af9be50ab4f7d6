// SPDX-License-Identifier: Apache-2.0
//
// Ancestral sampling of physically plausible quadrotors. Root quantities are
// drawn from simple marginals and everything else is computed from them.
#pragma once

#include "raptor/dynamics.hpp"
#include "raptor/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace raptor {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct SamplerConfig {
  Range t2w{1.5, 5.0};
  Range mass{0.02, 5.0};
  std::array<double, 3> baseline_thrust_shape{0.038, 0.154, 0.987};
  double mass_size_ratio = 7.90;  // Crazyflie cbrt(m) / l_arm
  double ms_deviation_mean = -0.1;
  double ms_deviation_std = 0.1;
  Range t2i{40.0, 1200.0};
  double jzz_factor = 1.832;
  Range moment_coeff{0.005, 0.05};
  Range tau_up{0.03, 0.1};
  Range tau_down{0.03, 0.3};

  bool valid() const {
    auto ok = [](const Range& r) { return r.lo < r.hi; };
    return ok(t2w) && ok(mass) && mass.lo > 0 && ok(t2i) && ok(moment_coeff) && ok(tau_up) && ok(tau_down) &&
           ms_deviation_std > 0 && mass_size_ratio > 0;
  }
};

/// Intermediate quantities of one ancestral draw. The root draws
/// (t2w, scale, deviation, t2i, moment_coeff, tau_up, tau_down) fully
/// determine the resulting parameters; see replay_sample().
struct SampleTrace {
  double t2w = 0.0;               // thrust-to-weight ratio
  double scale = 0.0;             // cube root of mass
  double mass = 0.0;
  double max_thrust = 0.0;        // total, N
  double ms_scale = 0.0;          // s_ms
  double deviation = 0.0;         // Gaussian draw behind s_ms
  double mass_size_ratio = 0.0;   // cbrt(m) / l_arm
  double arm_length = 0.0;
  double t2i = 0.0;               // torque-to-inertia ratio
  double max_torque = 0.0;        // N m
  double moment_coeff = 0.0;
  double tau_up = 0.0;
  double tau_down = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const SampleTrace&) const = default;
};

struct SampledQuad {
  QuadParams params;
  SampleTrace trace;
};

inline double mass_size_scale(double deviation) {
  return deviation < 0.0 ? 1.0 / (1.0 - deviation) : 1.0 + deviation;
}

/// Recomputes the dependent quantities of a trace from its root draws.
inline SampledQuad replay_sample(const SampleTrace& roots, const SamplerConfig& cfg = {}) {
  SampledQuad out;
  SampleTrace& t = out.trace;
  t = roots;
  t.mass = t.scale * t.scale * t.scale;
  t.max_thrust = t.t2w * kGravity * t.mass;
  t.ms_scale = mass_size_scale(t.deviation);
  t.arm_length = std::cbrt(t.mass) / (t.ms_scale * cfg.mass_size_ratio);
  t.mass_size_ratio = std::cbrt(t.mass) / t.arm_length;
  t.max_torque = t.max_thrust * std::sqrt(2.0) * t.arm_length;

  QuadParams& p = out.params;
  p.mass = t.mass;
  p.arm_length = t.arm_length;
  for (int i = 0; i < 3; ++i) p.thrust_coeffs[i] = cfg.baseline_thrust_shape[i] * t.max_thrust / 4.0;
  const double jxx = t.max_torque / t.t2i;
  p.inertia = Vec3(jxx, jxx, (jxx + jxx) / 2.0 * cfg.jzz_factor);
  p.moment_coeff = t.moment_coeff;
  p.motor_tau_up = t.tau_up;
  p.motor_tau_down = t.tau_down;
  return out;
}

inline SampledQuad sample_quadrotor(std::uint64_t seed, const SamplerConfig& cfg = {}) {
  Rng rng(seed);
  SampleTrace t;
  t.seed = seed;
  t.t2w = uniform(rng, cfg.t2w.lo, cfg.t2w.hi);
  t.scale = uniform(rng, std::cbrt(cfg.mass.lo), std::cbrt(cfg.mass.hi));
  // s_ms must stay positive; u <= -1 is redrawn (probability ~1e-28).
  do {
    t.deviation = normal(rng, cfg.ms_deviation_mean, cfg.ms_deviation_std);
  } while (t.deviation <= -1.0);
  t.t2i = uniform(rng, cfg.t2i.lo, cfg.t2i.hi);
  t.moment_coeff = uniform(rng, cfg.moment_coeff.lo, cfg.moment_coeff.hi);
  t.tau_up = uniform(rng, cfg.tau_up.lo, cfg.tau_up.hi);
  t.tau_down = uniform(rng, cfg.tau_down.lo, cfg.tau_down.hi);
  return replay_sample(t, cfg);
}

inline std::vector<SampledQuad> sample_fleet(std::size_t n, std::uint64_t master_seed,
                                             const SamplerConfig& cfg = {}) {
  std::vector<SampledQuad> fleet;
  fleet.reserve(n);
  for (std::size_t i = 0; i < n; ++i) fleet.push_back(sample_quadrotor(derive_seed(master_seed, i), cfg));
  return fleet;
}

}  // namespace raptor
