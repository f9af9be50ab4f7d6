// SPDX-License-Identifier: Apache-2.0
//
// Rollout helpers shared by distillation and the analysis studies.
#pragma once

#include "raptor/env.hpp"
#include "raptor/student.hpp"
#include "raptor/trajectory.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace raptor {

/// Hook invoked after every environment step (for disturbances and logging).
using StepHook = std::function<void(Environment&, int step)>;

/// Flies `steps` control steps with a student policy from the environment's
/// current state, recording everything. Stops early on termination when
/// `stop_on_terminal` is set. Simulation divergence ends the record with a
/// terminal flag.
template <typename S>
EpisodeRecord fly_student(Environment& env, PolicyRunner<S>& runner, int steps, Rng& rng, bool stop_on_terminal = true,
                          const StepHook& hook = {}) {
  EpisodeRecord rec;
  rec.params = env.params();
  for (int t = 0; t < steps; ++t) {
    const Observation obs = env.observation();
    const Motor4 a = runner.act(obs);
    StepResult res;
    bool diverged = false;
    try {
      res = env.step(MotorCommand(a), rng);
    } catch (const SimulationDiverged&) {
      diverged = true;
      res.terminal = true;
      res.reward = -100.0;
    }
    rec.observations.push_back(obs);
    rec.student_actions.push_back(a);
    rec.rewards.push_back(res.reward);
    rec.hidden_states.push_back(runner.hidden_vector());
    rec.terminal.push_back(res.terminal);
    rec.positions.push_back(env.state().position);
    rec.velocities.push_back(env.state().linear_velocity);
    rec.references.push_back(env.reference());
    if (diverged || (res.terminal && stop_on_terminal)) break;
    if (hook) hook(env, t + 1);
  }
  return rec;
}

/// Root mean square of the position error over records [from, end).
inline double rmse_tracking(const std::vector<Vec3>& positions, const std::vector<ReferenceState>& refs, bool include_z,
                            std::size_t from = 0) {
  const std::size_t n = std::min(positions.size(), refs.size());
  if (from >= n) return 0.0;
  double acc = 0.0;
  for (std::size_t i = from; i < n; ++i) {
    Vec3 e = positions[i] - refs[i].position;
    if (!include_z) e.z() = 0.0;
    acc += e.squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(n - from));
}

inline double rmse_tracking(const EpisodeRecord& rec, bool include_z, std::size_t from = 0) {
  return rmse_tracking(rec.positions, rec.references, include_z, from);
}

struct StudentEval {
  double mean_episode_length = 0.0;
  double full_length_fraction = 0.0;
  std::vector<int> lengths;
};

/// Episodes from the training reset distribution with fixed per-episode seeds.
template <typename S>
StudentEval evaluate_student(const QuadParams& params, const PolicyGRU<S>& policy, int episodes, std::uint64_t seed,
                             const EnvConfig& env_cfg = {}) {
  StudentEval out;
  PolicyRunner<S> runner(policy);
  for (int e = 0; e < episodes; ++e) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
    Environment env(params, env_cfg);
    env.reset(rng);
    runner.reset();
    const auto rec = fly_student(env, runner, env_cfg.horizon, rng);
    const int len = static_cast<int>(rec.size());
    out.lengths.push_back(len);
    out.mean_episode_length += len / static_cast<double>(episodes);
    if (len >= env_cfg.horizon && !rec.terminated()) out.full_length_fraction += 1.0 / episodes;
  }
  return out;
}

struct Fig8Result {
  EpisodeRecord record;
  bool terminated = false;
  std::size_t ramp_steps = 0;
  double rmse_xy = 0.0;
  double rmse_xyz = 0.0;
};

/// Tracks `loops` figure-eight loops (plus the ramp) starting from hover at
/// the origin with a freshly reset hidden state. Termination limits are
/// disabled so that the full record is always produced; `terminated` reports
/// whether the regular limits would have fired.
template <typename S>
Fig8Result fly_figure_eight(const QuadParams& params, const PolicyGRU<S>& policy, const Fig8Config& fig8, int loops,
                            std::uint64_t seed, EnvConfig env_cfg = {}) {
  const TerminationConfig limits = env_cfg.termination;
  env_cfg.termination = TerminationConfig{1e9, 1e9, 1e9};
  Environment env(params, env_cfg);
  env.reset_to(target_state(params), ReferenceTrajectory::figure_eight(fig8));
  PolicyRunner<S> runner(policy);
  Rng rng(seed);
  const double dt = env_cfg.sim.dt;
  const int steps = static_cast<int>(std::lround((fig8.ramp + loops * fig8.period) / dt));
  Fig8Result out;
  bool hit = false;
  out.record = fly_student(env, runner, steps, rng, true, [&](Environment& e, int) {
    hit = hit || terminal(e.state(), e.reference(), params, limits);
  });
  out.terminated = hit || out.record.terminated() || static_cast<int>(out.record.size()) < steps;
  out.ramp_steps = static_cast<std::size_t>(std::lround(fig8.ramp / dt));
  out.rmse_xy = rmse_tracking(out.record, false, out.ramp_steps);
  out.rmse_xyz = rmse_tracking(out.record, true, out.ramp_steps);
  return out;
}

}  // namespace raptor
