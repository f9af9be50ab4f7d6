// SPDX-License-Identifier: Apache-2.0
//
// Evaluation studies on a trained student: hidden-state probing, mid-air
// activation, disturbances, velocity delay with the accelerometer filter, and
// long-horizon figure-eight tracking.
#pragma once

#include "raptor/evaluation.hpp"
#include "raptor/sampler.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace raptor {

// ---------------------------------------------------------------- probing

struct ProbeRow {
  std::vector<double> hidden;
  double target = 0.0;
  int quad = 0;
  int step = 0;
};

struct ProbeDataset {
  std::vector<ProbeRow> rows;
};

class ProbeFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProbeFit {
  Eigen::VectorXd weights;  // one per hidden unit
  double intercept = 0.0;
  double test_mse = 0.0;
  double test_r2 = 0.0;
  std::vector<int> train_quads;
  std::vector<int> test_quads;
};

/// Splits quadrotor ids (sorted) so the first ceil(split * n) train and the
/// rest test. Rows of one quadrotor never straddle the split.
inline std::pair<std::vector<int>, std::vector<int>> probe_split(const ProbeDataset& data, double split) {
  std::vector<int> quads;
  for (const auto& r : data.rows) quads.push_back(r.quad);
  std::sort(quads.begin(), quads.end());
  quads.erase(std::unique(quads.begin(), quads.end()), quads.end());
  const auto n_train = static_cast<std::size_t>(std::ceil(split * static_cast<double>(quads.size())));
  std::vector<int> train(quads.begin(), quads.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, quads.size())));
  std::vector<int> test(quads.begin() + static_cast<std::ptrdiff_t>(train.size()), quads.end());
  return {train, test};
}

/// Ordinary least squares with intercept on the training quadrotors, scored
/// on the held-out ones. Hidden units that are constant over the training
/// rows carry no information and get weight zero; remaining collinearity is a
/// fit fault.
inline ProbeFit linear_probe_fit(const ProbeDataset& data, double split = 0.8) {
  if (data.rows.empty()) throw ProbeFitError("empty probe dataset");
  auto [train, test] = probe_split(data, split);
  if (train.size() < 2 || test.size() < 2) throw ProbeFitError("need at least two quadrotors in each split");
  const auto in = [](const std::vector<int>& s, int q) { return std::binary_search(s.begin(), s.end(), q); };

  const std::size_t H = data.rows.front().hidden.size();
  std::vector<const ProbeRow*> tr, te;
  for (const auto& r : data.rows) {
    if (r.hidden.size() != H) throw ProbeFitError("inconsistent hidden sizes");
    (in(train, r.quad) ? tr : te).push_back(&r);
  }

  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < H; ++j) {
    const double first = tr.front()->hidden[j];
    if (std::any_of(tr.begin(), tr.end(), [&](const ProbeRow* r) { return r->hidden[j] != first; })) active.push_back(j);
  }
  const auto cols = static_cast<Eigen::Index>(active.size() + 1);
  if (static_cast<Eigen::Index>(tr.size()) < cols) throw ProbeFitError("fewer training rows than regressors");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(tr.size()), cols);
  Eigen::VectorXd y(static_cast<Eigen::Index>(tr.size()));
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < active.size(); ++k) X(row, static_cast<Eigen::Index>(k)) = tr[i]->hidden[active[k]];
    X(row, cols - 1) = 1.0;
    y(row) = tr[i]->target;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < cols) throw ProbeFitError("rank-deficient probe design matrix");
  const Eigen::VectorXd beta = qr.solve(y);

  ProbeFit fit;
  fit.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(H));
  for (std::size_t k = 0; k < active.size(); ++k) fit.weights(static_cast<Eigen::Index>(active[k])) = beta(static_cast<Eigen::Index>(k));
  fit.intercept = beta(cols - 1);
  fit.train_quads = train;
  fit.test_quads = test;

  double mean = 0.0;
  for (const auto* r : te) mean += r->target / static_cast<double>(te.size());
  double sse = 0.0, sst = 0.0;
  for (const auto* r : te) {
    double pred = fit.intercept;
    for (std::size_t j = 0; j < H; ++j) pred += fit.weights(static_cast<Eigen::Index>(j)) * r->hidden[j];
    sse += (pred - r->target) * (pred - r->target);
    sst += (r->target - mean) * (r->target - mean);
  }
  fit.test_mse = sse / static_cast<double>(te.size());
  fit.test_r2 = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity());
  return fit;
}

/// Flies the student on every quadrotor of `fleet` and records the hidden
/// state after each step from `skip` on, labelled with the sampled
/// thrust-to-weight ratio.
template <typename S>
ProbeDataset collect_probe_dataset(const PolicyGRU<S>& policy, const std::vector<SampledQuad>& fleet, int episodes,
                                   int steps, int skip, std::uint64_t seed, const EnvConfig& env_cfg = {}) {
  ProbeDataset data;
  PolicyRunner<S> runner(policy);
  for (std::size_t q = 0; q < fleet.size(); ++q) {
    for (int e = 0; e < episodes; ++e) {
      Rng rng(derive_seed(seed, q * 1000 + static_cast<std::uint64_t>(e)));
      Environment env(fleet[q].params, env_cfg);
      env.reset(rng);
      runner.reset();
      const auto rec = fly_student(env, runner, steps, rng);
      for (std::size_t t = static_cast<std::size_t>(skip); t < rec.size(); ++t)
        data.rows.push_back({rec.hidden_states[t], fleet[q].trace.t2w, static_cast<int>(q), static_cast<int>(t)});
    }
  }
  return data;
}

// ------------------------------------------------------ mid-air activation

/// Position error < 0.2 m and speed < 0.2 m/s over the whole final second.
inline bool held_at_target(const EpisodeRecord& rec, double dt) {
  const auto window = static_cast<std::size_t>(std::lround(1.0 / dt));
  if (rec.size() < window) return false;
  for (std::size_t t = rec.size() - window; t < rec.size(); ++t) {
    const double pe = (rec.positions[t] - rec.references[t].position).norm();
    if (!(pe < 0.2 && rec.velocities[t].norm() < 0.2)) return false;
  }
  return true;
}

struct ActivationResult {
  EpisodeRecord record;
  bool recovered = false;
  bool diverged = false;
};

/// Starts level at the origin moving at `initial_speed` in a random direction,
/// resets the hidden state and holds position for `duration` seconds. The run
/// counts as recovered when position error < 0.2 m and speed < 0.2 m/s over
/// the whole final second.
template <typename S>
ActivationResult midair_activation_test(const PolicyGRU<S>& policy, const QuadParams& params, double initial_speed,
                                        std::uint64_t seed, double duration = 10.0, EnvConfig env_cfg = {}) {
  env_cfg.termination = TerminationConfig{1e9, 1e9, 1e9};
  Rng rng(seed);
  QuadState s = target_state(params);
  s.linear_velocity = uniform_direction(rng) * initial_speed;
  Environment env(params, env_cfg);
  env.reset_to(s, ReferenceTrajectory::null());
  PolicyRunner<S> runner(policy);
  const double dt = env_cfg.sim.dt;
  const int steps = static_cast<int>(std::lround(duration / dt));
  ActivationResult out;
  out.record = fly_student(env, runner, steps, rng);
  out.diverged = static_cast<int>(out.record.size()) < steps;
  out.recovered = !out.diverged && held_at_target(out.record, dt);
  return out;
}

// ------------------------------------------------------------ disturbances

struct Impulse {
  Vec3 delta_v = Vec3::Zero();
};
struct Payload {
  double delta_mass = 0.0;
};
struct PropSwap {
  int motor = 0;
  double thrust_scale = 1.0;
};
using Disturbance = std::variant<Impulse, Payload, PropSwap>;

inline void inject_disturbance(Environment& env, const Disturbance& d) {
  std::visit(
      [&env](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Impulse>) env.apply_impulse(x.delta_v);
        else if constexpr (std::is_same_v<T, Payload>) env.add_payload(x.delta_mass);
        else {
          if (x.motor < 0 || x.motor >= 4) throw std::invalid_argument("motor index out of range");
          if (!(x.thrust_scale >= 0.0)) throw std::invalid_argument("thrust scale must be non-negative");
          env.set_thrust_scale(x.motor, x.thrust_scale);
        }
      },
      d);
}

struct DisturbanceResult {
  EpisodeRecord record;
  std::size_t inject_step = 0;
  bool diverged = false;
  /// Seconds after injection until |z error| stays below `settle_band` for the
  /// rest of the run; negative if never.
  double settle_time = -1.0;
  bool recovered = false;  // back at the target by the end, as for mid-air activation
};

/// Hovers from the target, injects `d` after `inject_at` seconds and keeps
/// flying until `duration`.
template <typename S>
DisturbanceResult disturbance_test(const PolicyGRU<S>& policy, const QuadParams& params, const Disturbance& d,
                                   double inject_at, double duration, std::uint64_t seed, double settle_band = 0.05,
                                   EnvConfig env_cfg = {}) {
  env_cfg.termination = TerminationConfig{1e9, 1e9, 1e9};
  Rng rng(seed);
  Environment env(params, env_cfg);
  env.reset_to(target_state(params), ReferenceTrajectory::null());
  PolicyRunner<S> runner(policy);
  const double dt = env_cfg.sim.dt;
  const int steps = static_cast<int>(std::lround(duration / dt));
  DisturbanceResult out;
  out.inject_step = static_cast<std::size_t>(std::lround(inject_at / dt));
  out.record = fly_student(env, runner, steps, rng, true, [&](Environment& e, int step) {
    if (static_cast<std::size_t>(step) == out.inject_step) inject_disturbance(e, d);
  });
  out.diverged = static_cast<int>(out.record.size()) < steps;
  if (!out.diverged) {
    std::size_t last_out = out.inject_step;
    for (std::size_t t = out.inject_step; t < out.record.size(); ++t)
      if (std::abs(out.record.positions[t].z() - out.record.references[t].position.z()) >= settle_band) last_out = t + 1;
    if (last_out < out.record.size()) out.settle_time = static_cast<double>(last_out - out.inject_step) * dt;
    out.recovered = held_at_target(out.record, dt);
  }
  return out;
}

// ------------------------------------------------- velocity delay + filter

/// Leaky accelerometer integral: world-frame acceleration (gravity removed)
/// integrated with exponential forgetting.
struct VelFilterState {
  Vec3 v_a = Vec3::Zero();
  double time_constant = 0.2;  // s
};

/// `accel` is the body-frame specific force an accelerometer would report, so
/// a vehicle at rest reads +g along its thrust axis.
inline VelFilterState velocity_filter_step(const VelFilterState& fs, const Vec3& accel, const Quat& q, double dt,
                                           double gravity = 9.81) {
  const Vec3 a_g = q * accel - Vec3(0.0, 0.0, gravity);
  const double alpha = std::exp(-dt / fs.time_constant);
  return {alpha * fs.v_a + a_g * dt, fs.time_constant};
}

/// Body-frame specific force implied by a velocity change over one step.
inline Vec3 specific_force(const Vec3& v_prev, const Vec3& v_next, const Quat& q, double dt, double gravity = 9.81) {
  return q.conjugate() * ((v_next - v_prev) / dt + Vec3(0.0, 0.0, gravity));
}

/// Delays a timestamped vector signal: `read(now)` returns the newest sample
/// with timestamp <= now - delay (or the oldest one while warming up).
class DelayedObservationBuffer {
 public:
  explicit DelayedObservationBuffer(double delay) : delay_(delay) {
    if (delay < 0.0) throw std::invalid_argument("delay must be non-negative");
  }

  void push(double t, const Vec3& v) { samples_.push_back({t, v}); }

  Vec3 read(double now) {
    // Small tolerance so that a delay of exactly k steps lands on a sample.
    const double cutoff = now - delay_ + 1e-9;
    while (samples_.size() > 1 && samples_[1].first <= cutoff) samples_.pop_front();
    if (samples_.empty()) throw std::logic_error("read from an empty delay buffer");
    return samples_.front().second;
  }

  double delay() const { return delay_; }

 private:
  double delay_;
  std::deque<std::pair<double, Vec3>> samples_;
};

struct DelayRun {
  double delay = 0.0;
  bool mitigation = false;
  double z_std = 0.0;     // averaged over episodes
  int diverged = 0;
};

struct DelayStudyConfig {
  double duration = 15.0;       // s
  double window = 5.0;          // final seconds used for the z statistic
  double filter_time_constant = 0.2;
  int episodes = 4;
};

/// Hover episodes (from the training reset distribution, null reference)
/// with the velocity observation delayed. With mitigation, the delayed
/// velocity is corrected by the change of the leaky accelerometer integral
/// over the delay window.
template <typename S>
DelayRun delay_run(const PolicyGRU<S>& policy, const QuadParams& params, double delay, bool mitigation,
                   std::uint64_t seed, const DelayStudyConfig& cfg = {}, EnvConfig env_cfg = {}) {
  env_cfg.termination = TerminationConfig{1e9, 1e9, 1e9};
  env_cfg.null_task_probability = 1.0;
  const double dt = env_cfg.sim.dt;
  const int steps = static_cast<int>(std::lround(cfg.duration / dt));
  const auto window = static_cast<std::size_t>(std::lround(cfg.window / dt));
  DelayRun out{delay, mitigation, 0.0, 0};
  PolicyRunner<S> runner(policy);
  for (int e = 0; e < cfg.episodes; ++e) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
    Environment env(params, env_cfg);
    env.reset(rng);
    runner.reset();
    DelayedObservationBuffer vel(delay), filt(delay);
    VelFilterState fs{Vec3::Zero(), cfg.filter_time_constant};
    std::vector<double> z;
    bool diverged = false;
    for (int t = 0; t < steps; ++t) {
      const double now = t * dt;
      const QuadState& s = env.state();
      vel.push(now, s.linear_velocity);
      filt.push(now, fs.v_a);
      Observation obs = env.observation();
      Vec3 v_obs = vel.read(now);
      if (mitigation) v_obs += fs.v_a - filt.read(now);
      obs.segment<3>(12) = v_obs - env.reference().velocity;
      const Vec3 v_before = s.linear_velocity;
      try {
        env.step(MotorCommand(runner.act(obs)), rng);
      } catch (const SimulationDiverged&) {
        diverged = true;
        break;
      }
      const QuadState& n = env.state();
      fs = velocity_filter_step(fs, specific_force(v_before, n.linear_velocity, n.orientation, dt, env_cfg.sim.gravity),
                                n.orientation, dt, env_cfg.sim.gravity);
      z.push_back(n.position.z());
    }
    if (diverged || z.size() < window) {
      ++out.diverged;
      continue;
    }
    double m = 0.0, v = 0.0;
    for (std::size_t i = z.size() - window; i < z.size(); ++i) m += z[i] / static_cast<double>(window);
    for (std::size_t i = z.size() - window; i < z.size(); ++i) v += (z[i] - m) * (z[i] - m) / static_cast<double>(window);
    out.z_std += std::sqrt(v) / cfg.episodes;
  }
  return out;
}

template <typename S>
std::vector<DelayRun> delay_study(const PolicyGRU<S>& policy, const QuadParams& params, const std::vector<double>& delays,
                                  bool with_mitigation, std::uint64_t seed, const DelayStudyConfig& cfg = {},
                                  const EnvConfig& env_cfg = {}) {
  std::vector<DelayRun> rows;
  for (double d : delays) {
    rows.push_back(delay_run(policy, params, d, false, seed, cfg, env_cfg));
    if (with_mitigation) rows.push_back(delay_run(policy, params, d, true, seed, cfg, env_cfg));
  }
  return rows;
}

// ------------------------------------------------- context extrapolation

struct ExtrapolationResult {
  std::vector<double> loop_rmse;  // per loop, xy
  bool terminated = false;
  int failed_loop = -1;           // loop index of the first limit violation
  double max_hidden_abs = 0.0;
  Fig8Result run;
};

/// Consecutive figure-eight loops without resetting the hidden state.
template <typename S>
ExtrapolationResult context_extrapolation_test(const PolicyGRU<S>& policy, const QuadParams& params, int loops,
                                               const Fig8Config& fig8, std::uint64_t seed, bool include_z = false,
                                               const EnvConfig& env_cfg = {}) {
  if (loops < 1) throw std::invalid_argument("loops must be >= 1");
  ExtrapolationResult out;
  out.run = fly_figure_eight(params, policy, fig8, loops, seed, env_cfg);
  const auto& rec = out.run.record;
  const double dt = env_cfg.sim.dt;
  const auto per_loop = static_cast<std::size_t>(std::lround(fig8.period / dt));
  for (int l = 0; l < loops; ++l) {
    const std::size_t from = out.run.ramp_steps + static_cast<std::size_t>(l) * per_loop;
    const std::size_t to = std::min(from + per_loop, rec.size());
    if (from >= to) break;
    const std::vector<Vec3> p(rec.positions.begin() + static_cast<std::ptrdiff_t>(from),
                              rec.positions.begin() + static_cast<std::ptrdiff_t>(to));
    const std::vector<ReferenceState> r(rec.references.begin() + static_cast<std::ptrdiff_t>(from),
                                        rec.references.begin() + static_cast<std::ptrdiff_t>(to));
    out.loop_rmse.push_back(rmse_tracking(p, r, include_z));
  }
  const TerminationConfig limits = env_cfg.termination;
  for (std::size_t t = 0; t < rec.size(); ++t) {
    for (double h : rec.hidden_states[t]) out.max_hidden_abs = std::max(out.max_hidden_abs, std::abs(h));
    QuadState s = target_state(params);
    s.position = rec.positions[t];
    s.linear_velocity = rec.velocities[t];
    if (out.failed_loop < 0 && terminal(s, rec.references[t], params, limits)) {
      out.failed_loop = t < out.run.ramp_steps ? 0 : static_cast<int>((t - out.run.ramp_steps) / per_loop);
    }
  }
  out.terminated = out.run.terminated;
  if (out.terminated && out.failed_loop < 0) out.failed_loop = static_cast<int>(out.loop_rmse.size()) - 1;
  return out;
}

}  // namespace raptor
