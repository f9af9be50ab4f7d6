// SPDX-License-Identifier: Apache-2.0
//
// Meta-imitation learning: many per-quadrotor teachers are distilled into one
// recurrent student. After a few warm-up epochs driven by the teachers, every
// epoch rolls the current student out on freshly sampled (quadrotor, teacher)
// pairs, labels each step with the bound teacher's deterministic action and
// fits the student by truncated backpropagation through time on the masked
// mean-squared error. Epoch data is discarded after the update.
#pragma once

#include "raptor/env.hpp"
#include "raptor/evaluation.hpp"
#include "raptor/nn.hpp"
#include "raptor/sac.hpp"
#include "raptor/student.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace raptor {

struct DistillConfig {
  int epochs = 1000;
  int warmup_epochs = 10;
  int horizon = 500;
  int envs_per_epoch = 64;
  int bptt_truncation = 500;
  double learning_rate = 1e-3;
  double grad_clip = 1.0;
  int hidden = 16;
  int eval_every = 10;        // epochs; 0 disables per-epoch evaluation
  int eval_episodes = 8;      // per held-out quadrotor
  bool eval_fig8 = true;
  Fig8Config eval_fig8_cfg{};
  int max_faults = 5;         // consecutive non-finite updates before aborting

  bool valid() const {
    return epochs > 0 && warmup_epochs >= 0 && warmup_epochs < epochs && horizon > 0 && envs_per_epoch > 0 &&
           bptt_truncation > 0 && learning_rate > 0 && hidden > 0;
  }
};

enum class RolloutMode { warmup, onpolicy };

/// Time-major batch of aligned sequences, one column per environment.
struct DistillBatch {
  std::vector<nn::Mat<float>> observations;     // T x (obs_dim x B)
  std::vector<nn::Mat<float>> labels;           // T x (act_dim x B), teacher actions
  std::vector<nn::Mat<float>> student_actions;  // T x (act_dim x B), student outputs during rollout
  std::vector<nn::Mat<float>> executed;         // T x (act_dim x B), actions applied to the plant
  std::vector<nn::Vec<float>> mask;             // T x B, 1 while the episode is live
  std::vector<std::size_t> quad_index;          // B, fleet index bound to each column

  std::size_t steps() const { return observations.size(); }
  Eigen::Index batch() const { return observations.empty() ? 0 : observations.front().cols(); }
  double masked_steps() const {
    double n = 0.0;
    for (const auto& m : mask) n += static_cast<double>(m.sum());
    return n;
  }
};

/// 0.5 * sum_masked ||a_teacher - a_student||^2 / (number of masked-in steps).
template <typename S>
double mse_loss(const std::vector<nn::Mat<S>>& student, const std::vector<nn::Mat<S>>& teacher,
                const std::vector<nn::Vec<S>>& mask) {
  double acc = 0.0, n = 0.0;
  for (std::size_t t = 0; t < student.size(); ++t) {
    for (Eigen::Index b = 0; b < student[t].cols(); ++b) {
      if (mask[t][b] == S(0)) continue;
      acc += static_cast<double>(mask[t][b]) * static_cast<double>((student[t].col(b) - teacher[t].col(b)).squaredNorm());
      n += static_cast<double>(mask[t][b]);
    }
  }
  return n > 0.0 ? 0.5 * acc / n : 0.0;
}

/// A (quadrotor, teacher) pair the student is trained against.
struct TeacherBinding {
  QuadParams params;
  TeacherPolicy teacher;
};

/// Rolls out one epoch. `assignment[b]` selects the binding for column b; the
/// environment for column b is reset with a seed derived from `seed` and b.
inline DistillBatch rollout_epoch(const StudentPolicy& student, const std::vector<TeacherBinding>& bindings,
                                  const std::vector<std::size_t>& assignment, RolloutMode mode, std::uint64_t seed,
                                  const DistillConfig& cfg, const EnvConfig& env_cfg = {}) {
  const auto B = static_cast<Eigen::Index>(assignment.size());
  DistillBatch batch;
  batch.quad_index = assignment;
  std::vector<Environment> envs;
  std::vector<Rng> rngs;
  envs.reserve(assignment.size());
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& binding = bindings.at(assignment[static_cast<std::size_t>(b)]);
    envs.emplace_back(binding.params, env_cfg);
    rngs.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(b)));
    envs.back().reset(rngs.back());
  }
  std::vector<bool> live(assignment.size(), true);
  nn::Mat<float> h = student.initial_state(B);
  nn::Mat<float> h_next;

  for (int t = 0; t < cfg.horizon; ++t) {
    nn::Mat<float> obs = nn::Mat<float>::Zero(student.obs_dim(), B);
    nn::Mat<float> labels = nn::Mat<float>::Zero(kActionDim, B);
    nn::Vec<float> mask = nn::Vec<float>::Zero(B);
    for (Eigen::Index b = 0; b < B; ++b) {
      if (!live[static_cast<std::size_t>(b)]) {
        // Padding after termination: repeat the last observation; masked out.
        if (t > 0) {
          obs.col(b) = batch.observations.back().col(b);
          labels.col(b) = batch.labels.back().col(b);
        }
        continue;
      }
      const auto& env = envs[static_cast<std::size_t>(b)];
      obs.col(b) = env.observation().cast<float>();
      const auto& teacher = bindings[assignment[static_cast<std::size_t>(b)]].teacher;
      labels.col(b) = teacher.mean_action(env.teacher_observation().cast<float>());
      mask[b] = 1.0f;
    }
    nn::Mat<float> student_action = student.step(obs, h, h_next);
    h = h_next;
    const nn::Mat<float>& executed = mode == RolloutMode::warmup ? labels : student_action;
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      if (!live[bi]) continue;
      try {
        const auto res = envs[bi].step(MotorCommand(TeacherPolicy::to_motor(executed, b)), rngs[bi]);
        if (res.terminal || res.truncated) live[bi] = false;
      } catch (const SimulationDiverged&) {
        live[bi] = false;
        mask[b] = 0.0f;
      }
    }
    batch.executed.push_back(executed);  // may alias labels: copy before moving
    batch.observations.push_back(std::move(obs));
    batch.labels.push_back(std::move(labels));
    batch.student_actions.push_back(std::move(student_action));
    batch.mask.push_back(std::move(mask));
    if (std::none_of(live.begin(), live.end(), [](bool l) { return l; })) break;
  }
  return batch;
}

class DistillFault : public std::runtime_error {
 public:
  DistillFault(const std::string& what, long sequence) : std::runtime_error(what), sequence_(sequence) {}
  long sequence() const { return sequence_; }

 private:
  long sequence_;
};

/// Gradient of the masked MSE over the batch by truncated BPTT. The hidden
/// state is carried across truncation boundaries without gradient; the first
/// chunk backpropagates into the learnable initial hidden state.
template <typename S>
double bptt_gradient(const PolicyGRU<S>& policy, const std::vector<nn::Mat<S>>& obs,
                     const std::vector<nn::Mat<S>>& labels, const std::vector<nn::Vec<S>>& mask, int truncation,
                     nn::Vec<S>& grad) {
  grad = nn::Vec<S>::Zero(static_cast<Eigen::Index>(policy.num_params()));
  const std::size_t T = obs.size();
  if (T == 0) return 0.0;
  const Eigen::Index B = obs.front().cols();
  double n = 0.0;
  for (const auto& m : mask) n += static_cast<double>(m.sum());
  if (n == 0.0) return 0.0;
  const S inv_n = S(1.0 / n);
  const std::size_t L = truncation > 0 ? static_cast<std::size_t>(truncation) : T;

  double loss = 0.0;
  nn::Mat<S> h = policy.initial_state(B);
  std::vector<typename PolicyGRU<S>::StepCache> caches;
  std::vector<nn::Mat<S>> d_actions;
  for (std::size_t start = 0; start < T; start += L) {
    const std::size_t end = std::min(T, start + L);
    caches.assign(end - start, {});
    d_actions.assign(end - start, {});
    for (std::size_t t = start; t < end; ++t) {
      nn::Mat<S> h_next;
      const nn::Mat<S> a = policy.step(obs[t], h, h_next, &caches[t - start]);
      if (!a.allFinite()) {
        for (Eigen::Index b = 0; b < B; ++b)
          if (!a.col(b).allFinite()) throw DistillFault("non-finite student output", static_cast<long>(b));
      }
      nn::Mat<S> diff = a - labels[t];
      for (Eigen::Index b = 0; b < B; ++b) diff.col(b) *= mask[t][b];
      loss += 0.5 * static_cast<double>(diff.squaredNorm()) / n;  // mask is 0/1
      d_actions[t - start] = diff * inv_n;
      h = std::move(h_next);
    }
    nn::Mat<S> dh = nn::Mat<S>::Zero(policy.hidden(), B);
    for (std::size_t t = end; t-- > start;) policy.step_backward(caches[t - start], d_actions[t - start], dh, grad);
    if (start == 0) policy.initial_hidden_backward(dh, grad);
    if (!grad.allFinite()) {
      for (Eigen::Index b = 0; b < B; ++b)
        if (!dh.col(b).allFinite()) throw DistillFault("non-finite gradient", static_cast<long>(b));
      throw DistillFault("non-finite gradient", -1);
    }
  }
  return loss;
}

/// One optimizer step on the batch. Returns the loss before the step.
inline double bptt_update(StudentPolicy& student, nn::Adam<float>& opt, const DistillBatch& batch,
                          const DistillConfig& cfg) {
  if (batch.steps() == 0 || batch.masked_steps() == 0.0) return 0.0;
  nn::Vec<float> grad;
  const double loss = bptt_gradient(student, batch.observations, batch.labels, batch.mask, cfg.bptt_truncation, grad);
  nn::clip_grad_norm(grad, cfg.grad_clip);
  opt.step(student.params(), grad);
  return loss;
}

struct DistillCurveRow {
  int epoch = 0;
  double loss = 0.0;
  double heldout_episode_length = -1.0;  // negative when not evaluated
  double heldout_rmse = -1.0;
};

struct DistillResult {
  StudentPolicy policy;
  std::vector<DistillCurveRow> curve;
};

struct DistillOptions {
  std::vector<QuadParams> holdout;
  std::uint64_t eval_seed = 0x5eed;
  std::function<void(const DistillCurveRow&)> on_epoch;
};

inline DistillResult distill(const std::vector<TeacherBinding>& bindings, const DistillConfig& cfg, std::uint64_t seed,
                             const DistillOptions& opts = {}, const EnvConfig& env_cfg_in = {}) {
  if (bindings.empty()) throw std::invalid_argument("distill needs at least one teacher");
  if (!cfg.valid()) throw std::invalid_argument("invalid distillation config");
  EnvConfig env_cfg = env_cfg_in;
  env_cfg.horizon = cfg.horizon;

  Rng init_rng(derive_seed(seed, 11));
  Rng assign_rng(derive_seed(seed, 12));
  DistillResult result{StudentPolicy(cfg.hidden), {}};
  result.policy.init(init_rng);
  nn::Adam<float> opt(result.policy.num_params(), cfg.learning_rate);
  std::uniform_int_distribution<std::size_t> pick(0, bindings.size() - 1);
  int faults = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> assignment(static_cast<std::size_t>(cfg.envs_per_epoch));
    for (auto& a : assignment) a = pick(assign_rng);
    const RolloutMode mode = epoch < cfg.warmup_epochs ? RolloutMode::warmup : RolloutMode::onpolicy;
    const DistillBatch batch = rollout_epoch(result.policy, bindings, assignment, mode,
                                             derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)), cfg, env_cfg);
    DistillCurveRow row;
    row.epoch = epoch;
    try {
      row.loss = bptt_update(result.policy, opt, batch, cfg);
      faults = 0;
    } catch (const DistillFault&) {
      if (++faults >= cfg.max_faults) throw;
      row.loss = std::nan("");
    }
    const bool last = epoch + 1 == cfg.epochs;
    if (!opts.holdout.empty() && cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      double len = 0.0, rmse = 0.0;
      for (std::size_t q = 0; q < opts.holdout.size(); ++q) {
        len += evaluate_student(opts.holdout[q], result.policy, cfg.eval_episodes, derive_seed(opts.eval_seed, q), env_cfg)
                   .mean_episode_length;
        if (cfg.eval_fig8) rmse += fly_figure_eight(opts.holdout[q], result.policy, cfg.eval_fig8_cfg, 1, opts.eval_seed).rmse_xy;
      }
      row.heldout_episode_length = len / static_cast<double>(opts.holdout.size());
      if (cfg.eval_fig8) row.heldout_rmse = rmse / static_cast<double>(opts.holdout.size());
    }
    result.curve.push_back(row);
    if (opts.on_epoch) opts.on_epoch(row);
  }
  return result;
}

}  // namespace raptor
