// SPDX-License-Identifier: Apache-2.0
//
// Soft actor-critic for per-quadrotor teacher policies. The teacher sees the
// full state (student observation plus motor speeds) and outputs a
// tanh-squashed Gaussian mapped affinely to [0, 1]^4.
#pragma once

#include "raptor/env.hpp"
#include "raptor/nn.hpp"
#include "raptor/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace raptor {

struct SacConfig {
  double gamma = 0.99;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  int batch_size = 256;
  double polyak = 5e-3;
  double target_entropy = -4.0;
  double initial_alpha = 1.0;
  long warmup_steps = 10000;
  long total_steps = 200000;
  std::size_t buffer_capacity = 1000000;
  int hidden = 64;
  int updates_per_step = 1;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  nn::Activation activation = nn::Activation::relu;
};

/// Raised when a loss or gradient becomes non-finite.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed-capacity FIFO ring buffer of teacher transitions (float storage).
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim = kTeacherObsDim, int act_dim = kActionDim)
      : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
    if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  }

  struct Batch {
    nn::Mat<float> obs;       // obs_dim x B
    nn::Mat<float> action;    // act_dim x B
    nn::Vec<float> reward;    // B
    nn::Mat<float> next_obs;  // obs_dim x B
    nn::Vec<float> terminal;  // B, 1 for terminal transitions
  };

  template <typename ObsVec>
  void add(const ObsVec& obs, const Motor4& action, double reward, const ObsVec& next_obs, bool is_terminal) {
    if (obs_.size() == 0) {
      // Storage grows up to capacity so short runs don't reserve the full buffer.
      reserve_ = std::min<std::size_t>(capacity_, 4096);
      resize_storage(reserve_);
    }
    if (count_ < capacity_ && head_ >= reserve_) {
      reserve_ = std::min(capacity_, reserve_ * 2);
      resize_storage(reserve_);
    }
    const auto col = static_cast<Eigen::Index>(head_);
    for (int i = 0; i < obs_dim_; ++i) {
      obs_(i, col) = static_cast<float>(obs[i]);
      next_obs_(i, col) = static_cast<float>(next_obs[i]);
    }
    for (int i = 0; i < act_dim_; ++i) action_(i, col) = static_cast<float>(action[static_cast<std::size_t>(i)]);
    reward_[col] = static_cast<float>(reward);
    terminal_[col] = is_terminal ? 1.0f : 0.0f;
    head_ = (head_ + 1) % capacity_;
    count_ = std::min(count_ + 1, capacity_);
  }

  std::size_t size() const { return count_; }
  std::size_t capacity() const { return capacity_; }

  /// Uniform sample of `n` distinct transitions (Floyd's algorithm).
  Batch sample(std::size_t n, Rng& rng) const {
    if (n > count_) throw std::invalid_argument("replay buffer holds fewer transitions than the batch size");
    std::vector<std::size_t> idx;
    idx.reserve(n);
    for (std::size_t j = count_ - n; j < count_; ++j) {
      const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
      if (std::find(idx.begin(), idx.end(), t) == idx.end()) {
        idx.push_back(t);
      } else {
        idx.push_back(j);
      }
    }
    Batch b;
    const auto bn = static_cast<Eigen::Index>(n);
    b.obs.resize(obs_dim_, bn);
    b.next_obs.resize(obs_dim_, bn);
    b.action.resize(act_dim_, bn);
    b.reward.resize(bn);
    b.terminal.resize(bn);
    for (Eigen::Index k = 0; k < bn; ++k) {
      const auto c = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(k)]);
      b.obs.col(k) = obs_.col(c);
      b.next_obs.col(k) = next_obs_.col(c);
      b.action.col(k) = action_.col(c);
      b.reward[k] = reward_[c];
      b.terminal[k] = terminal_[c];
    }
    return b;
  }

 private:
  void resize_storage(std::size_t n) {
    const auto cols = static_cast<Eigen::Index>(n);
    obs_.conservativeResize(obs_dim_, cols);
    next_obs_.conservativeResize(obs_dim_, cols);
    action_.conservativeResize(act_dim_, cols);
    reward_.conservativeResize(cols);
    terminal_.conservativeResize(cols);
  }

  std::size_t capacity_;
  int obs_dim_;
  int act_dim_;
  std::size_t reserve_ = 0;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  nn::Mat<float> obs_, next_obs_, action_;
  nn::Vec<float> reward_, terminal_;
};

/// Squashed-Gaussian actor. The network emits (mean, log_std) for the
/// pre-squash variable x; actions are a = (tanh(x) + 1) / 2.
template <typename S>
class SquashedGaussianActor {
 public:
  SquashedGaussianActor() = default;
  SquashedGaussianActor(int obs_dim, int hidden, int act_dim, nn::Activation act, double log_std_min = -20.0,
                        double log_std_max = 2.0)
      : net_({obs_dim, hidden, hidden, 2 * act_dim}, act, nn::Activation::identity), act_dim_(act_dim),
        log_std_min_(log_std_min), log_std_max_(log_std_max) {}

  explicit SquashedGaussianActor(nn::Mlp<S> net, double log_std_min = -20.0, double log_std_max = 2.0)
      : net_(std::move(net)), act_dim_(net_.output_dim() / 2), log_std_min_(log_std_min), log_std_max_(log_std_max) {}

  nn::Mlp<S>& net() { return net_; }
  const nn::Mlp<S>& net() const { return net_; }
  int action_dim() const { return act_dim_; }
  double log_std_min() const { return log_std_min_; }
  double log_std_max() const { return log_std_max_; }

  /// Deterministic action: squashed mean.
  nn::Mat<S> mean_action(const nn::Mat<S>& obs) const {
    const nn::Mat<S> out = net_.forward(obs);
    return ((out.topRows(act_dim_).array().tanh() + S(1)) * S(0.5)).matrix();
  }

  struct Sample {
    nn::Mat<S> action;    // act_dim x B in [0,1]
    nn::Vec<S> log_prob;  // B
    nn::Mat<S> squashed;  // tanh(x)
    nn::Mat<S> noise;     // epsilon
    nn::Mat<S> std;
    nn::Mat<S> log_std_raw;  // before clamping
    typename nn::Mlp<S>::Cache cache;
  };

  static constexpr double kSquashEps = 1e-6;

  /// Reparameterized sample with given standard-normal noise.
  Sample sample_with_noise(const nn::Mat<S>& obs, const nn::Mat<S>& noise, bool keep_cache) const {
    Sample s;
    const nn::Mat<S> out = net_.forward(obs, keep_cache ? &s.cache : nullptr);
    const nn::Mat<S> mean = out.topRows(act_dim_);
    s.log_std_raw = out.bottomRows(act_dim_);
    const nn::Mat<S> log_std = s.log_std_raw.cwiseMax(S(log_std_min_)).cwiseMin(S(log_std_max_));
    s.std = log_std.array().exp().matrix();
    s.noise = noise;
    const nn::Mat<S> x = mean + s.std.cwiseProduct(noise);
    s.squashed = x.array().tanh().matrix();
    s.action = ((s.squashed.array() + S(1)) * S(0.5)).matrix();
    const S half_log_2pi = S(0.5 * std::log(2.0 * std::numbers::pi));
    const S log2 = S(std::log(2.0));
    s.log_prob.resize(obs.cols());
    for (Eigen::Index b = 0; b < obs.cols(); ++b) {
      S lp = 0;
      for (int i = 0; i < act_dim_; ++i) {
        const S e = noise(i, b);
        const S y = s.squashed(i, b);
        // log N(x; mu, sigma) - log|d tanh / dx| - log|d a / d y|
        lp += -S(0.5) * e * e - log_std(i, b) - half_log_2pi - std::log(S(1) - y * y + S(kSquashEps)) + log2;
      }
      s.log_prob[b] = lp;
    }
    return s;
  }

  template <typename Gen>
  Sample sample(const nn::Mat<S>& obs, Gen& rng, bool keep_cache) const {
    nn::Mat<S> noise(act_dim_, obs.cols());
    std::normal_distribution<double> n01;
    for (Eigen::Index j = 0; j < noise.cols(); ++j)
      for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, j) = static_cast<S>(n01(rng));
    return sample_with_noise(obs, noise, keep_cache);
  }

  /// Backpropagates a loss given dL/da and dL/dlog_prob per sample into the
  /// actor parameters.
  void backward(const Sample& s, const nn::Mat<S>& d_action, const nn::Vec<S>& d_log_prob, nn::Vec<S>& grad) const {
    const Eigen::Index B = d_action.cols();
    nn::Mat<S> d_out(2 * act_dim_, B);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int i = 0; i < act_dim_; ++i) {
        const S y = s.squashed(i, b);
        const S one_m_y2 = S(1) - y * y;
        // dlogp/dx through the tanh correction term; the Gaussian term is
        // constant in x for fixed noise.
        const S dlogp_dx = S(2) * y * one_m_y2 / (one_m_y2 + S(kSquashEps));
        const S dx = d_action(i, b) * S(0.5) * one_m_y2 + d_log_prob[b] * dlogp_dx;
        d_out(i, b) = dx;
        const S raw = s.log_std_raw(i, b);
        const bool inside = raw >= S(log_std_min_) && raw <= S(log_std_max_);
        d_out(act_dim_ + i, b) = inside ? dx * s.std(i, b) * s.noise(i, b) - d_log_prob[b] : S(0);
      }
    }
    net_.backward(s.cache, d_out, &grad);
  }

 private:
  nn::Mlp<S> net_;
  int act_dim_ = kActionDim;
  double log_std_min_ = -20.0;
  double log_std_max_ = 2.0;
};

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha = 0.0;
  double alpha_value = 0.0;
  double mean_log_prob = 0.0;
};

/// Critic regression targets y = r + gamma (1 - d) (min Q'(s', a') - alpha log pi(a'|s')).
template <typename S>
nn::Vec<S> critic_targets(const nn::Vec<S>& reward, const nn::Vec<S>& terminal, const nn::Vec<S>& next_min_q,
                          const nn::Vec<S>& next_log_prob, double gamma, double alpha) {
  return (reward.array() + S(gamma) * (S(1) - terminal.array()) *
                               (next_min_q.array() - S(alpha) * next_log_prob.array()))
      .matrix();
}

/// Twin-critic soft actor-critic learner.
template <typename S = float>
class SacAgent {
 public:
  SacAgent(const SacConfig& cfg, Rng& init_rng, int obs_dim = kTeacherObsDim, int act_dim = kActionDim)
      : cfg_(cfg), actor_(obs_dim, cfg.hidden, act_dim, cfg.activation, cfg.log_std_min, cfg.log_std_max),
        log_alpha_(std::log(cfg.initial_alpha)) {
    actor_.net().init(init_rng);
    for (auto& c : critics_) {
      c = nn::Mlp<S>({obs_dim + act_dim, cfg.hidden, cfg.hidden, 1}, cfg.activation, nn::Activation::identity);
      c.init(init_rng);
    }
    targets_ = critics_;
    actor_opt_ = nn::Adam<S>(actor_.net().num_params(), cfg.actor_lr);
    for (int i = 0; i < 2; ++i) critic_opt_[i] = nn::Adam<S>(critics_[i].num_params(), cfg.critic_lr);
    alpha_opt_ = nn::Adam<double>(1, cfg.alpha_lr);
  }

  const SquashedGaussianActor<S>& actor() const { return actor_; }
  SquashedGaussianActor<S>& actor() { return actor_; }
  const std::array<nn::Mlp<S>, 2>& critics() const { return critics_; }
  std::array<nn::Mlp<S>, 2>& critics() { return critics_; }
  const std::array<nn::Mlp<S>, 2>& targets() const { return targets_; }
  double alpha() const { return std::exp(log_alpha_); }

  static nn::Mat<S> concat(const nn::Mat<S>& obs, const nn::Mat<S>& action) {
    nn::Mat<S> x(obs.rows() + action.rows(), obs.cols());
    x.topRows(obs.rows()) = obs;
    x.bottomRows(action.rows()) = action;
    return x;
  }

  SacLosses update(const ReplayBuffer::Batch& batch_f, Rng& rng) {
    const nn::Mat<S> obs = batch_f.obs.template cast<S>();
    const nn::Mat<S> next_obs = batch_f.next_obs.template cast<S>();
    const nn::Mat<S> action = batch_f.action.template cast<S>();
    const nn::Vec<S> reward = batch_f.reward.template cast<S>();
    const nn::Vec<S> term = batch_f.terminal.template cast<S>();
    const Eigen::Index B = obs.cols();
    const double alpha = this->alpha();
    SacLosses losses;
    losses.alpha_value = alpha;

    // Critics.
    const auto next = actor_.sample(next_obs, rng, false);
    const nn::Mat<S> next_in = concat(next_obs, next.action);
    const nn::Mat<S> q1n = targets_[0].forward(next_in);
    const nn::Mat<S> q2n = targets_[1].forward(next_in);
    const nn::Vec<S> next_min = q1n.cwiseMin(q2n).transpose();
    const nn::Vec<S> y = critic_targets<S>(reward, term, next_min, next.log_prob, cfg_.gamma, alpha);

    const nn::Mat<S> in = concat(obs, action);
    for (int i = 0; i < 2; ++i) {
      typename nn::Mlp<S>::Cache cache;
      const nn::Mat<S> q = critics_[i].forward(in, &cache);
      const nn::Mat<S> diff = q - y.transpose();
      losses.critic += 0.5 * static_cast<double>(diff.squaredNorm()) / static_cast<double>(B);
      nn::Vec<S> grad = nn::Vec<S>::Zero(static_cast<Eigen::Index>(critics_[i].num_params()));
      critics_[i].backward(cache, diff / S(B), &grad);
      if (!grad.allFinite()) throw TrainingFault("non-finite critic gradient");
      critic_opt_[i].step(critics_[i].params(), grad);
    }

    // Actor.
    auto cur = actor_.sample(obs, rng, true);
    const nn::Mat<S> cur_in = concat(obs, cur.action);
    typename nn::Mlp<S>::Cache c1, c2;
    const nn::Mat<S> q1 = critics_[0].forward(cur_in, &c1);
    const nn::Mat<S> q2 = critics_[1].forward(cur_in, &c2);
    nn::Mat<S> d1 = nn::Mat<S>::Zero(1, B), d2 = nn::Mat<S>::Zero(1, B);
    double actor_loss = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
      const bool first = q1(0, b) <= q2(0, b);
      const S qmin = first ? q1(0, b) : q2(0, b);
      (first ? d1 : d2)(0, b) = -S(1) / S(B);
      actor_loss += (alpha * static_cast<double>(cur.log_prob[b]) - static_cast<double>(qmin)) / static_cast<double>(B);
    }
    const nn::Mat<S> din1 = critics_[0].backward(c1, d1, nullptr);
    const nn::Mat<S> din2 = critics_[1].backward(c2, d2, nullptr);
    const auto act_dim = actor_.action_dim();
    const nn::Mat<S> d_action = din1.bottomRows(act_dim) + din2.bottomRows(act_dim);
    const nn::Vec<S> d_log_prob = nn::Vec<S>::Constant(B, S(alpha / static_cast<double>(B)));
    nn::Vec<S> agrad = nn::Vec<S>::Zero(static_cast<Eigen::Index>(actor_.net().num_params()));
    actor_.backward(cur, d_action, d_log_prob, agrad);
    if (!agrad.allFinite() || !std::isfinite(actor_loss)) throw TrainingFault("non-finite actor gradient");
    actor_opt_.step(actor_.net().params(), agrad);
    losses.actor = actor_loss;

    // Temperature.
    const double mean_lp = static_cast<double>(cur.log_prob.template cast<double>().mean());
    losses.mean_log_prob = mean_lp;
    nn::Vec<double> la(1), lg(1);
    la[0] = log_alpha_;
    lg[0] = -(mean_lp + cfg_.target_entropy);
    losses.alpha = -log_alpha_ * (mean_lp + cfg_.target_entropy);
    alpha_opt_.step(la, lg);
    log_alpha_ = la[0];

    // Target averaging.
    for (int i = 0; i < 2; ++i)
      targets_[i].params() = S(1 - cfg_.polyak) * targets_[i].params() + S(cfg_.polyak) * critics_[i].params();
    if (!std::isfinite(losses.critic)) throw TrainingFault("non-finite critic loss");
    return losses;
  }

 private:
  SacConfig cfg_;
  SquashedGaussianActor<S> actor_;
  std::array<nn::Mlp<S>, 2> critics_;
  std::array<nn::Mlp<S>, 2> targets_;
  nn::Adam<S> actor_opt_;
  std::array<nn::Adam<S>, 2> critic_opt_;
  nn::Adam<double> alpha_opt_;
  double log_alpha_;
};

/// Deterministic teacher policy used for evaluation and as a label source.
class TeacherPolicy {
 public:
  TeacherPolicy() = default;
  explicit TeacherPolicy(nn::Mlp<float> net) : net_(std::move(net)) {}

  const nn::Mlp<float>& net() const { return net_; }

  Motor4 act(const TeacherObservation& obs) const {
    const nn::Mat<float> x = obs.cast<float>();
    return to_motor(mean_action(x), 0);
  }

  /// Batched deterministic actions for teacher observations stored as columns.
  nn::Mat<float> mean_action(const nn::Mat<float>& obs) const {
    const nn::Mat<float> out = net_.forward(obs);
    return ((out.topRows(kActionDim).array().tanh() + 1.0f) * 0.5f).matrix();
  }

  static Motor4 to_motor(const nn::Mat<float>& a, Eigen::Index col) {
    Motor4 m{};
    for (int i = 0; i < kActionDim; ++i) m[static_cast<std::size_t>(i)] = static_cast<double>(a(i, col));
    return m;
  }

 private:
  nn::Mlp<float> net_;
};

struct TeacherCheckpoint {
  nn::Mlp<float> actor;
  std::string params_id;
  long training_steps = 0;
  double final_mean_episode_length = 0.0;
  bool completed = true;
  std::string fault;  // non-empty if training aborted
};

struct LearningCurvePoint {
  long step = 0;
  double episode_return = 0.0;
  int episode_length = 0;
};

struct TeacherTrainingResult {
  TeacherCheckpoint checkpoint;
  std::vector<LearningCurvePoint> curve;
};

struct EvalSummary {
  double mean_episode_length = 0.0;
  double mean_return = 0.0;
  std::vector<int> lengths;
};

/// Runs `episodes` deterministic-policy episodes from fixed-seed resets.
template <typename Policy>
EvalSummary evaluate_episodes(const QuadParams& params, const Policy& policy, int episodes, std::uint64_t seed,
                              const EnvConfig& env_cfg = {}) {
  EvalSummary sum;
  for (int e = 0; e < episodes; ++e) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
    Environment env(params, env_cfg);
    env.reset(rng);
    double ret = 0.0;
    while (!env.done()) {
      const auto res = env.step(MotorCommand(policy.act(env.teacher_observation())), rng);
      ret += res.reward;
    }
    sum.lengths.push_back(env.steps());
    sum.mean_episode_length += env.steps() / static_cast<double>(episodes);
    sum.mean_return += ret / episodes;
  }
  return sum;
}

struct TeacherTrainOptions {
  int final_eval_episodes = 32;
  std::uint64_t eval_seed = 0xe5a1;
  std::function<void(long step, const LearningCurvePoint&)> on_episode;
};

/// Trains one teacher with SAC on the given quadrotor. Deterministic in `seed`.
inline TeacherTrainingResult train_teacher(const QuadParams& params, const SacConfig& cfg, std::uint64_t seed,
                                           const EnvConfig& env_cfg = {}, const TeacherTrainOptions& opts = {}) {
  Rng init_rng(derive_seed(seed, 1));
  Rng env_rng(derive_seed(seed, 2));
  Rng act_rng(derive_seed(seed, 3));
  Rng update_rng(derive_seed(seed, 4));

  SacAgent<float> agent(cfg, init_rng);
  ReplayBuffer buffer(std::min<std::size_t>(cfg.buffer_capacity, static_cast<std::size_t>(std::max(1L, cfg.total_steps))));
  TeacherTrainingResult result;
  Environment env(params, env_cfg);
  env.reset(env_rng);
  double ep_return = 0.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  long step = 0;
  try {
    for (; step < cfg.total_steps; ++step) {
      const TeacherObservation obs = env.teacher_observation();
      Motor4 a{};
      if (step < cfg.warmup_steps) {
        for (auto& x : a) x = unit(act_rng);
      } else {
        const nn::Mat<float> o = obs.cast<float>();
        const auto s = agent.actor().sample(o, act_rng, false);
        a = TeacherPolicy::to_motor(s.action, 0);
      }
      const StepResult res = env.step(MotorCommand(a), env_rng);
      buffer.add(obs, a, res.reward, env.teacher_observation(), res.terminal);
      ep_return += res.reward;
      if (env.done()) {
        LearningCurvePoint p{step + 1, ep_return, env.steps()};
        result.curve.push_back(p);
        if (opts.on_episode) opts.on_episode(step + 1, p);
        env.reset(env_rng);
        ep_return = 0.0;
      }
      if (step + 1 >= cfg.warmup_steps && buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
        for (int u = 0; u < cfg.updates_per_step; ++u)
          agent.update(buffer.sample(static_cast<std::size_t>(cfg.batch_size), update_rng), update_rng);
      }
    }
  } catch (const std::exception& e) {
    result.checkpoint.completed = false;
    result.checkpoint.fault = e.what();
  }

  result.checkpoint.actor = agent.actor().net();
  result.checkpoint.training_steps = step;
  if (opts.final_eval_episodes > 0) {
    const TeacherPolicy policy(result.checkpoint.actor);
    result.checkpoint.final_mean_episode_length =
        evaluate_episodes(params, policy, opts.final_eval_episodes, opts.eval_seed, env_cfg).mean_episode_length;
  }
  return result;
}

}  // namespace raptor
