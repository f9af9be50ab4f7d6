// SPDX-License-Identifier: Apache-2.0
//
// Analytic-vs-finite-difference gradient comparisons in double precision,
// shared by the acceptance runner. Each returns the relative error.
#pragma once

#include "oracles.hpp"
#include "raptor/distill.hpp"
#include "raptor/sac.hpp"

namespace gradcheck {

using raptor::nn::Mat;
using raptor::nn::Vec;

inline Mat<double> random_mat(int rows, int cols, raptor::Rng& rng) {
  Mat<double> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = raptor::normal(rng);
  return m;
}

/// Full student BPTT (no truncation) on a masked batch.
inline double student_bptt(int hidden, int steps, std::uint64_t seed) {
  using raptor::PolicyGRU;
  const int O = raptor::kObsDim, A = raptor::kActionDim, B = 3;
  raptor::Rng rng(seed);
  PolicyGRU<double> p(hidden, O, A);
  for (Eigen::Index i = 0; i < p.params().size(); ++i) p.params()[i] = 0.5 * raptor::normal(rng);
  std::vector<Mat<double>> obs(steps), labels(steps);
  std::vector<Vec<double>> mask(steps);
  for (int t = 0; t < steps; ++t) {
    obs[t] = random_mat(O, B, rng);
    labels[t] = (random_mat(A, B, rng).array().tanh() * 0.5 + 0.5).matrix();
    mask[t] = Vec<double>::Ones(B);
    if (t >= steps * 2 / 3) mask[t][2] = 0.0;
  }
  Vec<double> grad;
  raptor::bptt_gradient(p, obs, labels, mask, steps, grad);
  auto loss = [&](const PolicyGRU<double>& q) {
    Mat<double> h = q.initial_state(B), hn;
    double acc = 0.0, n = 0.0;
    for (int t = 0; t < steps; ++t) {
      const Mat<double> a = q.step(obs[t], h, hn);
      h = hn;
      for (int b = 0; b < B; ++b) {
        acc += mask[t][b] * (a.col(b) - labels[t].col(b)).squaredNorm();
        n += mask[t][b];
      }
    }
    return 0.5 * acc / n;
  };
  const Eigen::VectorXd fd = oracle::fd_gradient(
      [&](const Eigen::VectorXd& v) {
        PolicyGRU<double> q = p;
        q.params() = v;
        return loss(q);
      },
      p.params());
  return oracle::rel_error(grad, fd);
}

/// Critic regression loss 0.5 * mean (Q - y)^2.
inline double critic_loss(std::uint64_t seed) {
  raptor::Rng rng(seed);
  raptor::nn::Mlp<double> q({7, 10, 10, 1}, raptor::nn::Activation::relu, raptor::nn::Activation::identity);
  q.init(rng);
  const int B = 9;
  const Mat<double> in = random_mat(7, B, rng);
  const Vec<double> y = random_mat(B, 1, rng).col(0);
  typename raptor::nn::Mlp<double>::Cache cache;
  const Mat<double> out = q.forward(in, &cache);
  Vec<double> grad = Vec<double>::Zero(static_cast<Eigen::Index>(q.num_params()));
  q.backward(cache, (out - y.transpose()) / B, &grad);
  const Eigen::VectorXd fd = oracle::fd_gradient(
      [&](const Eigen::VectorXd& v) {
        raptor::nn::Mlp<double> n = q;
        n.params() = v;
        return 0.5 * (n.forward(in).transpose() - y).squaredNorm() / B;
      },
      q.params());
  return oracle::rel_error(grad, fd);
}

/// Actor objective mean(alpha * log pi - min(Q1, Q2)) through the squashed
/// Gaussian, assembled the way the learner does it.
inline double actor_loss(std::uint64_t seed) {
  using raptor::SquashedGaussianActor;
  raptor::Rng rng(seed);
  const int obs_dim = 5, act_dim = 3, B = 8;
  const double alpha = 0.3;
  SquashedGaussianActor<double> actor(obs_dim, 8, act_dim, raptor::nn::Activation::tanh);
  actor.net().init(rng);
  std::array<raptor::nn::Mlp<double>, 2> q;
  for (auto& c : q) {
    c = raptor::nn::Mlp<double>({obs_dim + act_dim, 8, 1}, raptor::nn::Activation::tanh, raptor::nn::Activation::identity);
    c.init(rng);
  }
  const Mat<double> obs = random_mat(obs_dim, B, rng);
  const Mat<double> noise = random_mat(act_dim, B, rng);
  auto objective = [&](const SquashedGaussianActor<double>& a) {
    const auto s = a.sample_with_noise(obs, noise, false);
    const Mat<double> in = raptor::SacAgent<double>::concat(obs, s.action);
    const Mat<double> qmin = q[0].forward(in).cwiseMin(q[1].forward(in));
    return (alpha * s.log_prob.transpose() - qmin).sum() / B;
  };
  const auto s = actor.sample_with_noise(obs, noise, true);
  const Mat<double> in = raptor::SacAgent<double>::concat(obs, s.action);
  typename raptor::nn::Mlp<double>::Cache c1, c2;
  const Mat<double> q1 = q[0].forward(in, &c1), q2 = q[1].forward(in, &c2);
  Mat<double> d1 = Mat<double>::Zero(1, B), d2 = Mat<double>::Zero(1, B);
  for (int b = 0; b < B; ++b) (q1(0, b) <= q2(0, b) ? d1 : d2)(0, b) = -1.0 / B;
  const Mat<double> d_action =
      q[0].backward(c1, d1, nullptr).bottomRows(act_dim) + q[1].backward(c2, d2, nullptr).bottomRows(act_dim);
  Vec<double> grad = Vec<double>::Zero(static_cast<Eigen::Index>(actor.net().num_params()));
  actor.backward(s, d_action, Vec<double>::Constant(B, alpha / B), grad);
  const Eigen::VectorXd fd = oracle::fd_gradient(
      [&](const Eigen::VectorXd& v) {
        SquashedGaussianActor<double> a = actor;
        a.net().params() = v;
        return objective(a);
      },
      actor.net().params());
  return oracle::rel_error(grad, fd);
}

}  // namespace gradcheck
