// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"
#include "raptor/distill.hpp"
#include "raptor/sampler.hpp"

#include <gtest/gtest.h>

using namespace raptor;
using nn::Mat;
using nn::Vec;

namespace {

std::vector<TeacherBinding> constant_bindings(int n, double u = -1.0) {
  std::vector<TeacherBinding> out;
  for (const auto& q : sample_fleet(static_cast<std::size_t>(n), 21))
    out.push_back({q.params, fixture::constant_teacher(u < 0.0 ? hover_command(q.params) : u)});
  return out;
}

DistillConfig small_config() {
  DistillConfig cfg;
  cfg.epochs = 30;
  cfg.warmup_epochs = 5;
  cfg.horizon = 60;
  cfg.envs_per_epoch = 6;
  cfg.bptt_truncation = 60;
  cfg.hidden = 4;
  cfg.learning_rate = 1e-2;
  cfg.eval_every = 0;
  return cfg;
}

}  // namespace

TEST(MseLoss, MaskedMeanByHand) {
  std::vector<Mat<double>> s{Mat<double>::Zero(2, 2), Mat<double>::Zero(2, 2)};
  std::vector<Mat<double>> t{Mat<double>::Ones(2, 2), Mat<double>::Constant(2, 2, 2.0)};
  std::vector<Vec<double>> m{Vec<double>::Ones(2), Vec<double>::Zero(2)};
  m[1][0] = 1.0;
  // Masked-in steps: (0,0) and (0,1) with error 2 each, (1,0) with error 8.
  EXPECT_DOUBLE_EQ(mse_loss(s, t, m), 0.5 * (2.0 + 2.0 + 8.0) / 3.0);
  std::vector<Vec<double>> none{Vec<double>::Zero(2), Vec<double>::Zero(2)};
  EXPECT_EQ(mse_loss(s, t, none), 0.0);
}

TEST(Rollout, WarmupExecutesTeacherLabels) {
  const auto bindings = constant_bindings(3);
  const StudentPolicy student = fixture::constant_student(0.5);
  auto cfg = small_config();
  const std::vector<std::size_t> assign{0, 1, 2, 1};
  const auto batch = rollout_epoch(student, bindings, assign, RolloutMode::warmup, 5, cfg);
  ASSERT_GT(batch.steps(), 0u);
  EXPECT_EQ(batch.batch(), 4);
  EXPECT_EQ(batch.quad_index, assign);
  for (std::size_t t = 0; t < batch.steps(); ++t) {
    EXPECT_TRUE(batch.executed[t] == batch.labels[t]);
    for (int b = 0; b < 4; ++b) {
      if (batch.mask[t][b] == 0.0f) continue;
      EXPECT_NEAR(batch.labels[t](0, b), hover_command(bindings[assign[b]].params), 1e-5);
      EXPECT_NEAR(batch.student_actions[t](0, b), 0.5, 1e-6);
      if (t > 0) EXPECT_EQ(batch.mask[t - 1][b], 1.0f);  // once masked out, stays out
    }
  }
}

TEST(Rollout, OnPolicyExecutesStudent) {
  const auto bindings = constant_bindings(2);
  const StudentPolicy student = fixture::constant_student(0.3);
  const auto batch = rollout_epoch(student, bindings, {0, 1}, RolloutMode::onpolicy, 6, small_config());
  EXPECT_TRUE(batch.executed[0] == batch.student_actions[0]);
}

TEST(Rollout, DeterministicInSeed) {
  const auto bindings = constant_bindings(2);
  Rng rng(1);
  StudentPolicy student(4);
  student.init(rng);
  const auto a = rollout_epoch(student, bindings, {0, 1, 0}, RolloutMode::onpolicy, 9, small_config());
  const auto b = rollout_epoch(student, bindings, {0, 1, 0}, RolloutMode::onpolicy, 9, small_config());
  ASSERT_EQ(a.steps(), b.steps());
  for (std::size_t t = 0; t < a.steps(); ++t) EXPECT_EQ(a.observations[t], b.observations[t]);
}

TEST(Distill, LearnsConstantTeachersAndIsReproducible) {
  const auto bindings = constant_bindings(3, 0.4);
  const auto cfg = small_config();
  const auto a = distill(bindings, cfg, 3);
  const auto b = distill(bindings, cfg, 3);
  ASSERT_EQ(a.curve.size(), 30u);
  EXPECT_EQ(a.policy.params(), b.policy.params());
  // Imitation error on a fixed teacher-driven batch, against an untrained student.
  auto error_on_fixed_batch = [&](const StudentPolicy& p) {
    const auto fixed = rollout_epoch(p, bindings, {0, 1, 2, 0, 1, 2}, RolloutMode::warmup, 99, cfg);
    return mse_loss(fixed.student_actions, fixed.labels, fixed.mask);
  };
  Rng rng(3);
  StudentPolicy fresh(cfg.hidden);
  fresh.init(rng);
  const double before = error_on_fixed_batch(fresh), after = error_on_fixed_batch(a.policy);
  std::printf("fixed-batch error: untrained %.3g, trained %.3g\n", before, after);
  EXPECT_LT(after, 0.2 * before);
  const auto c = distill(bindings, cfg, 4);
  EXPECT_NE(a.policy.params(), c.policy.params());
}

TEST(Distill, EvaluatesHeldOutQuadrotors) {
  const auto bindings = constant_bindings(2);
  auto cfg = small_config();
  cfg.epochs = 4;
  cfg.warmup_epochs = 1;
  cfg.eval_every = 2;
  cfg.eval_episodes = 2;
  cfg.eval_fig8 = false;
  DistillOptions opts;
  opts.holdout = {sample_quadrotor(99).params};
  int calls = 0;
  opts.on_epoch = [&](const DistillCurveRow&) { ++calls; };
  const auto r = distill(bindings, cfg, 1, opts);
  EXPECT_EQ(calls, 4);
  EXPECT_LT(r.curve[0].heldout_episode_length, 0.0);
  EXPECT_GT(r.curve[1].heldout_episode_length, 0.0);
  EXPECT_GT(r.curve[3].heldout_episode_length, 0.0);
}

TEST(Distill, RejectsBadInput) {
  EXPECT_THROW(distill({}, small_config(), 1), std::invalid_argument);
  auto cfg = small_config();
  cfg.warmup_epochs = cfg.epochs;
  EXPECT_THROW(distill(constant_bindings(1), cfg, 1), std::invalid_argument);
}

TEST(BpttUpdate, AppliesClippedGradient) {
  const auto bindings = constant_bindings(1);
  const StudentPolicy student = fixture::constant_student(0.9);
  auto cfg = small_config();
  cfg.grad_clip = 1e-3;
  const auto batch = rollout_epoch(student, bindings, {0, 0}, RolloutMode::warmup, 2, cfg);
  Vec<float> grad;
  bptt_gradient(student, batch.observations, batch.labels, batch.mask, cfg.bptt_truncation, grad);
  ASSERT_GT(grad.norm(), cfg.grad_clip);
  StudentPolicy manual = student;
  nn::Adam<float> manual_opt(manual.num_params(), 0.1);
  grad *= static_cast<float>(cfg.grad_clip / grad.norm());
  manual_opt.step(manual.params(), grad);

  StudentPolicy s = student;
  nn::Adam<float> opt(s.num_params(), 0.1);
  bptt_update(s, opt, batch, cfg);
  EXPECT_LT((s.params() - manual.params()).cwiseAbs().maxCoeff(), 1e-6f);
}
