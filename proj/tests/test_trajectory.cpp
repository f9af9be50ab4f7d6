// SPDX-License-Identifier: Apache-2.0
#include "raptor/trajectory.hpp"

#include <gtest/gtest.h>

using namespace raptor;

TEST(Langevin, FixedPointWithoutNoise) {
  LangevinConfig cfg;
  cfg.sigma = 0.0;
  Rng rng(1);
  ReferenceState r;
  for (int i = 0; i < 100; ++i) r = langevin_step(r, cfg, 0.01, rng);
  EXPECT_EQ(r.position, Vec3::Zero());
  EXPECT_EQ(r.velocity, Vec3::Zero());
}

TEST(Langevin, DampedOscillationWithoutNoise) {
  // k = 1, gamma = 1: x(t) = e^{-t/2} (cos(wt) + sin(wt) / (2w)), w = sqrt(3)/2.
  LangevinConfig cfg;
  cfg.sigma = 0.0;
  Rng rng(1);
  ReferenceState r;
  r.position = Vec3(1, 0, 0);
  const double dt = 1e-4, w = std::sqrt(3.0) / 2.0;
  for (int i = 1; i <= 30000; ++i) {
    r = langevin_step(r, cfg, dt, rng);
    if (i % 5000 == 0) {
      const double t = i * dt;
      EXPECT_NEAR(r.position.x(), std::exp(-t / 2) * (std::cos(w * t) + std::sin(w * t) / (2 * w)), 2e-3);
      EXPECT_LE(std::abs(r.position.x()), std::exp(-t / 2) * 1.2 + 1e-3);
    }
  }
}

TEST(Langevin, StationaryVelocitySpread) {
  const LangevinConfig cfg;
  Rng rng(7);
  ReferenceState r;
  const int n = 1000000, burn = 10000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n + burn; ++i) {
    r = langevin_step(r, cfg, 0.01, rng);
    if (i >= burn) {
      sum += r.velocity.x();
      sq += r.velocity.x() * r.velocity.x();
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sd, cfg.sigma / std::sqrt(2.0 * cfg.damping), 0.1 * cfg.sigma / std::sqrt(2.0 * cfg.damping));
}

TEST(Langevin, ClampZeroesVelocityAndStaysContinuous) {
  LangevinConfig cfg;
  cfg.clamp = 0.05;
  cfg.sigma = 2.0;
  Rng rng(3);
  ReferenceState r;
  for (int i = 0; i < 20000; ++i) {
    const ReferenceState n = langevin_step(r, cfg, 0.01, rng);
    ASSERT_LE(n.position.cwiseAbs().maxCoeff(), cfg.clamp);
    ASSERT_LE((n.position - r.position).cwiseAbs().maxCoeff(), r.velocity.cwiseAbs().maxCoeff() * 0.01 + 1e-15);
    for (int k = 0; k < 3; ++k)
      if (std::abs(n.position[k]) == cfg.clamp && std::abs(r.position[k] + r.velocity[k] * 0.01) > cfg.clamp)
        ASSERT_EQ(n.velocity[k], 0.0);
    r = n;
  }
}

TEST(Tasks, MixtureIsBalanced) {
  Rng rng(5);
  int null = 0;
  for (int i = 0; i < 10000; ++i) null += sample_task(rng) == TaskKind::null_trajectory;
  EXPECT_NEAR(null / 10000.0, 0.5, 0.02);
}

TEST(Tasks, NullReferenceStaysAtOrigin) {
  auto ref = ReferenceTrajectory::null();
  Rng rng(1);
  for (int i = 0; i < 100; ++i) ref.advance(0.01, rng);
  EXPECT_EQ(ref.current().position, Vec3::Zero());
  EXPECT_EQ(ref.current().velocity, Vec3::Zero());
}

TEST(Tasks, NoiselessLangevinFromOriginIsNull) {
  LangevinConfig cfg;
  cfg.sigma = 0.0;
  auto ref = ReferenceTrajectory::langevin(Vec3::Zero(), cfg);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) ref.advance(0.01, rng);
  EXPECT_EQ(ref.current().position, Vec3::Zero());
}

TEST(FigureEight, StartsAtRestAtOrigin) {
  const Fig8Config cfg;
  const auto r = lissajous_figure_eight(cfg, 0.0);
  EXPECT_EQ(r.position, Vec3::Zero());
  EXPECT_EQ(r.velocity, Vec3::Zero());
}

TEST(FigureEight, PeriodicAfterRamp) {
  const Fig8Config cfg;
  EXPECT_LT((lissajous_figure_eight(cfg, cfg.period + cfg.ramp).position - lissajous_figure_eight(cfg, cfg.ramp).position).norm(), 1e-9);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double t = uniform(rng, cfg.ramp, 5 * cfg.period);
    const auto a = lissajous_figure_eight(cfg, t), b = lissajous_figure_eight(cfg, t + cfg.period);
    ASSERT_LT((a.position - b.position).norm(), 1e-9);
    ASSERT_LT((a.velocity - b.velocity).norm(), 1e-9);
  }
}

TEST(FigureEight, VelocityIsDerivativeOfPosition) {
  Fig8Config cfg;
  cfg.period = 7.0;
  Rng rng(4);
  const double h = 1e-6;
  for (int i = 0; i < 1000; ++i) {
    const double t = uniform(rng, h, 30.0);
    const Vec3 fd = (lissajous_figure_eight(cfg, t + h).position - lissajous_figure_eight(cfg, t - h).position) / (2 * h);
    const Vec3 v = lissajous_figure_eight(cfg, t).velocity;
    ASSERT_LE((fd - v).norm(), 1e-6 * std::max(1.0, v.norm())) << "t=" << t;
  }
}

TEST(FigureEight, HorizontalOneToTwoShape) {
  Fig8Config cfg;
  cfg.ramp = 0.0;
  const auto q = lissajous_figure_eight(cfg, cfg.period / 4.0);
  EXPECT_NEAR(q.position.x(), cfg.amplitude_x, 1e-12);
  EXPECT_NEAR(q.position.y(), 0.0, 1e-12);
  EXPECT_EQ(q.position.z(), 0.0);
}

TEST(FigureEight, ShiftedTrajectoryKeepsShape) {
  const Fig8Config cfg;
  auto a = ReferenceTrajectory::figure_eight(cfg);
  auto b = ReferenceTrajectory::figure_eight(cfg, Vec3(1, 2, 3));
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    a.advance(0.01, rng);
    b.advance(0.01, rng);
  }
  EXPECT_LT((b.current().position - a.current().position - Vec3(1, 2, 3)).norm(), 1e-12);
  EXPECT_EQ(a.current().velocity, b.current().velocity);
}
