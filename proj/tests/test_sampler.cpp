// SPDX-License-Identifier: Apache-2.0
#include "raptor/sampler.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace raptor;

TEST(Sampler, MidpointDrawsMatchHandArithmetic) {
  SampleTrace roots;
  roots.t2w = 3.25;
  roots.scale = (std::cbrt(0.02) + std::cbrt(5.0)) / 2.0;
  roots.deviation = 0.0;
  roots.t2i = 620.0;
  roots.moment_coeff = 0.0275;
  roots.tau_up = 0.065;
  roots.tau_down = 0.165;
  const auto q = replay_sample(roots);
  EXPECT_NEAR(q.params.mass, 0.9724, 5e-5);
  EXPECT_NEAR(q.trace.max_thrust, 31.00, 5e-3);
  EXPECT_NEAR(q.params.arm_length, 0.1254, 5e-5);
  EXPECT_NEAR(q.params.inertia.x(), 8.87e-3, 5e-6);
  EXPECT_NEAR(q.params.inertia.z(), 1.62e-2, 5e-5);
  EXPECT_EQ(q.params.inertia.x(), q.params.inertia.y());
  // u = 0: no deviation from the reference mass-size ratio.
  EXPECT_DOUBLE_EQ(q.params.arm_length, std::cbrt(q.params.mass) / 7.90);
}

TEST(Sampler, DeviationMapsToPositiveScale) {
  EXPECT_DOUBLE_EQ(mass_size_scale(0.0), 1.0);
  EXPECT_DOUBLE_EQ(mass_size_scale(0.2), 1.2);
  EXPECT_DOUBLE_EQ(mass_size_scale(-0.25), 0.8);
}

TEST(Sampler, ReplayReproducesParams) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto q = sample_quadrotor(seed);
    const auto r = replay_sample(q.trace);
    EXPECT_TRUE(r.params == q.params);
    EXPECT_TRUE(r.trace == q.trace);
  }
}

TEST(Sampler, FleetDeterministicAndDistinct) {
  const auto a = sample_fleet(50, 9);
  const auto b = sample_fleet(50, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].params == b[i].params);
    for (std::size_t j = 0; j < i; ++j) EXPECT_FALSE(a[i].params == a[j].params);
  }
  EXPECT_FALSE(sample_fleet(1, 10)[0].params == a[0].params);
}

TEST(Sampler, HoverCommandInsideUnitInterval) {
  for (const auto& q : sample_fleet(2000, 1)) {
    const double uh = hover_command(q.params);
    ASSERT_GT(uh, 0.0);
    ASSERT_LT(uh, 1.0);
  }
}

// The large-sample statistics (ranges, mass-size ratio moments, cube-root
// uniformity at n = 1e5) run in the acceptance binary; this is a quicker
// version with looser bounds.
TEST(Sampler, StatisticsSmallSample) {
  const SamplerConfig cfg;
  const int n = 20000;
  std::vector<double> s;
  double mean = 0.0, sq = 0.0;
  for (const auto& q : sample_fleet(n, 123)) {
    const auto& t = q.trace;
    ASSERT_TRUE(cfg.t2w.contains(t.t2w));
    ASSERT_TRUE(cfg.mass.contains(t.mass));
    ASSERT_TRUE(cfg.t2i.contains(t.t2i));
    ASSERT_TRUE(cfg.moment_coeff.contains(t.moment_coeff));
    ASSERT_TRUE(cfg.tau_up.contains(t.tau_up));
    ASSERT_TRUE(cfg.tau_down.contains(t.tau_down));
    mean += t.mass_size_ratio / n;
    sq += t.mass_size_ratio * t.mass_size_ratio / n;
    s.push_back(t.scale);
  }
  EXPECT_NEAR(mean, 7.24, 0.05 * 7.24);
  EXPECT_NEAR(std::sqrt(sq - mean * mean), 0.66, 0.05 * 0.66);
  std::sort(s.begin(), s.end());
  const double lo = std::cbrt(0.02), hi = std::cbrt(5.0);
  double ks = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double cdf = (s[i] - lo) / (hi - lo);
    ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LT(ks, 0.02);
}
