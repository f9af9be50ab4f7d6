// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"
#include "raptor/dynamics.hpp"
#include "raptor/sampler.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace raptor;

namespace {

QuadParams test_quad() { return sample_quadrotor(3).params; }

QuadState at_rest(const QuadParams& p, double u) {
  QuadState s;
  s.motor_speeds = {u, u, u, u};
  s.prev_action = s.motor_speeds;
  return s;
}

}  // namespace

TEST(ThrustCurve, Polynomial) {
  const auto p = test_quad();
  const auto& c = p.thrust_coeffs;
  EXPECT_DOUBLE_EQ(thrust_curve(p, 0.0), c[0]);
  EXPECT_DOUBLE_EQ(thrust_curve(p, 0.5), c[0] + 0.5 * c[1] + 0.25 * c[2]);
}

TEST(ThrustCurve, FullCommandUsesPrintedShapeSum) {
  const auto q = sample_quadrotor(11);
  EXPECT_NEAR(thrust_curve(q.params, 1.0), 1.179 * q.trace.max_thrust / 4.0, 1e-12 * q.trace.max_thrust);
}

TEST(ThrustCurve, StrictlyIncreasingForSampledQuads) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = sample_quadrotor(seed).params;
    double prev = thrust_curve(p, 0.0);
    for (int i = 1; i <= 100; ++i) {
      const double f = thrust_curve(p, i / 100.0);
      ASSERT_GT(f, prev);
      prev = f;
    }
  }
}

TEST(Hover, CommandMatchesBisection) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = sample_quadrotor(seed).params;
    const double want = oracle::bisect([&](double u) { return 4.0 * thrust_curve(p, u) - p.mass * kGravity; }, 0.0, 1.0);
    EXPECT_NEAR(hover_command(p), want, 1e-12);
    EXPECT_GT(want, 0.0);
    EXPECT_LT(want, 1.0);
  }
}

TEST(Hover, IsEquilibrium) {
  const auto p = test_quad();
  const double uh = oracle::bisect([&](double u) { return 4.0 * thrust_curve(p, u) - p.mass * kGravity; }, 0.0, 1.0);
  QuadState s = at_rest(p, uh);
  const auto d = dynamics_derivative(s, p);
  EXPECT_LT(d.linear_velocity.norm(), 1e-9);
  EXPECT_LT(d.angular_velocity.norm(), 1e-12);
  for (int i = 0; i < 100; ++i) s = integrate_step(s, p, MotorCommand::uniform(uh), SimConfig{});
  EXPECT_LT(s.linear_velocity.norm(), 1e-6);
  EXPECT_LT(s.angular_velocity.norm(), 1e-12);
}

TEST(MotorLag, ClosedFormSingleStep) {
  QuadParams p = test_quad();
  p.motor_tau_up = 0.05;
  p.motor_tau_down = 0.2;
  auto up = motor_lag_step({0, 0, 0, 0}, MotorCommand::uniform(1.0), p, p.motor_tau_up);
  EXPECT_NEAR(up[0], 1.0 - std::exp(-1.0), 1e-12);
  auto down = motor_lag_step({1, 1, 1, 1}, MotorCommand::uniform(0.0), p, p.motor_tau_down);
  EXPECT_NEAR(down[0], std::exp(-1.0), 1e-12);
  auto same = motor_lag_step({0.3, 0.3, 0.3, 0.3}, MotorCommand::uniform(0.3), p, 0.01);
  EXPECT_EQ(same[0], 0.3);
}

TEST(MotorLag, RepeatedStepsComposeExactly) {
  QuadParams p = test_quad();
  Motor4 w{0.1, 0.9, 0.5, 0.2};
  const double u = 0.6, dt = 0.01;
  for (int n = 0; n < 37; ++n) w = motor_lag_step(w, MotorCommand::uniform(u), p, dt);
  const double t = 37 * dt;
  EXPECT_NEAR(w[0], u + (0.1 - u) * std::exp(-t / p.motor_tau_up), 1e-12);
  EXPECT_NEAR(w[1], u + (0.9 - u) * std::exp(-t / p.motor_tau_down), 1e-12);
}

TEST(Dynamics, FreeFall) {
  QuadParams p = test_quad();
  p.thrust_coeffs = {0.0, 0.0, 1.0};
  QuadState s = at_rest(p, 0.0);
  s.orientation = Quat(Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()));
  EXPECT_LT((dynamics_derivative(s, p).linear_velocity - Vec3(0, 0, -kGravity)).norm(), 1e-15);
  const QuadState n = integrate_step(s, p, MotorCommand::uniform(0.0), SimConfig{});
  EXPECT_NEAR(n.linear_velocity.z(), -0.0981, 1e-12);
  // Constant acceleration: RK4 is exact.
  EXPECT_NEAR(n.position.z(), -0.5 * kGravity * 1e-4, 1e-15);
}

TEST(Dynamics, MixerMatchesPerRotorSummation) {
  const auto p = test_quad();
  const Motor4 f{1.3, 0.4, 2.2, 0.9};
  // Brute force: rotor positions at 45/135/225/315 degrees, thrust along +z,
  // yaw reaction +c_m f for rotors 0 and 2, -c_m f for 1 and 3.
  Vec3 tau = Vec3::Zero();
  for (int i = 0; i < 4; ++i) {
    const double az = (45.0 + 90.0 * i) * std::numbers::pi / 180.0;
    const Vec3 r(p.arm_length * std::cos(az), p.arm_length * std::sin(az), 0.0);
    tau += r.cross(Vec3(0, 0, f[i]));
    tau.z() += (i % 2 == 0 ? 1.0 : -1.0) * p.moment_coeff * f[i];
  }
  EXPECT_LT((body_torque(p, f) - tau).norm(), 1e-12);
}

TEST(Dynamics, DiagonalPairProducesPureYaw) {
  const auto p = test_quad();
  QuadState s = at_rest(p, 0.0);
  s.motor_speeds = {1.0, 0.0, 1.0, 0.0};
  const auto d = dynamics_derivative(s, p);
  const double f1 = thrust_curve(p, 1.0), f0 = thrust_curve(p, 0.0);
  EXPECT_NEAR(d.angular_velocity.z(), p.moment_coeff * 2.0 * (f1 - f0) / p.inertia.z(), 1e-9);
  EXPECT_NEAR(d.angular_velocity.x(), 0.0, 1e-12);
  EXPECT_NEAR(d.angular_velocity.y(), 0.0, 1e-12);
}

TEST(Dynamics, NoYawCoefficientEqualThrustIsTorqueFree) {
  QuadParams p = test_quad();
  p.moment_coeff = 0.0;
  const auto d = dynamics_derivative(at_rest(p, 0.7), p);
  EXPECT_EQ(d.angular_velocity, Vec3::Zero());
}

TEST(Integrate, QuaternionStaysNormalized) {
  const auto p = test_quad();
  QuadState s = at_rest(p, 0.5);
  s.angular_velocity = Vec3(3.0, -2.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    s = integrate_step(s, p, MotorCommand({0.9, 0.1, 0.5, 0.3}), SimConfig{});
    ASSERT_NEAR(s.orientation.norm(), 1.0, 1e-9);
    for (double w : s.motor_speeds) ASSERT_TRUE(w >= 0.0 && w <= 1.0);
  }
  EXPECT_EQ(s.prev_action, (Motor4{0.9, 0.1, 0.5, 0.3}));
}

TEST(Integrate, CommandIsClamped) {
  const MotorCommand c({-0.5, 1.5, 0.25, 1.0});
  EXPECT_EQ(c.u, (Motor4{0.0, 1.0, 0.25, 1.0}));
}

TEST(Integrate, Deterministic) {
  const auto p = test_quad();
  QuadState s = at_rest(p, 0.4);
  s.angular_velocity = Vec3(1, 2, 3);
  const auto a = integrate_step(s, p, MotorCommand({0.2, 0.4, 0.6, 0.8}), SimConfig{});
  const auto b = integrate_step(s, p, MotorCommand({0.2, 0.4, 0.6, 0.8}), SimConfig{});
  EXPECT_TRUE(a == b);
}

TEST(Integrate, EulerSubstepsConvergeToRk4) {
  // Smooth rotation with gyroscopic coupling; motors held at their current speed.
  QuadParams p = test_quad();
  QuadState s = at_rest(p, 0.5);
  s.angular_velocity = Vec3(4.0, -3.0, 2.0);
  s.linear_velocity = Vec3(0.5, 0.0, -0.3);
  SimConfig rk4;
  rk4.dt = 0.02;
  const auto ref = integrate_step(s, p, MotorCommand::uniform(0.5), rk4);
  auto euler = [&](int n) {
    SimConfig c;
    c.dt = rk4.dt / n;
    c.integrator = Integrator::euler;
    QuadState x = s;
    for (int i = 0; i < n; ++i) x = integrate_step(x, p, MotorCommand::uniform(0.5), c);
    return (x.angular_velocity - ref.angular_velocity).norm() + (x.position - ref.position).norm();
  };
  const double e1 = euler(1), e4 = euler(4), e16 = euler(16);
  EXPECT_LT(e4, 0.4 * e1);
  EXPECT_LT(e16, 0.4 * e4);  // first order: about 1/4 per 4x refinement
}

TEST(Integrate, DivergenceIsReported) {
  const auto p = test_quad();
  QuadState s = at_rest(p, 0.5);
  s.linear_velocity.x() = std::numeric_limits<double>::infinity();
  EXPECT_THROW(integrate_step(s, p, MotorCommand::uniform(0.5), SimConfig{}), SimulationDiverged);
}
