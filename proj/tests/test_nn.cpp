// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"
#include "raptor/nn.hpp"

#include <gtest/gtest.h>

using namespace raptor;
using nn::Mat;
using nn::Vec;

namespace {

Mat<double> random_mat(int r, int c, Rng& rng) {
  Mat<double> m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = normal(rng);
  return m;
}

// L = sum(W .* f(x)) for a fixed random weighting W.
double weighted_output(const nn::Mlp<double>& net, const Mat<double>& x, const Mat<double>& w) {
  return net.forward(x).cwiseProduct(w).sum();
}

}  // namespace

class MlpGradient : public ::testing::TestWithParam<nn::Activation> {};

TEST_P(MlpGradient, ParametersMatchFiniteDifferences) {
  Rng rng(1);
  nn::Mlp<double> net({5, 7, 6, 3}, GetParam(), nn::Activation::tanh);
  net.init(rng);
  const Mat<double> x = random_mat(5, 4, rng);
  const Mat<double> w = random_mat(3, 4, rng);

  typename nn::Mlp<double>::Cache cache;
  net.forward(x, &cache);
  Vec<double> grad = Vec<double>::Zero(static_cast<Eigen::Index>(net.num_params()));
  net.backward(cache, w, &grad);

  const Vec<double> fd = oracle::fd_gradient(
      [&](const Eigen::VectorXd& p) {
        nn::Mlp<double> n = net;
        n.params() = p;
        return weighted_output(n, x, w);
      },
      net.params());
  EXPECT_LT(oracle::rel_error(grad, fd), 1e-6);
}

TEST_P(MlpGradient, InputMatchesFiniteDifferences) {
  Rng rng(2);
  nn::Mlp<double> net({4, 8, 2}, GetParam(), nn::Activation::identity);
  net.init(rng);
  const Mat<double> x = random_mat(4, 1, rng);
  const Mat<double> w = random_mat(2, 1, rng);
  typename nn::Mlp<double>::Cache cache;
  net.forward(x, &cache);
  const Mat<double> dx = net.backward(cache, w, nullptr);
  const Vec<double> fd = oracle::fd_gradient(
      [&](const Eigen::VectorXd& xi) { return weighted_output(net, xi, w); }, Eigen::VectorXd(x.col(0)));
  EXPECT_LT(oracle::rel_error(Eigen::VectorXd(dx.col(0)), fd), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Activations, MlpGradient, ::testing::Values(nn::Activation::tanh, nn::Activation::relu));

TEST(Mlp, LayoutAndForwardByHand) {
  nn::Mlp<double> net({2, 3, 1}, nn::Activation::relu, nn::Activation::identity);
  ASSERT_EQ(net.num_params(), 2u * 3 + 3 + 3 + 1);
  // Weights are out x in, column-major, followed by the bias.
  for (Eigen::Index i = 0; i < 13; ++i) net.params()[i] = 0.1 * static_cast<double>(i + 1) * (i % 2 ? -1 : 1);
  Mat<double> x(2, 1);
  x << 0.7, -1.3;
  Eigen::Matrix<double, 3, 2> w1;
  w1 << 0.1, -0.4, -0.2, 0.5, 0.3, -0.6;
  const Eigen::Vector3d b1(0.7, -0.8, 0.9);
  const Eigen::Vector3d h = (w1 * x.col(0) + b1).cwiseMax(0.0);
  const Eigen::RowVector3d w2(-1.0, 1.1, -1.2);
  const double want = w2 * h + 1.3;
  EXPECT_NEAR(net.forward(x)(0, 0), want, 1e-12);
}

TEST(Mlp, InitWithinFanInBound) {
  Rng rng(3);
  nn::Mlp<float> net({100, 25, 4}, nn::Activation::relu, nn::Activation::identity);
  net.init(rng);
  EXPECT_LE(net.weight(0).cwiseAbs().maxCoeff(), 0.1f);
  EXPECT_LE(net.weight(1).cwiseAbs().maxCoeff(), 0.2f);
  EXPECT_GT(net.weight(0).cwiseAbs().maxCoeff(), 0.09f);
}

TEST(Mlp, CastPreservesValues) {
  Rng rng(4);
  nn::Mlp<double> net({3, 5, 2}, nn::Activation::tanh, nn::Activation::identity);
  net.init(rng);
  const auto f = net.cast<float>();
  Mat<double> x(3, 1);
  x << 0.1, 0.2, 0.3;
  EXPECT_LT((f.forward(x.cast<float>()).cast<double>() - net.forward(x)).norm(), 1e-6);
}

TEST(Adam, MinimizesQuadratic) {
  Vec<double> p(3);
  p << 5.0, -3.0, 1.0;
  const Vec<double> target = Vec<double>::Constant(3, 0.5);
  nn::Adam<double> opt(3, 0.05);
  for (int i = 0; i < 2000; ++i) opt.step(p, 2.0 * (p - target));
  EXPECT_LT((p - target).norm(), 1e-3);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  Vec<double> p = Vec<double>::Zero(2);
  Vec<double> g(2);
  g << 1e-3, -50.0;
  nn::Adam<double> opt(2, 0.01);
  opt.step(p, g);
  EXPECT_NEAR(p[0], -0.01, 1e-6);
  EXPECT_NEAR(p[1], 0.01, 1e-6);
}

TEST(ClipGradNorm, ScalesOnlyAboveThreshold) {
  Vec<double> g(2);
  g << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(nn::clip_grad_norm(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(g.norm(), 5.0);
  EXPECT_DOUBLE_EQ(nn::clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g.norm(), 1.0, 1e-15);
  EXPECT_NEAR(g[0] / g[1], 0.75, 1e-15);
}
