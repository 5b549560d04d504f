#include <cmath>
#include <iostream>
#include <random>

#include <gtest/gtest.h>

#include "wrp/curvature.hpp"
#include "wrp/dataset.hpp"
#include "wrp/errors.hpp"
#include "wrp/layers.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST(Fisher, BiasOnlyConstantGradient) {
  const std::vector<double> g{1.0, 1.0};
  const auto f = wrp::empirical_fisher_block(g, MatrixXd(2, 0), 1.0);
  ASSERT_EQ(f.block.matrix.rows(), 1);
  EXPECT_DOUBLE_EQ(f.block.matrix(0, 0), 1.0);
}

TEST(Fisher, TwoSampleHandAverage) {
  const std::vector<double> g{1.0, 1.0};
  MatrixXd z(2, 1);
  z << 2.0, 0.0;
  const auto f = wrp::empirical_fisher_block(g, z, 1.0);
  EXPECT_DOUBLE_EQ(f.block.matrix(1, 1), 2.0);
  EXPECT_DOUBLE_EQ(f.block.matrix(0, 1), 1.0);
}

TEST(Fisher, NoSamplesThrows) {
  EXPECT_THROW(wrp::empirical_fisher_block(std::vector<double>{}, MatrixXd(0, 2), 1.0),
               wrp::InputError);
}

TEST(Fisher, IndependentWhitenedSamplesGiveScaledIdentity) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  const int samples = 100000, n = 3;
  std::vector<double> g(samples);
  MatrixXd z(samples, n);
  for (int s = 0; s < samples; ++s) {
    g[s] = 1.5 * normal(rng);
    for (int i = 0; i < n; ++i) z(s, i) = normal(rng);
  }
  const auto f = wrp::empirical_fisher_block(g, z, 1.0);
  const MatrixXd expected = 2.25 * MatrixXd::Identity(n + 1, n + 1);
  const MatrixXd dev = (f.block.matrix - expected).cwiseAbs();
  EXPECT_LE(dev.cwiseQuotient(f.standard_error).maxCoeff(), 3.0);
  EXPECT_TRUE(f.block.symmetric());
  EXPECT_TRUE(f.block.positive_semidefinite());
}

TEST(Fisher, ConvergesToApproximateBlock) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  const int samples = 100000, n = 2;
  const double mean[n] = {0.5, -1.0}, sd[n] = {1.4, 0.7};
  std::vector<double> g(samples);
  MatrixXd z(samples, n);
  for (int s = 0; s < samples; ++s) {
    g[s] = normal(rng);
    for (int i = 0; i < n; ++i) z(s, i) = mean[i] + sd[i] * normal(rng);
  }
  const auto f = wrp::empirical_fisher_block(g, z, 1.0);
  const std::vector<double> mz{mean[0], mean[1]};
  const std::vector<double> mz2{mean[0] * mean[0] + sd[0] * sd[0],
                                mean[1] * mean[1] + sd[1] * sd[1]};
  const auto a = wrp::approx_block(mz, mz2, 1.0, 1.0);
  const MatrixXd dev = (f.block.matrix - a.matrix).cwiseAbs();
  EXPECT_LE(dev.maxCoeff(), 0.05);
  EXPECT_LE(dev.cwiseQuotient(f.standard_error).maxCoeff(), 3.0);
}

TEST(Fisher, AlwaysSymmetricPsd) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 200; ++trial) {
    const int samples = 2 + trial % 7, n = 1 + trial % 4;
    std::vector<double> g(samples);
    MatrixXd z(samples, n);
    for (int s = 0; s < samples; ++s) {
      g[s] = normal(rng);
      for (int i = 0; i < n; ++i) z(s, i) = 3.0 * normal(rng);
    }
    const auto f = wrp::empirical_fisher_block(g, z, 0.7);
    ASSERT_TRUE(f.block.symmetric());
    ASSERT_TRUE(f.block.positive_semidefinite());
  }
}

TEST(ApproxBlock, StandardizedMomentsGiveIdentity) {
  const std::vector<double> mz{0.0, 0.0, 0.0}, mz2{1.0, 1.0, 1.0};
  const double mean_g2 = 3.7;
  const auto a = wrp::approx_block(mz, mz2, mean_g2, 1.0 / std::sqrt(mean_g2));
  EXPECT_LE((a.matrix - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ApproxBlock, HandFill) {
  const std::vector<double> mz{1.0}, mz2{2.0};
  const auto a = wrp::approx_block(mz, mz2, 4.0, 0.5);
  MatrixXd expected(2, 2);
  expected << 1, 1, 1, 2;
  EXPECT_EQ(a.matrix, expected);
}

TEST(ApproxBlock, OffDiagonalUsesProductOfMeans) {
  const std::vector<double> mz{0.5, -2.0}, mz2{1.0, 5.0};
  const auto a = wrp::approx_block(mz, mz2, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(a.matrix(1, 2), -1.0);
  EXPECT_DOUBLE_EQ(a.matrix(0, 2), -2.0);
  EXPECT_DOUBLE_EQ(a.matrix(2, 2), 5.0);
}

TEST(Hessian, QuadraticIsIdentity) {
  const auto f = [](const VectorXd& w) { return 0.5 * w.squaredNorm(); };
  VectorXd w(3);
  w << 0.3, -2.0, 7.0;
  EXPECT_LE((wrp::finite_diff_hessian(f, w) - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(),
            1e-6);
}

TEST(Hessian, MotivatingExample) {
  VectorXd w(2);
  w << 3.0, 3.0;
  const MatrixXd h = wrp::finite_diff_hessian(wrp::motivating_value, w);
  EXPECT_NEAR(h(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(h(1, 1), 1.0 / (std::cosh(3.0) * std::cosh(3.0)), 1e-6);
  EXPECT_NEAR(h(0, 1), 0.0, 1e-6);
}

TEST(Hessian, PureCrossTerm) {
  const auto f = [](const VectorXd& w) { return w(0) * w(1); };
  const MatrixXd h = wrp::finite_diff_hessian(f, VectorXd::Constant(2, 1.5));
  EXPECT_NEAR(h(0, 1), 1.0, 1e-6);
  EXPECT_NEAR(h(1, 0), 1.0, 1e-6);
  EXPECT_NEAR(h(0, 0), 0.0, 1e-6);
}

TEST(Hessian, NonFiniteThrows) {
  const auto f = [](const VectorXd& w) { return std::log(w(0)); };
  EXPECT_THROW(wrp::finite_diff_hessian(f, VectorXd::Constant(1, 0.0)), wrp::NumericError);
}

TEST(Hessian, StepRule) {
  VectorXd w(3);
  w << 0.5, -20.0, 3.0;
  const VectorXd h = wrp::default_hessian_steps(w);
  EXPECT_DOUBLE_EQ(h(0), 1e-4);
  EXPECT_DOUBLE_EQ(h(1), 2e-3);
  EXPECT_DOUBLE_EQ(h(2), 3e-4);
}

TEST(Motivating, NewtonDirectionAtThreeThree) {
  const auto ex = wrp::motivating_example(3.0, 3.0);
  EXPECT_NEAR(-ex.gradient(0), -3.0, 1e-15);
  EXPECT_NEAR(-ex.gradient(1), -1.0, 0.01);
  const Eigen::Vector2d d = ex.newton_direction();
  EXPECT_NEAR(d(0), -3.0, 1e-12);
  EXPECT_GE(d(1), -102.0);
  EXPECT_LE(d(1), -100.0);
}

TEST(Motivating, NewtonStepLandsNearTwoPointNine) {
  const auto ex = wrp::motivating_example(3.0, 3.0);
  const Eigen::Vector2d next = Eigen::Vector2d(3.0, 3.0) + 0.03 * ex.newton_direction();
  EXPECT_LE((next - Eigen::Vector2d(2.9, 0.0)).norm(), 0.05);
}

TEST(Motivating, OptimumAtOrigin) {
  const auto ex = wrp::motivating_example(0.0, 0.0);
  EXPECT_DOUBLE_EQ(ex.value, std::log(2.0));
  EXPECT_EQ(ex.gradient.norm(), 0.0);
}

TEST(Motivating, LargeArgumentsStayFinite) {
  const auto ex = wrp::motivating_example(0.0, 1000.0);
  EXPECT_NEAR(ex.value, 1000.0, 1e-9);
  EXPECT_TRUE(std::isfinite(ex.hessian(1, 1)));
}

TEST(Motivating, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = u(rng), b = u(rng), h = 1e-6;
    const auto ex = wrp::motivating_example(a, b);
    const double d1 = (wrp::motivating_example(a + h, b).value - wrp::motivating_example(a - h, b).value) / (2 * h);
    const double d2 = (wrp::motivating_example(a, b + h).value - wrp::motivating_example(a, b - h).value) / (2 * h);
    ASSERT_NEAR(ex.gradient(0), d1, 1e-7);
    ASSERT_NEAR(ex.gradient(1), d2, 1e-7);
  }
}

TEST(BlockDiagonal, MotivatingExampleSeparates) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  std::vector<VectorXd> points;
  for (int k = 0; k < 100; ++k) points.push_back(Eigen::Vector2d(u(rng), u(rng)));
  EXPECT_LE(wrp::block_diagonality_probe(wrp::motivating_value, points, {{0}, {1}}), 1e-8);
}

TEST(BlockDiagonal, CrossTermControl) {
  const auto f = [](const VectorXd& w) { return w(0) * w(1); };
  const std::vector<VectorXd> points{Eigen::Vector2d(0.5, 2.0)};
  EXPECT_NEAR(wrp::block_diagonality_probe(f, points, {{0}, {1}}), 1.0, 1e-6);
  EXPECT_EQ(wrp::block_diagonality_probe(f, points, {{0, 1}}), 0.0);
}

// Diagnostic only: the Gauss-Newton/Fisher surrogate and the true Hessian of a softmax
// layer's loss agree only roughly, so the gap is reported rather than asserted.
TEST(Diagnostic, FisherVersusHessianForOneUnit) {
  const wrp::Dataset d = wrp::gen_synthetic(3, 400, {2}, 3, 2.0);
  wrp::LayerParams p = wrp::LayerParams::linear(2, 3);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (double& v : p.weights.data()) v = normal(rng);
  const std::size_t unit = 1;
  auto loss = [&](const VectorXd& w) {
    wrp::LayerParams q = p;
    q.bias[unit] = w(0);
    q.weights(unit, 0) = w(1);
    q.weights(unit, 1) = w(2);
    return wrp::softmax_xent(wrp::linear_forward(d.images, q), d.labels).loss;
  };
  const VectorXd w0 = Eigen::Vector3d(p.bias[unit], p.weights(unit, 0), p.weights(unit, 1));
  const MatrixXd hess = wrp::finite_diff_hessian(loss, w0);

  const auto res = wrp::softmax_xent(wrp::linear_forward(d.images, p), d.labels);
  std::vector<double> g(d.size());
  MatrixXd z(d.size(), 2);
  for (std::size_t s = 0; s < d.size(); ++s) {
    g[s] = res.g_logits(s, unit) * static_cast<double>(d.size());
    z(s, 0) = d.images(s, 0);
    z(s, 1) = d.images(s, 1);
  }
  const auto fisher = wrp::empirical_fisher_block(g, z, 1.0);
  const double gap = (fisher.block.matrix - hess).cwiseAbs().maxCoeff();
  std::cout << "fisher-vs-hessian max entry gap: " << gap
            << " (hessian max " << hess.cwiseAbs().maxCoeff() << ")\n";
  RecordProperty("fisher_hessian_gap", std::to_string(gap));
  EXPECT_TRUE(std::isfinite(gap));
}

}  // namespace
