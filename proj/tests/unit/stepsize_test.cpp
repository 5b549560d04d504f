#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "wrp/curvature.hpp"
#include "wrp/errors.hpp"
#include "wrp/stepsize.hpp"

namespace {

using wrp::TrustRegionConfig;
using wrp::Vector;

TrustRegionConfig cfg_eta(double eta, double mu = 0.0) {
  TrustRegionConfig c;
  c.eta = eta;
  c.mu_reg = mu;
  return c;
}

Vector to_vec(const Eigen::VectorXd& v) { return Vector(v.data(), v.data() + v.size()); }

Eigen::MatrixXd random_spd(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

TEST(GlobalStep, EuclideanMetric) {
  const Vector g{3, 4};
  const Vector s = wrp::global_trust_step(g, g, cfg_eta(1.0));
  EXPECT_DOUBLE_EQ(s[0], 0.6);
  EXPECT_DOUBLE_EQ(s[1], 0.8);
}

TEST(GlobalStep, ZeroGradientGivesZeroStep) {
  const Vector g{0, 0};
  const Vector s = wrp::global_trust_step(g, g, cfg_eta(1.0));
  EXPECT_EQ(s, (Vector{0, 0}));
}

TEST(GlobalStep, MotivatingExampleHasUnitMetricLength) {
  const auto ex = wrp::motivating_example(3.0, 3.0);
  const Eigen::Vector2d ginv = ex.hessian.ldlt().solve(ex.gradient);
  EXPECT_NEAR(ginv(0), 3.0, 1e-12);
  EXPECT_NEAR(ginv(1), 100.9, 0.1);
  const Vector s = wrp::global_trust_step(to_vec(ex.gradient), to_vec(ginv), cfg_eta(0.25));
  const Eigen::Vector2d sv(s[0], s[1]);
  EXPECT_NEAR(sv.dot(ex.hessian * sv), 0.25 * 0.25, 1e-12);
}

TEST(GlobalStep, UnnormalizedIsScaledNaturalGradient) {
  TrustRegionConfig c = cfg_eta(0.5);
  c.normalize = false;
  const Vector s = wrp::global_trust_step(Vector{1, 1}, Vector{2, -4}, c);
  EXPECT_EQ(s, (Vector{1, -2}));
}

TEST(GlobalStep, MetricLengthIsEtaOnRandomSpd) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 5;
    const Eigen::MatrixXd G = random_spd(n, rng);
    Eigen::VectorXd g(n);
    for (auto& v : g) v = normal(rng);
    const Eigen::VectorXd ginv = G.ldlt().solve(g);
    const Vector s = wrp::global_trust_step(to_vec(g), to_vec(ginv), cfg_eta(0.3));
    const Eigen::VectorXd sv = Eigen::Map<const Eigen::VectorXd>(s.data(), n);
    ASSERT_NEAR(sv.dot(G * sv), 0.09, 1e-9);
  }
}

TEST(GlobalStep, ScaleInvariance) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector g(4), gi(4);
    for (std::size_t k = 0; k < 4; ++k) {
      g[k] = normal(rng);
      gi[k] = g[k] * (0.5 + std::abs(normal(rng)));
    }
    const double c = scale(rng);
    Vector g2 = g, gi2 = gi;
    for (std::size_t k = 0; k < 4; ++k) {
      g2[k] *= c;
      gi2[k] *= c;
    }
    const Vector a = wrp::global_trust_step(g, gi, cfg_eta(1.0));
    const Vector b = wrp::global_trust_step(g2, gi2, cfg_eta(1.0));
    for (std::size_t k = 0; k < 4; ++k) ASSERT_NEAR(a[k], b[k], 1e-12);
    const std::vector<Vector> blocks{g}, blocks2{g2}, inv{gi}, inv2{gi2};
    const auto p = wrp::block_trust_step(blocks, inv, cfg_eta(1.0));
    const auto q = wrp::block_trust_step(blocks2, inv2, cfg_eta(1.0));
    for (std::size_t k = 0; k < 4; ++k) ASSERT_NEAR(p.steps[0][k], q.steps[0][k], 1e-12);
  }
}

TEST(GlobalStep, InvalidConfigThrows) {
  EXPECT_THROW(wrp::global_trust_step(Vector{1}, Vector{1}, cfg_eta(0.0)), wrp::InputError);
  EXPECT_THROW(wrp::global_trust_step(Vector{1, 2}, Vector{1}, cfg_eta(1.0)), wrp::DimensionError);
  TrustRegionConfig c = cfg_eta(1.0);
  c.mode = wrp::TrustMode::per_scalar;
  EXPECT_THROW(c.validate(), wrp::InputError);
}

TEST(BlockStep, IdenticalBlocksMatchGlobalRestriction) {
  const Vector g{1.0, -2.0};
  const std::vector<Vector> blocks{g, g};
  const auto r = wrp::block_trust_step(blocks, blocks, cfg_eta(1.0));
  const Vector ref = wrp::global_trust_step(g, g, cfg_eta(1.0));
  EXPECT_EQ(r.steps[0], ref);
  EXPECT_EQ(r.steps[1], ref);
}

TEST(BlockStep, PerBlockNormalizationChangesDirection) {
  const std::vector<Vector> blocks{{3, 0}, {0, 4}};
  const auto r = wrp::block_trust_step(blocks, blocks, cfg_eta(1.0));
  EXPECT_EQ(r.steps[0], (Vector{1, 0}));
  EXPECT_EQ(r.steps[1], (Vector{0, 1}));
}

TEST(BlockStep, ZeroBlockOnlyZeroesItself) {
  const std::vector<Vector> blocks{{0, 0}, {0, 2}};
  const auto r = wrp::block_trust_step(blocks, blocks, cfg_eta(1.0));
  EXPECT_EQ(r.steps[0], (Vector{0, 0}));
  EXPECT_EQ(r.steps[1], (Vector{0, 1}));
}

TEST(BlockStep, MotivatingExampleBlocksMoveEqually) {
  const auto ex = wrp::motivating_example(3.0, 3.0);
  const std::vector<Vector> grads{{ex.gradient(0)}, {ex.gradient(1)}};
  const auto r = wrp::block_trust_step(grads, grads, cfg_eta(0.1));
  EXPECT_NEAR(-r.steps[0][0], -0.1, 1e-15);
  EXPECT_NEAR(-r.steps[1][0], -0.1, 1e-15);
}

TEST(BlockStep, MotivatingExampleHessianBlocks) {
  const auto ex = wrp::motivating_example(3.0, 3.0);
  const std::vector<Vector> grads{{ex.gradient(0)}, {ex.gradient(1)}};
  const std::vector<Vector> ginv{{ex.gradient(0) / ex.hessian(0, 0)},
                                 {ex.gradient(1) / ex.hessian(1, 1)}};
  const auto r = wrp::block_trust_step(grads, ginv, cfg_eta(0.1));
  // A descent update subtracts the returned displacement.
  EXPECT_NEAR(-r.steps[0][0], -0.1, 1e-12);
  EXPECT_NEAR(-r.steps[1][0] * std::sqrt(ex.hessian(1, 1)), -0.1, 1e-12);
  // Each block moves by eta in its own metric.
  EXPECT_NEAR(r.steps[1][0] * r.steps[1][0] * ex.hessian(1, 1), 0.01, 1e-12);
}

TEST(RegularizedStep, DeterministicGradientMatchesBlockStep) {
  const std::vector<Vector> g{{1, 2}, {-3, 0.5}};
  const std::vector<double> forms{5.0, 9.25};  // g' g for each block
  const auto a = wrp::regularized_block_step(g, g, forms, cfg_eta(0.7));
  const auto b = wrp::block_trust_step(g, g, cfg_eta(0.7));
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a.steps[j][k], b.steps[j][k], 1e-15);
}

TEST(RegularizedStep, ZeroGradientIsSafe) {
  const std::vector<Vector> g{{0.0}};
  const std::vector<double> forms{0.0};
  const auto r = wrp::regularized_block_step(g, g, forms, cfg_eta(1.0, 1e-8));
  EXPECT_EQ(r.steps[0][0], 0.0);
}

TEST(RegularizedStep, VarianceDominatesCancellingExamples) {
  const std::vector<Vector> per_example{{1.0}, {-1.0}};
  const double form = wrp::expected_quadratic_form(per_example, per_example);
  EXPECT_DOUBLE_EQ(form, 1.0);
  const std::vector<Vector> mean{{0.0}};
  const std::vector<double> forms{form};
  const auto r = wrp::regularized_block_step(mean, mean, forms, cfg_eta(1.0));
  EXPECT_DOUBLE_EQ(r.denominators[0], 1.0);
  EXPECT_EQ(r.steps[0][0], 0.0);
}

TEST(RegularizedStep, NeverLongerThanBlockStep) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t examples = 2 + trial % 6;
    std::vector<Vector> per(examples, Vector(3));
    Vector mean(3, 0.0);
    for (auto& e : per)
      for (std::size_t k = 0; k < 3; ++k) {
        e[k] = normal(rng) + 0.5;
        mean[k] += e[k] / static_cast<double>(examples);
      }
    const std::vector<Vector> m{mean};
    const std::vector<double> forms{wrp::expected_quadratic_form(per, per)};
    const auto reg = wrp::regularized_block_step(m, m, forms, cfg_eta(1.0));
    const auto blk = wrp::block_trust_step(m, m, cfg_eta(1.0));
    ASSERT_GE(reg.denominators[0], blk.denominators[0] - 1e-12);
    double lr = 0.0, lb = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      lr += reg.steps[0][k] * reg.steps[0][k];
      lb += blk.steps[0][k] * blk.steps[0][k];
    }
    ASSERT_LE(lr, lb + 1e-12);
  }
}

TEST(RmsProp, DirectFormula) {
  wrp::RmsState s(1, 1.0);
  const auto r = wrp::rmsprop_step(s, Vector{2.0}, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(r.state.r[0], 4.0);
  EXPECT_DOUBLE_EQ(r.step[0], -0.1);
}

TEST(RmsProp, ZeroGradientDecaysAccumulator) {
  wrp::RmsState s(1, 0.1);
  s.r = {2.0};
  const auto r = wrp::rmsprop_step(s, Vector{0.0}, 0.1, 1e-8);
  EXPECT_EQ(r.step[0], 0.0);
  EXPECT_DOUBLE_EQ(r.state.r[0], 1.8);
}

TEST(RmsProp, ConstantGradientFixedPoint) {
  wrp::RmsState s(1, 0.1);
  const double g = 0.3, eta = 0.01, mu = 1e-4;
  wrp::RmsStep r{{}, s};
  for (int t = 0; t < 2000; ++t) r = wrp::rmsprop_step(r.state, Vector{g}, eta, mu);
  EXPECT_NEAR(r.step[0], -eta * g / std::sqrt(mu + g * g), 1e-12);
}

TEST(RmsProp, PerScalarTrustStepReproducesDirectUpdate) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  wrp::RmsState a(6, 0.1), b(6, 0.1);
  for (int t = 0; t < 1000; ++t) {
    Vector g(6);
    for (double& v : g) v = normal(rng) * std::exp(2.0 * normal(rng));
    auto x = wrp::rmsprop_step(a, g, 0.01, 1e-8);
    auto y = wrp::per_scalar_trust_step(b, g, 0.01, 1e-8);
    for (std::size_t k = 0; k < 6; ++k)
      ASSERT_LE(std::abs(x.step[k] - y.step[k]),
                1e-12 * std::max(std::abs(x.step[k]), 1e-300)) << "step " << t;
    a = x.state;
    b = y.state;
  }
}

TEST(Fanin, ScaleValues) {
  EXPECT_NEAR(wrp::fanin_scale(84, 1), 0.10911, 1e-5);
  EXPECT_EQ(wrp::fanin_scale(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(wrp::fanin_scale(150, 100), 1.0 / std::sqrt(15000.0));
  EXPECT_THROW(wrp::fanin_scale(0, 1), wrp::InputError);
}

TEST(Fanin, WhitenedInputsGiveSqrtN) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  wrp::FaninAccumulator acc;
  Vector x(256);
  for (int s = 0; s < 100000; ++s) {
    for (double& v : x) v = normal(rng);
    acc.add(normal(rng), x);
  }
  const double est = acc.estimate();
  EXPECT_GE(est, 0.9 * 16.0);
  EXPECT_LE(est, 1.1 * 16.0);
}

TEST(Fanin, SingleConstantInput) {
  const std::vector<double> g{1.0, -2.0, 0.5};
  const std::vector<Vector> x{{1.0}, {1.0}, {1.0}};
  EXPECT_DOUBLE_EQ(wrp::fanin_denominator_estimate(g, x), 1.0);
}

// With n identical unit-variance channels the estimator gives sqrt(n) * rms(x) = 2 for
// n = 4; the squared-sum form E[(sum_i x_i)^2 g^2] / E[g^2] = n^2 E[x^2] gives n = 4.
TEST(Fanin, IdenticalChannels) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  std::vector<double> g;
  std::vector<Vector> x;
  double sum_form = 0.0, g2 = 0.0;
  for (int s = 0; s < 100000; ++s) {
    const double v = normal(rng), gs = normal(rng);
    g.push_back(gs);
    x.push_back(Vector(4, v));
    sum_form += 16.0 * v * v * gs * gs;
    g2 += gs * gs;
  }
  EXPECT_NEAR(wrp::fanin_denominator_estimate(g, x), 2.0, 0.05);
  EXPECT_NEAR(std::sqrt(sum_form / g2), 4.0, 0.1);
}

TEST(Fanin, DegenerateInputsThrow) {
  const std::vector<Vector> x{{1.0}, {2.0}};
  EXPECT_THROW(wrp::fanin_denominator_estimate(std::vector<double>{0.0, 0.0}, x),
               wrp::EstimationError);
  EXPECT_THROW(wrp::fanin_denominator_estimate(std::vector<double>{1.0}, std::vector<Vector>{{1.0}}),
               wrp::EstimationError);
}

}  // namespace
