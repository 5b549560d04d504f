#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "wrp/architecture.hpp"
#include "wrp/dataset.hpp"
#include "wrp/errors.hpp"
#include "wrp/optimizers.hpp"

namespace {

using wrp::Algorithm;
using wrp::Network;
using wrp::OptimizerConfig;
using wrp::Tensor;

Network mlp(std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed,
            bool batchnorm = false) {
  Network net({inputs});
  net.add_linear(hidden);
  if (batchnorm) net.add_batchnorm();
  net.add_activation(wrp::Activation::relu).add_linear(classes);
  std::mt19937_64 rng(seed);
  net.initialize(rng);
  return net;
}

OptimizerConfig config(Algorithm a, double stepsize, std::size_t batch = 32) {
  OptimizerConfig c;
  c.algorithm = a;
  c.stepsize = stepsize;
  c.batch_size = batch;
  return c;
}

wrp::Dataset blobs(std::uint64_t seed = 11, std::size_t count = 512, double sep = 8.0) {
  return wrp::gen_synthetic(seed, count, {10}, 2, sep);
}

TEST(Algorithms, NamesRoundTrip) {
  for (Algorithm a : {Algorithm::sgd, Algorithm::sgd_fanin, Algorithm::rmsprop,
                      Algorithm::reparam_canonical, Algorithm::reparam_whitening,
                      Algorithm::batchnorm_sgd, Algorithm::mitigation_schedule}) {
    EXPECT_EQ(wrp::algorithm_from_string(wrp::to_string(a)), a);
  }
  EXPECT_THROW(wrp::algorithm_from_string("adam"), wrp::UsageError);
}

TEST(OptimizerConfig, RejectsBadValues) {
  OptimizerConfig c;
  c.stepsize = -1.0;
  EXPECT_THROW(c.validate(), wrp::InputError);
  c = OptimizerConfig{};
  c.lambda_ema = 1.0;
  EXPECT_THROW(c.validate(), wrp::InputError);
  c = config(Algorithm::batchnorm_sgd, 0.1, 1);
  EXPECT_THROW(c.validate(), wrp::InputError);
}

TEST(OptState, AllocatesOnlyWhatIsNeeded) {
  const Network net = mlp(4, 3, 2, 1);
  const auto sgd = wrp::make_opt_state(net, config(Algorithm::sgd, 0.1));
  ASSERT_EQ(sgd.layers.size(), 2u);
  EXPECT_FALSE(sgd.layers[0].moments);
  EXPECT_FALSE(sgd.layers[0].rms_weights);
  const auto rms = wrp::make_opt_state(net, config(Algorithm::rmsprop, 0.1));
  EXPECT_TRUE(rms.layers[1].rms_weights);
  EXPECT_TRUE(rms.layers[1].rms_bias);
  EXPECT_FALSE(rms.layers[1].moments);
  const auto rep = wrp::make_opt_state(net, config(Algorithm::reparam_whitening, 0.1));
  EXPECT_TRUE(rep.layers[0].moments);
  EXPECT_FALSE(rep.layers[0].rms_weights);
}

TEST(Step, MismatchedStateThrows) {
  Network net = mlp(4, 3, 2, 1);
  auto st = wrp::make_opt_state(net, config(Algorithm::sgd, 0.1));
  st.layers.pop_back();
  std::mt19937_64 rng(2);
  const std::vector<int> y{0, 1};
  EXPECT_THROW(wrp::step(net, wrp::test::random_tensor({2, 4}, rng), y,
                         config(Algorithm::sgd, 0.1), st),
               wrp::StateError);
}

TEST(Step, ZeroStepsizeLeavesParametersUnchanged) {
  std::mt19937_64 rng(3);
  for (Algorithm a : {Algorithm::sgd, Algorithm::sgd_fanin, Algorithm::rmsprop,
                      Algorithm::reparam_canonical, Algorithm::reparam_whitening}) {
    Network net = mlp(5, 4, 3, 4);
    const Network before = net;
    const auto cfg = config(a, 0.0);
    auto st = wrp::make_opt_state(net, cfg);
    const std::vector<int> y{0, 1, 2, 1};
    wrp::step(net, wrp::test::random_tensor({4, 5}, rng), y, cfg, st);
    for (std::size_t li : net.trainable_indices()) {
      EXPECT_EQ(net.layers()[li].params.weights, before.layers()[li].params.weights)
          << wrp::to_string(a);
      EXPECT_EQ(net.layers()[li].params.bias, before.layers()[li].params.bias);
    }
  }
}

TEST(Step, SgdMatchesManualGradientStep) {
  std::mt19937_64 rng(5);
  Network net = mlp(5, 4, 3, 6);
  Network ref = net;
  const Tensor x = wrp::test::random_tensor({6, 5}, rng);
  const std::vector<int> y{0, 1, 2, 2, 1, 0};
  const auto cfg = config(Algorithm::sgd, 0.2);
  auto st = wrp::make_opt_state(net, cfg);
  wrp::step(net, x, y, cfg, st);
  ref.backward(wrp::softmax_xent(ref.forward(x), y).g_logits);
  for (std::size_t li : ref.trainable_indices()) {
    auto& l = ref.layers()[li];
    for (std::size_t i = 0; i < l.params.weights.size(); ++i) {
      EXPECT_DOUBLE_EQ(net.layers()[li].params.weights[i],
                       l.params.weights[i] - 0.2 * l.grad_w[i]);
    }
    for (std::size_t j = 0; j < l.params.bias.size(); ++j) {
      EXPECT_DOUBLE_EQ(net.layers()[li].params.bias[j], l.params.bias[j] - 0.2 * l.grad_b[j]);
    }
  }
}

// With mu = 0 and alpha^2 = 1 the whitening update is a gradient step scaled by
// beta^2 = 1/sqrt(n S), which is exactly fanin-scaled SGD.
TEST(Step, WhiteningWithIdentityInputConstantsIsFaninSgd) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Network a = mlp(6, 5, 3, 100 + trial);
    Network b = a;
    auto wc = config(Algorithm::reparam_whitening, 0.3);
    wc.identity_input_constants = true;
    const auto fc = config(Algorithm::sgd_fanin, 0.3);
    auto sa = wrp::make_opt_state(a, wc);
    auto sb = wrp::make_opt_state(b, fc);
    for (int s = 0; s < 3; ++s) {
      const Tensor x = wrp::test::random_tensor({8, 6}, rng);
      const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
      wrp::step(a, x, y, wc, sa);
      wrp::step(b, x, y, fc, sb);
    }
    for (std::size_t li : a.trainable_indices()) {
      EXPECT_LE(wrp::max_abs_diff(a.layers()[li].params.weights, b.layers()[li].params.weights),
                1e-13);
      EXPECT_LE(wrp::max_abs_diff(a.layers()[li].params.bias, b.layers()[li].params.bias), 1e-13);
    }
  }
}

TEST(Step, RmspropComposesAccumulatorAndStep) {
  std::mt19937_64 rng(8);
  Network net = mlp(4, 3, 2, 9);
  Network ref = net;
  const auto cfg = config(Algorithm::rmsprop, 0.01);
  auto st = wrp::make_opt_state(net, cfg);
  std::vector<wrp::RmsState> rw, rb;
  for (std::size_t li : ref.trainable_indices()) {
    rw.emplace_back(ref.layers()[li].params.weights.size(), cfg.lambda_rms);
    rb.emplace_back(ref.layers()[li].params.bias.size(), cfg.lambda_rms);
  }
  for (int s = 0; s < 5; ++s) {
    const Tensor x = wrp::test::random_tensor({5, 4}, rng);
    const std::vector<int> y{0, 1, 1, 0, 1};
    wrp::step(net, x, y, cfg, st);
    ref.backward(wrp::softmax_xent(ref.forward(x), y).g_logits);
    const auto idx = ref.trainable_indices();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& l = ref.layers()[idx[k]];
      auto sw = wrp::rmsprop_step(rw[k], l.grad_w.values(), cfg.stepsize, cfg.mu_reg);
      auto sb = wrp::rmsprop_step(rb[k], l.grad_b.values(), cfg.stepsize, cfg.mu_reg);
      for (std::size_t i = 0; i < l.params.weights.size(); ++i) l.params.weights[i] += sw.step[i];
      for (std::size_t j = 0; j < l.params.bias.size(); ++j) l.params.bias[j] += sb.step[j];
      rw[k] = sw.state;
      rb[k] = sb.state;
    }
  }
  for (std::size_t li : net.trainable_indices()) {
    EXPECT_EQ(net.layers()[li].params.weights, ref.layers()[li].params.weights);
    EXPECT_EQ(net.layers()[li].params.bias, ref.layers()[li].params.bias);
  }
}

TEST(Step, ReparamPhaseOrder) {
  std::mt19937_64 rng(10);
  Network net = mlp(3, 2, 2, 11);
  auto cfg = config(Algorithm::reparam_canonical, 0.01);
  auto st = wrp::make_opt_state(net, cfg);
  std::vector<std::string> events;
  st.trace = [&](std::string_view e) { events.emplace_back(e); };
  const std::vector<int> y{0, 1, 0, 1};
  wrp::step(net, wrp::test::random_tensor({4, 3}, rng), y, cfg, st);
  const std::vector<std::string> per_layer{"batch_stats", "update_moments",
                                           "constants_from_moments", "reparam_delta"};
  std::vector<std::string> expected{"forward", "backward"};
  for (int k = 0; k < 2; ++k) expected.insert(expected.end(), per_layer.begin(), per_layer.end());
  EXPECT_EQ(events, expected);

  events.clear();
  cfg.biased_minibatch_constants = true;
  wrp::step(net, wrp::test::random_tensor({4, 3}, rng), y, cfg, st);
  EXPECT_EQ(events[3], "constants_from_batch");
}

TEST(Step, RecordsReparamDiagnostics) {
  std::mt19937_64 rng(12);
  Network net = mlp(3, 2, 2, 13);
  const auto cfg = config(Algorithm::reparam_whitening, 0.01);
  auto st = wrp::make_opt_state(net, cfg);
  const std::vector<int> y{0, 1, 0, 1};
  const auto first = wrp::step(net, wrp::test::random_tensor({4, 3}, rng), y, cfg, st);
  EXPECT_TRUE(std::isnan(first.stat_discrepancy));
  EXPECT_GE(first.alpha2_min, cfg.bounds.alpha2_min);
  EXPECT_LE(first.alpha2_max, cfg.bounds.alpha2_max);
  const auto second = wrp::step(net, wrp::test::random_tensor({4, 3}, rng), y, cfg, st);
  EXPECT_GE(second.stat_discrepancy, 0.0);
  EXPECT_EQ(second.step, 1u);

  Network plain = mlp(3, 2, 2, 13);
  const auto sc = config(Algorithm::sgd, 0.01);
  auto ss = wrp::make_opt_state(plain, sc);
  const auto r = wrp::step(plain, wrp::test::random_tensor({4, 3}, rng), y, sc, ss);
  EXPECT_TRUE(std::isnan(r.alpha2_min));
}

TEST(RunEpochs, DeterministicUnderSeed) {
  const auto data = blobs();
  const auto cfg = config(Algorithm::reparam_whitening, 0.1);
  Network a = mlp(10, 8, 2, 1), b = a;
  const auto ra = wrp::run_epochs(a, data, cfg, 2, 42);
  const auto rb = wrp::run_epochs(b, data, cfg, 2, 42);
  ASSERT_EQ(ra.records.size(), rb.records.size());
  for (std::size_t i = 0; i < ra.records.size(); ++i) {
    EXPECT_EQ(ra.records[i].loss, rb.records[i].loss);
  }
  EXPECT_EQ(a.layers()[0].params.weights, b.layers()[0].params.weights);
}

TEST(RunEpochs, SkipsTrailingPartialBatch) {
  const auto data = blobs(11, 100);
  Network net = mlp(10, 4, 2, 1);
  const auto r = wrp::run_epochs(net, data, config(Algorithm::sgd, 0.1, 32), 2, 1);
  EXPECT_EQ(r.records.size(), 6u);
  EXPECT_EQ(r.records.back().epoch, 1u);
  EXPECT_FALSE(std::isnan(r.records.back().relu_dead));
  EXPECT_TRUE(std::isnan(r.records.front().relu_dead));
}

TEST(RunEpochs, ZeroEpochsIsEmpty) {
  Network net = mlp(10, 4, 2, 1);
  EXPECT_TRUE(wrp::run_epochs(net, blobs(), config(Algorithm::sgd, 0.1), 0, 1).records.empty());
}

TEST(RunEpochs, EarlyStopCallback) {
  Network net = mlp(10, 4, 2, 1);
  wrp::RunOptions opt;
  opt.on_record = [](const wrp::TrainRecord& r) { return r.step < 4; };
  const auto r = wrp::run_epochs(net, blobs(), config(Algorithm::sgd, 0.1), 3, 1, opt);
  EXPECT_EQ(r.records.size(), 5u);
}

struct BlobCase {
  Algorithm algorithm;
  double stepsize;
};

class SeparableBlobs : public ::testing::TestWithParam<BlobCase> {};

TEST_P(SeparableBlobs, TrainsToLowLoss) {
  const auto [algorithm, stepsize] = GetParam();
  const auto data = blobs();
  Network net = mlp(10, 16, 2, 3, wrp::uses_batchnorm(algorithm));
  const auto r = wrp::run_epochs(net, data, config(algorithm, stepsize), 20, 5);
  EXPECT_LT(wrp::final_epoch_loss(r.records), 0.1) << wrp::to_string(algorithm);
}

INSTANTIATE_TEST_SUITE_P(
    Algorithms, SeparableBlobs,
    ::testing::Values(BlobCase{Algorithm::sgd, 0.1}, BlobCase{Algorithm::sgd_fanin, 0.3},
                      BlobCase{Algorithm::rmsprop, 0.01},
                      BlobCase{Algorithm::reparam_canonical, 0.01},
                      BlobCase{Algorithm::reparam_whitening, 0.1},
                      BlobCase{Algorithm::batchnorm_sgd, 0.1},
                      BlobCase{Algorithm::mitigation_schedule, 0.1}),
    [](const auto& info) { return std::string(wrp::to_string(info.param.algorithm)); });

TEST(Divergence, HugeSgdStepRaisesWithinHundredSteps) {
  const auto data = blobs();
  Network net = mlp(10, 16, 2, 3);
  try {
    wrp::run_epochs(net, data, config(Algorithm::sgd, 1e3), 10, 1);
    FAIL() << "expected divergence";
  } catch (const wrp::DivergenceError& e) {
    EXPECT_LT(e.step(), 100u);
    EXPECT_EQ(e.history().size(), e.step());
    for (const auto& r : e.history()) EXPECT_TRUE(std::isfinite(r.loss));
  }
}

TEST(Divergence, DescendObjective) {
  const auto quad = [](std::span<const double> w) { return w[0] * w[0]; };
  const auto grad = [](std::span<const double> w) { return std::vector<double>{2.0 * w[0]}; };
  EXPECT_NEAR(wrp::descend_objective(quad, grad, {1.0}, 0.25, 100)[0], 0.0, 1e-12);
  try {
    wrp::descend_objective(quad, grad, {1.0}, 1e3, 1000);
    FAIL() << "expected divergence";
  } catch (const wrp::DivergenceError& e) {
    EXPECT_EQ(e.layer(), "objective");
    EXPECT_LT(e.step(), 200u);
  }
}

TEST(Fold, PreservesProbeOutputs) {
  std::mt19937_64 rng(20);
  Network net = wrp::parse_architecture("C4(3x3)BN-P(2x2)-F6BN-F3", {2, 8, 8});
  net.initialize(rng);
  const auto cfg = config(Algorithm::batchnorm_sgd, 0.1, 8);
  auto st = wrp::make_opt_state(net, cfg);
  const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
  for (int s = 0; s < 20; ++s) wrp::step(net, wrp::test::random_tensor({8, 2, 8, 8}, rng), y, cfg, st);
  const Tensor probe = wrp::test::random_tensor({16, 2, 8, 8}, rng);
  const Tensor before = net.infer(probe);
  const auto rep = wrp::fold_batchnorm(net, probe);
  EXPECT_EQ(rep.folded, 2u);
  EXPECT_FALSE(net.has_batchnorm());
  EXPECT_LE(rep.residual, 1e-8);
  EXPECT_LE(wrp::max_abs_diff(before, net.infer(probe)), 1e-8);
}

TEST(Fold, UntrainedLayersAreDropped) {
  std::mt19937_64 rng(21);
  Network net = mlp(4, 3, 2, 1, true);
  const Tensor probe = wrp::test::random_tensor({4, 4}, rng);
  const auto rep = wrp::fold_batchnorm(net, probe);
  EXPECT_EQ(rep.dropped, 1u);
  EXPECT_EQ(rep.folded, 0u);
}

TEST(Fold, RejectsBatchnormWithoutTrainablePredecessor) {
  std::mt19937_64 rng(22);
  Network net({4});
  net.add_linear(3).add_activation(wrp::Activation::relu).add_batchnorm().add_linear(2);
  net.initialize(rng);
  net.forward(wrp::test::random_tensor({4, 4}, rng));
  EXPECT_THROW(wrp::fold_batchnorm(net, wrp::test::random_tensor({4, 4}, rng)), wrp::FoldError);
}

TEST(Mitigation, SwitchesAfterFirstEpoch) {
  const auto data = blobs();
  Network net = mlp(10, 16, 2, 3, true);
  const auto r = wrp::run_epochs(net, data, config(Algorithm::mitigation_schedule, 0.1), 2, 1);
  EXPECT_TRUE(r.state.switched);
  EXPECT_FALSE(net.has_batchnorm());
  for (const auto& rec : r.records) EXPECT_TRUE(std::isfinite(rec.loss));
  EXPECT_TRUE(std::isnan(r.records.front().alpha2_min));
  EXPECT_FALSE(std::isnan(r.records.back().alpha2_min));
}

TEST(Mitigation, NeverSwitchStaysOnBatchnorm) {
  auto cfg = config(Algorithm::mitigation_schedule, 0.1);
  cfg.switch_epoch = wrp::kNeverSwitch;
  Network net = mlp(10, 16, 2, 3, true);
  const auto r = wrp::run_epochs(net, blobs(), cfg, 2, 1);
  EXPECT_FALSE(r.state.switched);
  EXPECT_TRUE(net.has_batchnorm());
}

TEST(Mitigation, SwitchAtZeroDropsUntrainedBatchnorm) {
  auto cfg = config(Algorithm::mitigation_schedule, 0.1);
  cfg.switch_epoch = 0;
  Network net = mlp(10, 16, 2, 3, true);
  const auto r = wrp::run_epochs(net, blobs(), cfg, 1, 1);
  EXPECT_TRUE(r.state.switched);
  EXPECT_FALSE(net.has_batchnorm());
}

TEST(ReluDeath, AllDeadWhenBiasesAreVeryNegative) {
  std::mt19937_64 rng(23);
  Network net = mlp(4, 5, 2, 1);
  const Tensor probe = wrp::test::random_tensor({10, 4}, rng);
  EXPECT_LT(wrp::relu_death_fraction(net, probe), 1.0);
  for (std::size_t j = 0; j < 5; ++j) net.layers()[0].params.bias[j] = -1e3;
  EXPECT_DOUBLE_EQ(wrp::relu_death_fraction(net, probe), 1.0);
}

TEST(FinalEpochLoss, AveragesLastEpoch) {
  std::vector<wrp::TrainRecord> r(4);
  r[0].loss = 9; r[1].loss = 9;
  r[2].epoch = 1; r[2].loss = 1;
  r[3].epoch = 1; r[3].loss = 3;
  EXPECT_DOUBLE_EQ(wrp::final_epoch_loss(r), 2.0);
  EXPECT_TRUE(std::isnan(wrp::final_epoch_loss({})));
}

}  // namespace
