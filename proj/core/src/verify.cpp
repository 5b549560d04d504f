#include "wrp/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "wrp/bias_experiment.hpp"
#include "wrp/curvature.hpp"
#include "wrp/stepsize.hpp"

namespace wrp {

namespace {

std::string fmt(std::initializer_list<std::pair<const char*, double>> values) {
  std::ostringstream s;
  s.precision(6);
  bool first = true;
  for (const auto& [k, v] : values) {
    s << (first ? "" : " ") << k << '=' << v;
    first = false;
  }
  return s.str();
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

CheckResult motivating_check() {
  const MotivatingExample ex = motivating_example(3.0, 3.0);
  const Eigen::Vector2d d = ex.newton_direction();
  const Eigen::Vector2d landed = Eigen::Vector2d(3.0, 3.0) + 0.03 * d;
  const double miss = (landed - Eigen::Vector2d(2.9, 0.0)).norm();
  CheckResult r{"motivating example", d(1) >= -102.0 && d(1) <= -100.0 && miss <= 0.05, {}};
  r.detail = fmt({{"direction_1", d(0)}, {"direction_2", d(1)}, {"step_w1", landed(0)},
                  {"step_w2", landed(1)}});
  return r;
}

CheckResult equivalence_check(CornerForm corner, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0), pos(0.1, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 5, m = 1 + trial % 3;
    ReparamConstants c;
    BatchStats b;
    for (std::size_t i = 0; i < n; ++i) {
      c.mu.push_back(u(rng));
      c.alpha2.push_back(pos(rng));
      b.mean_x.push_back(u(rng));
      b.mean_x2.push_back(pos(rng));
    }
    for (std::size_t j = 0; j < m; ++j) {
      c.beta2.push_back(pos(rng));
      b.mean_g.push_back(u(rng));
      b.mean_g2.push_back(pos(rng));
    }
    b.mean_gx = Tensor({m, n});
    for (double& v : b.mean_gx.data()) v = u(rng);
    const ReparamDelta d = reparam_delta(b, c);
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<double> grad{b.mean_g[j]};
      for (std::size_t i = 0; i < n; ++i) grad.push_back(b.mean_gx(j, i));
      const auto ref = block_matrix_delta(grad, c, j, corner);
      worst = std::max(worst, rel_err(d.delta_b[j], ref[0]));
      for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, rel_err(d.delta_w(j, i), ref[1 + i]));
    }
  }
  return {"update equals block-matrix product", worst <= 1e-12,
          fmt({{"trials", 1000}, {"max_rel_err", worst}})};
}

CheckResult curvature_check(std::mt19937_64& rng) {
  constexpr std::size_t n = 3, samples = 100000;
  std::normal_distribution<double> normal(0.0, 1.0);
  // Raw inputs with arbitrary mean/scale; canonical constants standardize them.
  const double means[n] = {1.5, -0.5, 3.0}, sds[n] = {2.0, 0.5, 1.0};
  Eigen::MatrixXd z(samples, n);
  std::vector<double> g(samples);
  MomentState state;
  state.initialized = true;
  state.mx.assign(means, means + n);
  state.mx2.resize(n);
  for (std::size_t i = 0; i < n; ++i) state.mx2[i] = sds[i] * sds[i] + means[i] * means[i];
  state.mg2 = {4.0};
  const ReparamConstants c = canonical_constants(state);
  std::vector<double> mean_z(n), mean_z2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::sqrt(c.alpha2[i]);
    mean_z[i] = a * (state.mx[i] - c.mu[i]);
    mean_z2[i] = c.alpha2[i] * (state.mx2[i] - 2.0 * c.mu[i] * state.mx[i] + c.mu[i] * c.mu[i]);
  }
  const CurvatureBlock approx =
      approx_block(mean_z, mean_z2, state.mg2[0], std::sqrt(c.beta2[0]));
  const double approx_err =
      (approx.matrix - Eigen::MatrixXd::Identity(n + 1, n + 1)).cwiseAbs().maxCoeff();

  for (std::size_t s = 0; s < samples; ++s) {
    g[s] = 2.0 * normal(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = means[i] + sds[i] * normal(rng);
      z(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) =
          std::sqrt(c.alpha2[i]) * (x - c.mu[i]);
    }
  }
  const FisherEstimate f = empirical_fisher_block(g, z, std::sqrt(c.beta2[0]));
  const Eigen::MatrixXd dev = f.block.matrix - Eigen::MatrixXd::Identity(n + 1, n + 1);
  const double worst_z = dev.cwiseAbs().cwiseQuotient(f.standard_error).maxCoeff();
  return {"curvature identity", approx_err <= 1e-15 && worst_z <= 3.0,
          fmt({{"approx_max_dev", approx_err}, {"fisher_max_se_units", worst_z}})};
}

CheckResult rmsprop_check(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr std::size_t dim = 8;
  RmsState a(dim, 0.1), b(dim, 0.1);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    Vector g(dim);
    for (double& v : g) v = normal(rng) * std::exp(normal(rng));
    RmsStep direct = rmsprop_step(a, g, 0.01, 1e-8);
    RmsStep trust = per_scalar_trust_step(b, g, 0.01, 1e-8);
    for (std::size_t k = 0; k < dim; ++k)
      worst = std::max(worst, rel_err(direct.step[k], trust.step[k]));
    a = std::move(direct.state);
    b = std::move(trust.state);
  }
  return {"rmsprop recovery", worst <= 1e-12, fmt({{"steps", 1000}, {"max_rel_err", worst}})};
}

CheckResult fanin_check(std::mt19937_64& rng) {
  constexpr std::size_t n = 256, samples = 100000;
  std::normal_distribution<double> normal(0.0, 1.0);
  FaninAccumulator acc;
  std::vector<double> x(n);
  for (std::size_t s = 0; s < samples; ++s) {
    for (double& v : x) v = normal(rng);
    acc.add(normal(rng), x);
  }
  const double est = acc.estimate();
  return {"fanin estimate", std::abs(est - 16.0) <= 1.6,
          fmt({{"n", n}, {"estimate", est}, {"target", 16.0}})};
}

CheckResult bias_check(std::uint64_t seed) {
  BiasExperimentParams p;
  p.g_const = 1.0;
  std::vector<double> bs, measured;
  bool within = true;
  std::ostringstream s;
  for (std::size_t b : {8, 32, 128}) {
    const BiasMeasurement m = coupling_bias_experiment(b, 100000, p, seed + b);
    within = within && std::abs(m.measured - m.predicted) <= 3.0 * m.standard_error;
    bs.push_back(static_cast<double>(b));
    measured.push_back(m.measured);
    s << "B" << b << "=" << m.measured << "(pred " << m.predicted << ") ";
  }
  const double slope = loglog_slope(bs, measured);
  s << "slope=" << slope;
  return {"coupling bias", within && slope >= -1.2 && slope <= -0.8, s.str()};
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::vector<CheckResult> out;
  out.push_back(motivating_check());
  out.push_back(equivalence_check(options.corner, rng));
  out.push_back(curvature_check(rng));
  out.push_back(rmsprop_check(rng));
  out.push_back(fanin_check(rng));
  out.push_back(bias_check(options.seed));
  return out;
}

int verify_cmd(const VerifyOptions& options, std::ostream& out) {
  bool ok = true;
  for (const CheckResult& r : run_verification(options)) {
    out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace wrp
