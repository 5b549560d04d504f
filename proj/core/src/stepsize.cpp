#include "wrp/stepsize.hpp"

#include <cmath>
#include <string>

#include "wrp/errors.hpp"

namespace wrp {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vector scaled(std::span<const double> v, double k) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = k * v[i];
  return out;
}

// Shared by every normalized form: eta * dir / sqrt(denominator), zero below the floor.
Vector normalized_step(std::span<const double> g_inv_grad, double denominator_sq, double eta) {
  if (!(denominator_sq >= kDenominatorFloor)) return Vector(g_inv_grad.size(), 0.0);
  return scaled(g_inv_grad, eta / std::sqrt(denominator_sq));
}

void check_pair(std::span<const double> grad, std::span<const double> g_inv_grad) {
  if (grad.size() != g_inv_grad.size()) {
    throw DimensionError("gradient and G^-1 gradient differ in length (" +
                         std::to_string(grad.size()) + " vs " +
                         std::to_string(g_inv_grad.size()) + ")");
  }
}

}  // namespace

void TrustRegionConfig::validate() const {
  if (!(eta > 0.0)) throw InputError("trust radius eta must be positive");
  if (!(mu_reg >= 0.0)) throw InputError("regularizer mu must be non-negative");
  if (mode == TrustMode::per_scalar && !(mu_reg > 0.0)) {
    throw InputError("per-scalar mode requires mu > 0");
  }
}

Vector global_trust_step(std::span<const double> grad, std::span<const double> g_inv_grad,
                         const TrustRegionConfig& cfg) {
  check_pair(grad, g_inv_grad);
  if (!(cfg.eta > 0.0)) throw InputError("trust radius eta must be positive");
  if (!cfg.normalize) return scaled(g_inv_grad, cfg.eta);
  return normalized_step(g_inv_grad, dot(grad, g_inv_grad), cfg.eta);
}

BlockSteps block_trust_step(std::span<const Vector> block_grads,
                            std::span<const Vector> block_g_inv_grads,
                            const TrustRegionConfig& cfg) {
  if (block_grads.size() != block_g_inv_grads.size()) {
    throw DimensionError("block counts differ");
  }
  BlockSteps out;
  for (std::size_t j = 0; j < block_grads.size(); ++j) {
    check_pair(block_grads[j], block_g_inv_grads[j]);
    const double den = dot(block_grads[j], block_g_inv_grads[j]);
    out.denominators.push_back(std::sqrt(std::max(den, 0.0)));
    out.steps.push_back(global_trust_step(block_grads[j], block_g_inv_grads[j], cfg));
  }
  return out;
}

BlockSteps regularized_block_step(std::span<const Vector> block_grads,
                                  std::span<const Vector> block_g_inv_grads,
                                  std::span<const double> expected_forms,
                                  const TrustRegionConfig& cfg) {
  if (block_grads.size() != block_g_inv_grads.size() ||
      block_grads.size() != expected_forms.size()) {
    throw DimensionError("block counts differ");
  }
  if (!(cfg.eta > 0.0) || !(cfg.mu_reg >= 0.0)) throw InputError("invalid trust-region config");
  BlockSteps out;
  for (std::size_t j = 0; j < block_grads.size(); ++j) {
    check_pair(block_grads[j], block_g_inv_grads[j]);
    const double den_sq = cfg.mu_reg + expected_forms[j];
    out.denominators.push_back(std::sqrt(std::max(den_sq, 0.0)));
    out.steps.push_back(normalized_step(block_g_inv_grads[j], den_sq, cfg.eta));
  }
  return out;
}

double expected_quadratic_form(std::span<const Vector> per_example_grads,
                               std::span<const Vector> per_example_g_inv_grads) {
  if (per_example_grads.size() != per_example_g_inv_grads.size() || per_example_grads.empty()) {
    throw DimensionError("expected_quadratic_form needs matching, non-empty sample sets");
  }
  double s = 0.0;
  for (std::size_t e = 0; e < per_example_grads.size(); ++e) {
    check_pair(per_example_grads[e], per_example_g_inv_grads[e]);
    s += dot(per_example_grads[e], per_example_g_inv_grads[e]);
  }
  return s / static_cast<double>(per_example_grads.size());
}

RmsState::RmsState(std::size_t size, double lambda_) : r(size, 0.0), lambda(lambda_) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw InputError("rmsprop decay must lie in (0,1], got " + std::to_string(lambda));
  }
}

RmsStep rmsprop_step(const RmsState& rms, std::span<const double> avg_grad, double eta,
                     double mu_reg) {
  if (avg_grad.size() != rms.r.size()) throw DimensionError("rmsprop_step: size mismatch");
  RmsStep out{Vector(avg_grad.size()), rms};
  for (std::size_t k = 0; k < avg_grad.size(); ++k) {
    const double g = avg_grad[k];
    double& r = out.state.r[k];
    r = (1.0 - rms.lambda) * r + rms.lambda * g * g;
    const double den = mu_reg + r;
    out.step[k] = den >= kDenominatorFloor ? -eta * g / std::sqrt(den) : 0.0;
  }
  return out;
}

RmsStep per_scalar_trust_step(const RmsState& rms, std::span<const double> avg_grad, double eta,
                              double mu_reg) {
  if (avg_grad.size() != rms.r.size()) throw DimensionError("per_scalar_trust_step: size mismatch");
  const std::size_t n = avg_grad.size();
  RmsState next = rms;
  std::vector<Vector> grads(n), g_inv(n);
  for (std::size_t k = 0; k < n; ++k) {
    grads[k] = {avg_grad[k]};
    g_inv[k] = {avg_grad[k]};  // G = I
    next.r[k] = (1.0 - rms.lambda) * rms.r[k] + rms.lambda * avg_grad[k] * avg_grad[k];
  }
  TrustRegionConfig cfg;
  cfg.eta = eta;
  cfg.mu_reg = mu_reg;
  cfg.mode = TrustMode::per_scalar;
  const BlockSteps bs = regularized_block_step(grads, g_inv, next.r, cfg);
  RmsStep out{Vector(n), std::move(next)};
  for (std::size_t k = 0; k < n; ++k) out.step[k] = -bs.steps[k][0];
  return out;
}

double fanin_scale(std::size_t fanin, std::size_t sharing) {
  const std::size_t ns = fanin * sharing;
  if (ns < 1) throw InputError("fanin_scale needs n*S >= 1");
  return 1.0 / std::sqrt(static_cast<double>(ns));
}

void FaninAccumulator::add(double g, std::span<const double> x) {
  const double g2 = g * g;
  double x2 = 0.0;
  for (double xi : x) x2 += xi * xi;
  num_ += x2 * g2;
  den_ += g2;
  ++samples_;
}

double FaninAccumulator::estimate() const {
  if (samples_ < 2) throw EstimationError("fanin_denominator_estimate needs at least 2 samples");
  if (!(den_ > 0.0)) throw EstimationError("fanin_denominator_estimate: gradient samples are all zero");
  return std::sqrt(num_ / den_);
}

double fanin_denominator_estimate(std::span<const double> g, std::span<const Vector> x) {
  if (g.size() != x.size()) throw DimensionError("fanin_denominator_estimate: sample counts differ");
  FaninAccumulator acc;
  for (std::size_t s = 0; s < g.size(); ++s) acc.add(g[s], x[s]);
  return acc.estimate();
}

}  // namespace wrp
