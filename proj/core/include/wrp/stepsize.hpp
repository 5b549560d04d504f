#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace wrp {

using Vector = std::vector<double>;

enum class TrustMode { global, per_block, per_scalar };

/// Trust radius eta, regularizer mu_reg, and normalization mode.
///
/// With `normalize = false` the trust step degenerates to the plain natural-gradient step
/// eta * G^-1 grad (eta acting as the Lagrangian stepsize).
struct TrustRegionConfig {
  double eta = 1.0;
  double mu_reg = 0.0;
  TrustMode mode = TrustMode::global;
  bool normalize = true;

  void validate() const;
};

/// Denominators below this are treated as zero and produce a zero step.
inline constexpr double kDenominatorFloor = 1e-30;

/// eta * G^-1 grad / sqrt(grad' G^-1 grad). The result is the displacement along the
/// natural-gradient direction; a descent update subtracts it.
Vector global_trust_step(std::span<const double> grad, std::span<const double> g_inv_grad,
                         const TrustRegionConfig& cfg);

struct BlockSteps {
  std::vector<Vector> steps;
  std::vector<double> denominators;
};

/// global_trust_step applied to each block separately.
BlockSteps block_trust_step(std::span<const Vector> block_grads,
                            std::span<const Vector> block_g_inv_grads,
                            const TrustRegionConfig& cfg);

/// eta * G_jj^-1 <grad_j> / sqrt(mu + E[grad_j' G_jj^-1 grad_j]) per block, where
/// `expected_forms[j]` estimates the expectation of the per-example quadratic form.
BlockSteps regularized_block_step(std::span<const Vector> block_grads,
                                  std::span<const Vector> block_g_inv_grads,
                                  std::span<const double> expected_forms,
                                  const TrustRegionConfig& cfg);

/// Sample mean of grad_e' G^-1 grad_e over per-example gradients, given G^-1 grad_e.
double expected_quadratic_form(std::span<const Vector> per_example_grads,
                               std::span<const Vector> per_example_g_inv_grads);

/// Per-weight squared-gradient accumulator R with R(t) = (1-lambda) R(t-1) + lambda g^2.
struct RmsState {
  Vector r;
  double lambda = 0.1;

  RmsState(std::size_t size, double lambda);
};

struct RmsStep {
  Vector step;
  RmsState state;
};

/// Updates R first, then step = -eta * g / sqrt(mu + R).
RmsStep rmsprop_step(const RmsState& rms, std::span<const double> avg_grad, double eta,
                     double mu_reg);

/// The same update obtained from regularized_block_step with one block per weight, G = I,
/// and the expectation of the squared gradient tracked by R. Returns the descent displacement.
RmsStep per_scalar_trust_step(const RmsState& rms, std::span<const double> avg_grad, double eta,
                              double mu_reg);

/// 1/sqrt(n*S): stepsize multiplier for a layer with fanin n and sharing count S.
double fanin_scale(std::size_t fanin, std::size_t sharing);

/// Monte-Carlo estimate of sqrt(E[sum_i x_i^2 g^2] / E[g^2]) for one unit from paired
/// samples of its gradient g and inputs x. Throws EstimationError for fewer than two
/// samples or an all-zero gradient.
double fanin_denominator_estimate(std::span<const double> g, std::span<const Vector> x);

/// Streaming form of fanin_denominator_estimate for sample sets too large to hold.
class FaninAccumulator {
 public:
  void add(double g, std::span<const double> x);
  std::size_t samples() const noexcept { return samples_; }
  /// Same errors as fanin_denominator_estimate.
  double estimate() const;

 private:
  double num_ = 0.0;
  double den_ = 0.0;
  std::size_t samples_ = 0;
};

}  // namespace wrp
