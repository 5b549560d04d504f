#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "wrp/network.hpp"
#include "wrp/tensor.hpp"

namespace wrp {

/// Minibatch averages <.> feeding the zero-overhead update of one trainable layer.
///
/// `mean_x`/`mean_x2` are per input channel (pooled over spatial positions for a conv
/// layer), `mean_g`/`mean_g2` per output unit, and `mean_gx` is the averaged weight
/// gradient <g_j x_i>, shaped [m x n*K] with K the kernel positions (1 for linear).
/// For a conv layer `mean_g` is the averaged bias gradient (summed over positions) and
/// `mean_g2` the per-position average of g_j^2.
struct BatchStats {
  std::vector<double> mean_x;
  std::vector<double> mean_x2;
  std::vector<double> mean_g;
  std::vector<double> mean_g2;
  Tensor mean_gx;
  std::size_t kernel_positions = 1;

  std::size_t inputs() const noexcept { return mean_x.size(); }
  std::size_t outputs() const noexcept { return mean_g.size(); }
  bool all_finite() const noexcept;
};

/// x is [B x n], g holds per-example output gradients [B x m].
BatchStats linear_batch_stats(const Tensor& x, const Tensor& g);
/// x is [B x n x H x W], g holds per-example output gradients [B x m x H' x W'].
BatchStats conv_batch_stats(const Tensor& x, const Tensor& g, std::size_t k1, std::size_t k2);
/// Statistics of a trainable layer right after Network::backward(), reusing the stored
/// weight gradients. Output gradients are rescaled by the batch size to undo the 1/B of
/// the mean loss.
BatchStats layer_batch_stats(const Layer& layer);

/// Exponential moving averages of the input and gradient moments of one layer.
struct MomentState {
  std::vector<double> mx;
  std::vector<double> mx2;
  std::vector<double> mg2;
  double lambda = 0.95;
  bool initialized = false;

  explicit MomentState(double lambda = 0.95);
};

struct MomentUpdate {
  MomentState state;
  bool rejected = false;  // non-finite batch: state returned unchanged
};

/// acc <- lambda*acc + (1-lambda)*batch; the first accepted batch sets the accumulators.
MomentUpdate update_moments(const MomentState& state, const BatchStats& batch);

/// Floors and clamp ranges applied whenever constants are derived from moments.
struct ReparamBounds {
  double var_floor = 1e-8;
  double g2_floor = 1e-12;
  double alpha2_min = 1e-4;
  double alpha2_max = 1e4;
  double beta2_min = 1e-6;
  double beta2_max = 1e2;

  void validate() const;
};

/// mu_i, alpha_i^2 per input channel and beta_j^2 per output unit.
struct ReparamConstants {
  std::vector<double> mu;
  std::vector<double> alpha2;
  std::vector<double> beta2;

  /// mu = 0, alpha^2 = 1, beta^2 = 1: the update reduces to the plain gradient.
  static ReparamConstants identity(std::size_t inputs, std::size_t outputs);
  bool within(const ReparamBounds& bounds) const noexcept;
};

/// mu = E[x], alpha^2 = 1/Var[x], beta^2 = 1/(S * E[g^2]), floored and clamped.
ReparamConstants canonical_constants(const MomentState& state, const ReparamBounds& bounds = {},
                                     std::size_t sharing = 1);
/// Same mu and alpha^2; beta^2 = 1/sqrt(connections * sharing) for every unit.
ReparamConstants whitening_constants(const MomentState& state, std::size_t connections,
                                     std::size_t sharing, const ReparamBounds& bounds = {});

struct ReparamDelta {
  Tensor delta_w;  // weight-shaped
  Tensor delta_b;  // [m]
};

/// delta_w[j,i] = beta_j^2 alpha_i^2 (<g_j x_i> - mu_i <g_j>),
/// delta_b[j]   = beta_j^2 <g_j> - sum_i mu_i delta_w[j,i].
ReparamDelta reparam_delta(const BatchStats& batch, const ReparamConstants& c);
/// The same algebra per (input channel, kernel position) with channel-level mu and alpha^2.
/// delta_w is returned as [m x n x k1 x k2].
ReparamDelta conv_reparam_delta(const BatchStats& batch, const ReparamConstants& c,
                                std::size_t k1, std::size_t k2);

/// Work done by the per-example update, split into the O(n+m) precomputation of
/// beta^2 g and alpha^2 (x - mu) and the O(nm) accumulation shared with plain SGD.
struct OpCount {
  std::size_t precompute = 0;
  std::size_t accumulate = 0;
};

/// Example-by-example evaluation of the zero-overhead update for a linear layer.
ReparamDelta reparam_delta_per_example(const Tensor& x, const Tensor& g,
                                       const ReparamConstants& c, OpCount* ops = nullptr);

/// Corner entry of the per-unit rescaling block: `expanded` is 1 + sum alpha^2 mu^2 (what the
/// update formula implies), `printed_typo` is 1 + sum alpha^2 mu, kept for mutation tests.
enum class CornerForm { expanded, printed_typo };

/// Per-unit (n+1)x(n+1) rescaling block over coordinates (bias, w_1..w_n).
Eigen::MatrixXd rescaling_block(const ReparamConstants& c, std::size_t unit,
                                CornerForm corner = CornerForm::expanded);
/// Multiplies the averaged gradient (d/dw_0j, d/dw_1j, ..., d/dw_nj) by rescaling_block.
std::vector<double> block_matrix_delta(std::span<const double> avg_grad, const ReparamConstants& c,
                                       std::size_t unit, CornerForm corner = CornerForm::expanded);

/// Max |output difference| on `probe` when the constants held for the network are swapped.
/// Constants never enter the forward pass, so a correct implementation always returns 0.
double function_preservation_check(const Network& net,
                                   std::span<const ReparamConstants> old_constants,
                                   std::span<const ReparamConstants> new_constants,
                                   const Tensor& probe);

/// After Network::backward(): w -= stepsize * delta for every trainable layer, using the
/// constants of the matching entry of `constants` (one per trainable layer, in order).
void apply_reparam_update(Network& net, std::span<const ReparamConstants> constants,
                          double stepsize);

}  // namespace wrp

namespace wrp {

/// Forward pass of a linear layer through the new parameters v implied by (w, constants):
/// y_j = beta_j (v_0j + sum_i alpha_i (x_i - mu_i) v_ij). Used only to check that the
/// reparametrization leaves the layer function unchanged.
Tensor linear_forward_reparametrized(const Tensor& x, const LayerParams& p,
                                     const ReparamConstants& c);

}  // namespace wrp
