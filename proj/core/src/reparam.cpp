#include "wrp/reparam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wrp/errors.hpp"

namespace wrp {

namespace {

bool finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

void check_constants(const BatchStats& batch, const ReparamConstants& c) {
  if (c.mu.size() != batch.inputs() || c.alpha2.size() != batch.inputs() ||
      c.beta2.size() != batch.outputs()) {
    throw DimensionError("constants (" + std::to_string(c.mu.size()) + " inputs, " +
                         std::to_string(c.beta2.size()) + " outputs) do not match batch (" +
                         std::to_string(batch.inputs()) + ", " +
                         std::to_string(batch.outputs()) + ")");
  }
  if (batch.mean_gx.shape() !=
      Shape({batch.outputs(), batch.inputs() * batch.kernel_positions})) {
    throw DimensionError("mean_gx shape " + shape_to_string(batch.mean_gx.shape()));
  }
}

// Shared algebra for linear (K = 1) and conv layers.
ReparamDelta delta_impl(const BatchStats& batch, const ReparamConstants& c) {
  check_constants(batch, c);
  const std::size_t n = batch.inputs(), m = batch.outputs(), k = batch.kernel_positions;
  ReparamDelta d{Tensor({m, n * k}), Tensor({m})};
  for (std::size_t j = 0; j < m; ++j) {
    const double b2 = c.beta2[j];
    const double gj = batch.mean_g[j];
    double correction = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double scale = b2 * c.alpha2[i];
      for (std::size_t v = 0; v < k; ++v) {
        const std::size_t col = i * k + v;
        const double dw = scale * (batch.mean_gx(j, col) - c.mu[i] * gj);
        d.delta_w(j, col) = dw;
        correction += c.mu[i] * dw;
      }
    }
    d.delta_b[j] = b2 * gj - correction;
  }
  return d;
}

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

void input_constants(const MomentState& state, const ReparamBounds& bounds, ReparamConstants& c) {
  if (!state.initialized) throw StateError("moment state used before its first update");
  bounds.validate();
  const std::size_t n = state.mx.size();
  c.mu = state.mx;
  c.alpha2.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double var = std::max(state.mx2[i] - state.mx[i] * state.mx[i], bounds.var_floor);
    c.alpha2[i] = clamp(1.0 / var, bounds.alpha2_min, bounds.alpha2_max);
  }
}

}  // namespace

bool BatchStats::all_finite() const noexcept {
  return finite(mean_x) && finite(mean_x2) && finite(mean_g) && finite(mean_g2) &&
         mean_gx.all_finite();
}

BatchStats linear_batch_stats(const Tensor& x, const Tensor& g) {
  if (x.rank() != 2 || g.rank() != 2 || x.shape()[0] != g.shape()[0] || x.shape()[0] == 0) {
    throw DimensionError("linear_batch_stats: x " + shape_to_string(x.shape()) + ", g " +
                         shape_to_string(g.shape()));
  }
  const std::size_t batch = x.shape()[0], n = x.shape()[1], m = g.shape()[1];
  const double inv_b = 1.0 / static_cast<double>(batch);
  BatchStats s;
  s.mean_x.assign(n, 0.0);
  s.mean_x2.assign(n, 0.0);
  s.mean_g.assign(m, 0.0);
  s.mean_g2.assign(m, 0.0);
  s.mean_gx = Tensor({m, n});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      s.mean_x[i] += x(b, i) * inv_b;
      s.mean_x2[i] += x(b, i) * x(b, i) * inv_b;
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double gj = g(b, j);
      s.mean_g[j] += gj * inv_b;
      s.mean_g2[j] += gj * gj * inv_b;
      for (std::size_t i = 0; i < n; ++i) s.mean_gx(j, i) += gj * x(b, i) * inv_b;
    }
  }
  return s;
}

namespace {

void pooled_input_moments(const Tensor& x, BatchStats& s) {
  const std::size_t batch = x.shape()[0], n = x.shape()[1];
  const std::size_t plane = x.shape()[2] * x.shape()[3];
  const double inv = 1.0 / static_cast<double>(batch * plane);
  s.mean_x.assign(n, 0.0);
  s.mean_x2.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* p = x.data().data() + (b * n + i) * plane;
      for (std::size_t u = 0; u < plane; ++u) {
        s1 += p[u];
        s2 += p[u] * p[u];
      }
    }
    s.mean_x[i] = s1 * inv;
    s.mean_x2[i] = s2 * inv;
  }
}

}  // namespace

BatchStats conv_batch_stats(const Tensor& x, const Tensor& g, std::size_t k1, std::size_t k2) {
  if (x.rank() != 4 || g.rank() != 4 || x.shape()[0] != g.shape()[0] || x.shape()[0] == 0) {
    throw DimensionError("conv_batch_stats: x " + shape_to_string(x.shape()) + ", g " +
                         shape_to_string(g.shape()));
  }
  const std::size_t batch = x.shape()[0], n = x.shape()[1], m = g.shape()[1];
  const auto [oh, ow] = conv_output_extent(x.shape()[2], x.shape()[3], k1, k2);
  if (g.shape()[2] != oh || g.shape()[3] != ow) {
    throw DimensionError("conv_batch_stats: gradient extent does not match kernel geometry");
  }
  BatchStats s;
  s.kernel_positions = k1 * k2;
  pooled_input_moments(x, s);

  LayerParams probe = LayerParams::conv(n, m, k1, k2);
  Tensor g_avg = g;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (double& v : g_avg.data()) v *= inv_b;
  ParamGradients pg = conv_backward(g_avg, x, probe);
  s.mean_gx = pg.grad_w.reshaped({m, n * k1 * k2});
  s.mean_g = pg.grad_b.values();

  const std::size_t plane = oh * ow;
  s.mean_g2.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* p = g.data().data() + (b * m + j) * plane;
      for (std::size_t u = 0; u < plane; ++u) acc += p[u] * p[u];
    }
    s.mean_g2[j] = acc / static_cast<double>(batch * plane);
  }
  return s;
}

BatchStats layer_batch_stats(const Layer& layer) {
  if (!layer.trainable()) throw StateError("layer_batch_stats on non-trainable layer " + layer.name);
  if (layer.grad_output.empty() || layer.grad_w.empty()) {
    throw StateError("layer_batch_stats before backward() on " + layer.name);
  }
  const Tensor& x = layer.input;
  const std::size_t batch = x.shape()[0];
  const double scale = static_cast<double>(batch);
  const LayerParams& p = layer.params;
  BatchStats s;
  s.mean_g = layer.grad_b.values();
  s.mean_g2.assign(p.fanout, 0.0);
  if (layer.kind == LayerKind::linear) {
    const std::size_t n = p.fanin;
    s.mean_x.assign(n, 0.0);
    s.mean_x2.assign(n, 0.0);
    const double inv_b = 1.0 / scale;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        s.mean_x[i] += x(b, i) * inv_b;
        s.mean_x2[i] += x(b, i) * x(b, i) * inv_b;
      }
    }
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < p.fanout; ++j) {
        const double gj = layer.grad_output(b, j) * scale;
        s.mean_g2[j] += gj * gj * inv_b;
      }
    }
    s.mean_gx = layer.grad_w;
  } else {
    pooled_input_moments(x, s);
    s.kernel_positions = p.kernel_positions();
    s.mean_gx = layer.grad_w.reshaped({p.fanout, p.fanin * s.kernel_positions});
    const std::size_t plane = layer.grad_output.shape()[2] * layer.grad_output.shape()[3];
    for (std::size_t j = 0; j < p.fanout; ++j) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* q = layer.grad_output.data().data() + (b * p.fanout + j) * plane;
        for (std::size_t u = 0; u < plane; ++u) acc += q[u] * q[u];
      }
      // per-example gradient is B * stored gradient; average over B * plane entries
      s.mean_g2[j] = acc * scale / static_cast<double>(plane);
    }
  }
  return s;
}

MomentState::MomentState(double lambda_) : lambda(lambda_) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw InputError("moment decay must lie in (0,1), got " + std::to_string(lambda));
  }
}

MomentUpdate update_moments(const MomentState& state, const BatchStats& batch) {
  if (!(finite(batch.mean_x) && finite(batch.mean_x2) && finite(batch.mean_g2))) {
    return {state, true};
  }
  MomentUpdate out{state, false};
  MomentState& s = out.state;
  if (!s.initialized) {
    s.mx = batch.mean_x;
    s.mx2 = batch.mean_x2;
    s.mg2 = batch.mean_g2;
    s.initialized = true;
    return out;
  }
  if (s.mx.size() != batch.inputs() || s.mg2.size() != batch.outputs()) {
    throw DimensionError("update_moments: batch shape differs from moment state");
  }
  const double keep = s.lambda, blend = 1.0 - s.lambda;
  for (std::size_t i = 0; i < s.mx.size(); ++i) {
    s.mx[i] = keep * s.mx[i] + blend * batch.mean_x[i];
    s.mx2[i] = keep * s.mx2[i] + blend * batch.mean_x2[i];
  }
  for (std::size_t j = 0; j < s.mg2.size(); ++j) {
    s.mg2[j] = keep * s.mg2[j] + blend * batch.mean_g2[j];
  }
  return out;
}

void ReparamBounds::validate() const {
  if (!(var_floor > 0.0 && g2_floor > 0.0 && alpha2_min > 0.0 && beta2_min > 0.0 &&
        alpha2_min <= alpha2_max && beta2_min <= beta2_max)) {
    throw InputError("reparametrization bounds must be positive with min <= max");
  }
}

ReparamConstants ReparamConstants::identity(std::size_t inputs, std::size_t outputs) {
  return {std::vector<double>(inputs, 0.0), std::vector<double>(inputs, 1.0),
          std::vector<double>(outputs, 1.0)};
}

bool ReparamConstants::within(const ReparamBounds& b) const noexcept {
  const auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  return std::all_of(alpha2.begin(), alpha2.end(),
                     [&](double v) { return in(v, b.alpha2_min, b.alpha2_max); }) &&
         std::all_of(beta2.begin(), beta2.end(),
                     [&](double v) { return in(v, b.beta2_min, b.beta2_max); });
}

ReparamConstants canonical_constants(const MomentState& state, const ReparamBounds& bounds,
                                     std::size_t sharing) {
  if (sharing == 0) throw InputError("sharing count must be >= 1");
  ReparamConstants c;
  input_constants(state, bounds, c);
  c.beta2.resize(state.mg2.size());
  for (std::size_t j = 0; j < c.beta2.size(); ++j) {
    const double eg2 = std::max(state.mg2[j], bounds.g2_floor);
    c.beta2[j] = clamp(1.0 / (static_cast<double>(sharing) * eg2), bounds.beta2_min,
                       bounds.beta2_max);
  }
  return c;
}

ReparamConstants whitening_constants(const MomentState& state, std::size_t connections,
                                     std::size_t sharing, const ReparamBounds& bounds) {
  if (connections * sharing < 1) throw InputError("whitening constants need n*S >= 1");
  ReparamConstants c;
  input_constants(state, bounds, c);
  const double b2 = clamp(1.0 / std::sqrt(static_cast<double>(connections * sharing)),
                          bounds.beta2_min, bounds.beta2_max);
  c.beta2.assign(state.mg2.size(), b2);
  return c;
}

ReparamDelta reparam_delta(const BatchStats& batch, const ReparamConstants& c) {
  if (batch.kernel_positions != 1) {
    throw DimensionError("reparam_delta on convolution statistics; use conv_reparam_delta");
  }
  return delta_impl(batch, c);
}

ReparamDelta conv_reparam_delta(const BatchStats& batch, const ReparamConstants& c,
                                std::size_t k1, std::size_t k2) {
  if (batch.kernel_positions != k1 * k2) {
    throw DimensionError("conv_reparam_delta: statistics carry " +
                         std::to_string(batch.kernel_positions) + " kernel positions, kernel is " +
                         std::to_string(k1) + "x" + std::to_string(k2));
  }
  ReparamDelta d = delta_impl(batch, c);
  d.delta_w.reshape({batch.outputs(), batch.inputs(), k1, k2});
  return d;
}

ReparamDelta reparam_delta_per_example(const Tensor& x, const Tensor& g,
                                       const ReparamConstants& c, OpCount* ops) {
  if (x.rank() != 2 || g.rank() != 2 || x.shape()[0] != g.shape()[0] || x.shape()[0] == 0) {
    throw DimensionError("reparam_delta_per_example: x " + shape_to_string(x.shape()) + ", g " +
                         shape_to_string(g.shape()));
  }
  const std::size_t batch = x.shape()[0], n = x.shape()[1], m = g.shape()[1];
  if (c.mu.size() != n || c.alpha2.size() != n || c.beta2.size() != m) {
    throw DimensionError("reparam_delta_per_example: constants do not match layer shape");
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  ReparamDelta d{Tensor({m, n}), Tensor({m})};
  std::vector<double> a(m), z(n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < m; ++j) a[j] = c.beta2[j] * g(b, j);
    for (std::size_t i = 0; i < n; ++i) z[i] = c.alpha2[i] * (x(b, i) - c.mu[i]);
    if (ops) ops->precompute += n + m;
    for (std::size_t j = 0; j < m; ++j) {
      d.delta_b[j] += a[j] * inv_b;
      for (std::size_t i = 0; i < n; ++i) d.delta_w(j, i) += a[j] * z[i] * inv_b;
    }
    if (ops) ops->accumulate += n * m;
  }
  for (std::size_t j = 0; j < m; ++j) {
    double correction = 0.0;
    for (std::size_t i = 0; i < n; ++i) correction += c.mu[i] * d.delta_w(j, i);
    d.delta_b[j] -= correction;
  }
  return d;
}

Eigen::MatrixXd rescaling_block(const ReparamConstants& c, std::size_t unit, CornerForm corner) {
  if (unit >= c.beta2.size() || c.alpha2.size() != c.mu.size()) {
    throw DimensionError("rescaling_block: unit " + std::to_string(unit) + " out of range");
  }
  const std::size_t n = c.mu.size();
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(n + 1, n + 1);
  double corner_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a2mu = c.alpha2[i] * c.mu[i];
    block(0, i + 1) = -a2mu;
    block(i + 1, 0) = -a2mu;
    block(i + 1, i + 1) = c.alpha2[i];
    corner_sum += corner == CornerForm::expanded ? a2mu * c.mu[i] : a2mu;
  }
  block(0, 0) = 1.0 + corner_sum;
  return c.beta2[unit] * block;
}

std::vector<double> block_matrix_delta(std::span<const double> avg_grad, const ReparamConstants& c,
                                       std::size_t unit, CornerForm corner) {
  if (avg_grad.size() != c.mu.size() + 1) {
    throw DimensionError("block_matrix_delta: gradient has " + std::to_string(avg_grad.size()) +
                         " entries, block needs " + std::to_string(c.mu.size() + 1));
  }
  const Eigen::MatrixXd block = rescaling_block(c, unit, corner);
  const Eigen::Map<const Eigen::VectorXd> grad(avg_grad.data(),
                                               static_cast<Eigen::Index>(avg_grad.size()));
  const Eigen::VectorXd out = block * grad;
  return {out.data(), out.data() + out.size()};
}

double function_preservation_check(const Network& net,
                                   std::span<const ReparamConstants> old_constants,
                                   std::span<const ReparamConstants> new_constants,
                                   const Tensor& probe) {
  if (old_constants.size() != new_constants.size()) {
    throw DimensionError("function_preservation_check: constant sets differ in length");
  }
  // The held constants are an optimizer-side table; swapping them leaves `net` untouched.
  std::vector<ReparamConstants> held(old_constants.begin(), old_constants.end());
  const Tensor before = net.infer(probe);
  held.assign(new_constants.begin(), new_constants.end());
  const Tensor after = net.infer(probe);
  return max_abs_diff(before, after);
}

void apply_reparam_update(Network& net, std::span<const ReparamConstants> constants,
                          double stepsize) {
  const std::vector<std::size_t> idx = net.trainable_indices();
  if (idx.size() != constants.size()) {
    throw DimensionError("apply_reparam_update: one constant set per trainable layer required");
  }
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Layer& l = net.layers()[idx[k]];
    const BatchStats stats = layer_batch_stats(l);
    ReparamDelta d = l.kind == LayerKind::conv
                         ? conv_reparam_delta(stats, constants[k], l.params.weights.shape()[2],
                                              l.params.weights.shape()[3])
                         : reparam_delta(stats, constants[k]);
    auto w = l.params.weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= stepsize * d.delta_w[i];
    for (std::size_t j = 0; j < l.params.bias.size(); ++j) {
      l.params.bias[j] -= stepsize * d.delta_b[j];
    }
  }
}

Tensor linear_forward_reparametrized(const Tensor& x, const LayerParams& p,
                                     const ReparamConstants& c) {
  const std::size_t n = p.fanin, m = p.fanout;
  if (c.mu.size() != n || c.beta2.size() != m) {
    throw DimensionError("linear_forward_reparametrized: constants do not match layer");
  }
  if (x.rank() != 2 || x.shape()[1] != n) throw DimensionError("linear_forward_reparametrized: x");
  std::vector<double> alpha(n), beta(m);
  for (std::size_t i = 0; i < n; ++i) alpha[i] = std::sqrt(c.alpha2[i]);
  for (std::size_t j = 0; j < m; ++j) beta[j] = std::sqrt(c.beta2[j]);
  // w_ij = alpha_i beta_j v_ij ; w_0j = beta_j v_0j - sum_i mu_i w_ij
  Tensor v({m, n});
  std::vector<double> v0(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = p.bias[j];
    for (std::size_t i = 0; i < n; ++i) {
      v(j, i) = p.weights(j, i) / (alpha[i] * beta[j]);
      s += c.mu[i] * p.weights(j, i);
    }
    v0[j] = s / beta[j];
  }
  const std::size_t batch = x.shape()[0];
  Tensor y({batch, m});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = v0[j];
      for (std::size_t i = 0; i < n; ++i) acc += alpha[i] * (x(b, i) - c.mu[i]) * v(j, i);
      y(b, j) = beta[j] * acc;
    }
  }
  return y;
}

}  // namespace wrp
