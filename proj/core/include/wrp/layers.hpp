#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wrp/tensor.hpp"

namespace wrp {

/// Weights and bias of a trainable linear or convolutional layer.
///
/// Linear: weights [m x n]. Convolution: weights [m x n x k1 x k2] where n counts input
/// channels. `sharing` is the number of kernel applications per example (1 for linear).
struct LayerParams {
  Tensor weights;
  Tensor bias;
  std::size_t fanin = 0;
  std::size_t fanout = 0;
  std::size_t sharing = 1;

  static LayerParams linear(std::size_t fanin, std::size_t fanout);
  static LayerParams conv(std::size_t in_channels, std::size_t out_channels, std::size_t k1,
                          std::size_t k2);

  bool is_conv() const noexcept { return weights.rank() == 4; }
  /// k1*k2 for a convolution, 1 for a linear layer.
  std::size_t kernel_positions() const noexcept;
  /// Incoming connections per output unit (n for linear, n*k1*k2 for conv).
  std::size_t connections() const noexcept { return fanin * kernel_positions(); }

  /// Throws DimensionError when shapes disagree with fanin/fanout/sharing.
  void validate() const;
};

struct ParamGradients {
  Tensor g_x;
  Tensor grad_w;
  Tensor grad_b;
};

Tensor linear_forward(const Tensor& x, const LayerParams& p);
ParamGradients linear_backward(const Tensor& g_y, const Tensor& x, const LayerParams& p);

/// Valid (unpadded, stride 1) cross-correlation.
Tensor conv_forward(const Tensor& x, const LayerParams& p);
ParamGradients conv_backward(const Tensor& g_y, const Tensor& x, const LayerParams& p);

/// Output spatial extents of a valid convolution; DimensionError if the kernel does not fit.
std::pair<std::size_t, std::size_t> conv_output_extent(std::size_t h, std::size_t w,
                                                       std::size_t k1, std::size_t k2);

enum class Activation { relu, tanh };

Tensor activation_forward(Activation kind, const Tensor& x);
/// relu'(0) is taken as 0.
Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& g_y);

struct PoolResult {
  Tensor y;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Non-overlapping k x k max pooling; ties go to the first element in row-major window order.
PoolResult maxpool_forward(const Tensor& x, std::size_t window);
Tensor maxpool_backward(const Tensor& g_y, const Shape& x_shape,
                        std::span<const std::size_t> argmax);

struct LossResult {
  double loss = 0.0;
  Tensor g_logits;
};

/// Mean over the batch of -log softmax(logits)[label]; gradient is (softmax - onehot) / B.
LossResult softmax_xent(const Tensor& logits, std::span<const int> labels);

enum class Mode { train, eval };

/// Per-channel batch normalization over [B x C] or [B x C x H x W] inputs.
struct BatchNormState {
  Tensor scale;
  Tensor shift;
  Tensor running_mean;
  Tensor running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;
  std::size_t updates = 0;

  explicit BatchNormState(std::size_t channels = 0);
  std::size_t channels() const noexcept { return scale.size(); }
};

struct BatchNormCache {
  Tensor x_hat;
  std::vector<double> inv_std;
  Mode mode = Mode::train;
};

struct BatchNormGradients {
  Tensor g_x;
  Tensor grad_scale;
  Tensor grad_shift;
};

/// Train mode normalizes with minibatch statistics and updates the running averages.
Tensor batchnorm_forward(const Tensor& x, BatchNormState& state, Mode mode,
                         BatchNormCache* cache = nullptr);
BatchNormGradients batchnorm_backward(const Tensor& g_y, const BatchNormCache& cache,
                                      const BatchNormState& state);

}  // namespace wrp
