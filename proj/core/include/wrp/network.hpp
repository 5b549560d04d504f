#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "wrp/layers.hpp"
#include "wrp/tensor.hpp"

namespace wrp {

enum class LayerKind { linear, conv, activation, maxpool, batchnorm, flatten };

const char* to_string(LayerKind kind);

/// One stage of a feedforward network together with the caches its backward pass needs.
struct Layer {
  LayerKind kind = LayerKind::flatten;
  std::string name;
  Shape in_shape;   // per example
  Shape out_shape;  // per example

  LayerParams params;  // linear, conv
  Tensor grad_w;
  Tensor grad_b;

  Activation activation = Activation::relu;
  std::size_t window = 2;

  BatchNormState bn;
  Tensor grad_scale;
  Tensor grad_shift;

  // Valid only between a forward() and the matching backward().
  Tensor input;
  Tensor grad_output;
  std::vector<std::size_t> argmax;
  BatchNormCache bn_cache;

  bool trainable() const noexcept { return kind == LayerKind::linear || kind == LayerKind::conv; }
};

/// Ordered stack of layers over a fixed per-example input shape.
class Network {
 public:
  explicit Network(Shape input_shape);

  Network& add_linear(std::size_t units);
  Network& add_conv(std::size_t channels, std::size_t k1, std::size_t k2);
  Network& add_activation(Activation kind);
  Network& add_maxpool(std::size_t window);
  Network& add_batchnorm();
  Network& add_flatten();

  /// Uniform(-1/sqrt(c), 1/sqrt(c)) for weights and bias, c the unit's incoming connections.
  /// Only trainable layers draw from the generator.
  void initialize(std::mt19937_64& rng);

  /// Batched forward pass; input is [B x input_shape...]. Refreshes every cache.
  Tensor forward(const Tensor& x, Mode mode = Mode::train);
  /// Backpropagates the gradient of the loss w.r.t. the network output.
  Tensor backward(const Tensor& g_out);
  /// Eval-mode forward that leaves caches and running statistics untouched.
  Tensor infer(const Tensor& x) const;
  /// As infer(), calling `visit` with each layer and its output.
  Tensor infer(const Tensor& x,
               const std::function<void(const Layer&, const Tensor&)>& visit) const;

  const Shape& input_shape() const noexcept { return input_shape_; }
  Shape output_shape() const;
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<std::size_t> trainable_indices() const;
  bool has_batchnorm() const noexcept;
  std::size_t parameter_count() const noexcept;

  /// Removes layer `index` (used when batch-norm layers are folded away).
  void erase_layer(std::size_t index);

 private:
  Layer& push(LayerKind kind, const std::string& prefix, Shape out_shape);
  Shape current_shape() const;

  Shape input_shape_;
  std::vector<Layer> layers_;
  bool caches_valid_ = false;
};

Shape batched(std::size_t batch, const Shape& per_example);

}  // namespace wrp
