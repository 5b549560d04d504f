#include "wrp/network.hpp"

#include <algorithm>
#include <cmath>

#include "wrp/errors.hpp"

namespace wrp {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv: return "conv";
    case LayerKind::activation: return "activation";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

Shape batched(std::size_t batch, const Shape& per_example) {
  Shape s;
  s.reserve(per_example.size() + 1);
  s.push_back(batch);
  s.insert(s.end(), per_example.begin(), per_example.end());
  return s;
}

Network::Network(Shape input_shape) : input_shape_(std::move(input_shape)) {
  if (input_shape_.empty() || shape_size(input_shape_) == 0) {
    throw DimensionError("network input shape must be non-empty");
  }
  if (input_shape_.size() != 1 && input_shape_.size() != 3) {
    throw DimensionError("network input must be [D] or [C x H x W], got " +
                         shape_to_string(input_shape_));
  }
}

Shape Network::current_shape() const {
  return layers_.empty() ? input_shape_ : layers_.back().out_shape;
}

Shape Network::output_shape() const { return current_shape(); }

Layer& Network::push(LayerKind kind, const std::string& prefix, Shape out_shape) {
  const auto same = std::count_if(layers_.begin(), layers_.end(),
                                  [&](const Layer& l) { return l.name.rfind(prefix, 0) == 0; });
  Layer l;
  l.kind = kind;
  l.name = prefix + std::to_string(same + 1);
  l.in_shape = current_shape();
  l.out_shape = std::move(out_shape);
  layers_.push_back(std::move(l));
  caches_valid_ = false;
  return layers_.back();
}

Network& Network::add_flatten() {
  push(LayerKind::flatten, "flatten", Shape{shape_size(current_shape())});
  return *this;
}

Network& Network::add_linear(std::size_t units) {
  if (units == 0) throw DimensionError("linear layer needs at least one unit");
  if (current_shape().size() != 1) add_flatten();
  const std::size_t n = current_shape()[0];
  Layer& l = push(LayerKind::linear, "fc", Shape{units});
  l.params = LayerParams::linear(n, units);
  return *this;
}

Network& Network::add_conv(std::size_t channels, std::size_t k1, std::size_t k2) {
  const Shape in = current_shape();
  if (in.size() != 3) throw DimensionError("convolution needs a [C x H x W] input");
  if (channels == 0) throw DimensionError("convolution needs at least one output channel");
  const auto [oh, ow] = conv_output_extent(in[1], in[2], k1, k2);
  Layer& l = push(LayerKind::conv, "conv", Shape{channels, oh, ow});
  l.params = LayerParams::conv(in[0], channels, k1, k2);
  l.params.sharing = oh * ow;
  return *this;
}

Network& Network::add_activation(Activation kind) {
  Layer& l = push(LayerKind::activation, kind == Activation::relu ? "relu" : "tanh",
                  current_shape());
  l.activation = kind;
  return *this;
}

Network& Network::add_maxpool(std::size_t window) {
  const Shape in = current_shape();
  if (in.size() != 3) throw DimensionError("max pooling needs a [C x H x W] input");
  if (window == 0 || in[1] < window || in[2] < window || in[1] % window || in[2] % window) {
    throw DimensionError("pool window " + std::to_string(window) + " does not divide " +
                         std::to_string(in[1]) + "x" + std::to_string(in[2]));
  }
  Layer& l = push(LayerKind::maxpool, "pool", Shape{in[0], in[1] / window, in[2] / window});
  l.window = window;
  return *this;
}

Network& Network::add_batchnorm() {
  const Shape in = current_shape();
  Layer& l = push(LayerKind::batchnorm, "bn", in);
  l.bn = BatchNormState(in[0]);
  return *this;
}

void Network::initialize(std::mt19937_64& rng) {
  for (Layer& l : layers_) {
    if (!l.trainable()) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.params.connections()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& w : l.params.weights.data()) w = u(rng);
    for (double& b : l.params.bias.data()) b = u(rng);
  }
  caches_valid_ = false;
}

Tensor Network::forward(const Tensor& x, Mode mode) {
  if (x.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), x.shape().begin() + 1)) {
    throw DimensionError("network input " + shape_to_string(x.shape()) + " does not match " +
                         shape_to_string(input_shape_));
  }
  const std::size_t batch = x.shape()[0];
  Tensor h = x;
  for (Layer& l : layers_) {
    l.input = h;
    switch (l.kind) {
      case LayerKind::linear: h = linear_forward(h, l.params); break;
      case LayerKind::conv: h = conv_forward(h, l.params); break;
      case LayerKind::activation: h = activation_forward(l.activation, h); break;
      case LayerKind::maxpool: {
        PoolResult r = maxpool_forward(h, l.window);
        h = std::move(r.y);
        l.argmax = std::move(r.argmax);
        break;
      }
      case LayerKind::batchnorm: h = batchnorm_forward(h, l.bn, mode, &l.bn_cache); break;
      case LayerKind::flatten: h.reshape(batched(batch, l.out_shape)); break;
    }
  }
  caches_valid_ = true;
  return h;
}

Tensor Network::backward(const Tensor& g_out) {
  if (!caches_valid_) throw StateError("backward() without a preceding forward()");
  Tensor g = g_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    Layer& l = *it;
    switch (l.kind) {
      case LayerKind::linear:
      case LayerKind::conv: {
        l.grad_output = g;
        ParamGradients pg = l.kind == LayerKind::linear ? linear_backward(g, l.input, l.params)
                                                        : conv_backward(g, l.input, l.params);
        l.grad_w = std::move(pg.grad_w);
        l.grad_b = std::move(pg.grad_b);
        g = std::move(pg.g_x);
        break;
      }
      case LayerKind::activation: g = activation_backward(l.activation, l.input, g); break;
      case LayerKind::maxpool: g = maxpool_backward(g, l.input.shape(), l.argmax); break;
      case LayerKind::batchnorm: {
        BatchNormGradients bg = batchnorm_backward(g, l.bn_cache, l.bn);
        l.grad_scale = std::move(bg.grad_scale);
        l.grad_shift = std::move(bg.grad_shift);
        g = std::move(bg.g_x);
        break;
      }
      case LayerKind::flatten: g.reshape(l.input.shape()); break;
    }
  }
  caches_valid_ = false;
  return g;
}

Tensor Network::infer(const Tensor& x) const { return infer(x, {}); }

Tensor Network::infer(const Tensor& x,
                      const std::function<void(const Layer&, const Tensor&)>& visit) const {
  if (x.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), x.shape().begin() + 1)) {
    throw DimensionError("network input " + shape_to_string(x.shape()) + " does not match " +
                         shape_to_string(input_shape_));
  }
  const std::size_t batch = x.shape()[0];
  Tensor h = x;
  for (const Layer& l : layers_) {
    switch (l.kind) {
      case LayerKind::linear: h = linear_forward(h, l.params); break;
      case LayerKind::conv: h = conv_forward(h, l.params); break;
      case LayerKind::activation: h = activation_forward(l.activation, h); break;
      case LayerKind::maxpool: h = maxpool_forward(h, l.window).y; break;
      case LayerKind::batchnorm: {
        BatchNormState copy = l.bn;
        h = batchnorm_forward(h, copy, Mode::eval);
        break;
      }
      case LayerKind::flatten: h.reshape(batched(batch, l.out_shape)); break;
    }
    if (visit) visit(l, h);
  }
  return h;
}

std::vector<std::size_t> Network::trainable_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].trainable()) idx.push_back(i);
  }
  return idx;
}

bool Network::has_batchnorm() const noexcept {
  return std::any_of(layers_.begin(), layers_.end(),
                     [](const Layer& l) { return l.kind == LayerKind::batchnorm; });
}

std::size_t Network::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const Layer& l : layers_) {
    if (l.trainable()) n += l.params.weights.size() + l.params.bias.size();
    if (l.kind == LayerKind::batchnorm) n += 2 * l.bn.channels();
  }
  return n;
}

void Network::erase_layer(std::size_t index) {
  if (index >= layers_.size()) throw StateError("erase_layer: index out of range");
  layers_.erase(layers_.begin() + static_cast<std::ptrdiff_t>(index));
  caches_valid_ = false;
}

}  // namespace wrp
