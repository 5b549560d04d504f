#include "wrp/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include "wrp/errors.hpp"

namespace wrp {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace

LayerParams LayerParams::linear(std::size_t fanin, std::size_t fanout) {
  LayerParams p;
  p.weights = Tensor({fanout, fanin});
  p.bias = Tensor({fanout});
  p.fanin = fanin;
  p.fanout = fanout;
  p.sharing = 1;
  return p;
}

LayerParams LayerParams::conv(std::size_t in_channels, std::size_t out_channels, std::size_t k1,
                              std::size_t k2) {
  LayerParams p;
  p.weights = Tensor({out_channels, in_channels, k1, k2});
  p.bias = Tensor({out_channels});
  p.fanin = in_channels;
  p.fanout = out_channels;
  p.sharing = 1;
  return p;
}

std::size_t LayerParams::kernel_positions() const noexcept {
  return is_conv() ? weights.shape()[2] * weights.shape()[3] : 1;
}

void LayerParams::validate() const {
  require(sharing >= 1, "sharing count must be >= 1");
  require(bias.rank() == 1 && bias.size() == fanout, "bias must be [fanout]");
  if (is_conv()) {
    require(weights.shape()[0] == fanout && weights.shape()[1] == fanin,
            "conv weights must be [fanout x fanin x k1 x k2]");
  } else {
    require(weights.rank() == 2 && weights.shape()[0] == fanout && weights.shape()[1] == fanin,
            "linear weights must be [fanout x fanin]");
    require(sharing == 1, "linear layers have sharing count 1");
  }
}

Tensor linear_forward(const Tensor& x, const LayerParams& p) {
  require(x.rank() == 2 && x.shape()[1] == p.fanin,
          "linear_forward: input " + shape_to_string(x.shape()) + " vs fanin " +
              std::to_string(p.fanin));
  require(!p.is_conv(), "linear_forward: conv parameters");
  const std::size_t batch = x.shape()[0], n = p.fanin, m = p.fanout;
  Tensor y({batch, m});
  const double* w = p.weights.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data().data() + b * n;
    for (std::size_t j = 0; j < m; ++j) {
      const double* wj = w + j * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += xb[i] * wj[i];
      y(b, j) = p.bias[j] + acc;
    }
  }
  return y;
}

ParamGradients linear_backward(const Tensor& g_y, const Tensor& x, const LayerParams& p) {
  require(x.rank() == 2 && x.shape()[1] == p.fanin, "linear_backward: input shape");
  require(g_y.rank() == 2 && g_y.shape()[0] == x.shape()[0] && g_y.shape()[1] == p.fanout,
          "linear_backward: gradient shape " + shape_to_string(g_y.shape()));
  const std::size_t batch = x.shape()[0], n = p.fanin, m = p.fanout;
  ParamGradients out{Tensor({batch, n}), Tensor({m, n}), Tensor({m})};
  const double* w = p.weights.data().data();
  double* gw = out.grad_w.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data().data() + b * n;
    double* gxb = out.g_x.data().data() + b * n;
    for (std::size_t j = 0; j < m; ++j) {
      const double g = g_y(b, j);
      out.grad_b[j] += g;
      double* gwj = gw + j * n;
      const double* wj = w + j * n;
      for (std::size_t i = 0; i < n; ++i) {
        gwj[i] += g * xb[i];
        gxb[i] += g * wj[i];
      }
    }
  }
  return out;
}

std::pair<std::size_t, std::size_t> conv_output_extent(std::size_t h, std::size_t w,
                                                       std::size_t k1, std::size_t k2) {
  require(k1 >= 1 && k2 >= 1, "kernel extents must be positive");
  require(k1 <= h && k2 <= w,
          "kernel " + std::to_string(k1) + "x" + std::to_string(k2) + " larger than input " +
              std::to_string(h) + "x" + std::to_string(w));
  return {h - k1 + 1, w - k2 + 1};
}

namespace {

// Unrolls one example into col[(i*k1+v1)*k2+v2][u1*ow+u2].
void im2col(const double* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k1,
            std::size_t k2, std::size_t oh, std::size_t ow, double* col) {
  const std::size_t plane = oh * ow;
  for (std::size_t i = 0; i < channels; ++i) {
    for (std::size_t v1 = 0; v1 < k1; ++v1) {
      for (std::size_t v2 = 0; v2 < k2; ++v2) {
        double* dst = col + ((i * k1 + v1) * k2 + v2) * plane;
        for (std::size_t u1 = 0; u1 < oh; ++u1) {
          const double* src = x + (i * h + u1 + v1) * w + v2;
          std::copy(src, src + ow, dst + u1 * ow);
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t channels, std::size_t h, std::size_t w,
                std::size_t k1, std::size_t k2, std::size_t oh, std::size_t ow, double* x) {
  const std::size_t plane = oh * ow;
  for (std::size_t i = 0; i < channels; ++i) {
    for (std::size_t v1 = 0; v1 < k1; ++v1) {
      for (std::size_t v2 = 0; v2 < k2; ++v2) {
        const double* src = col + ((i * k1 + v1) * k2 + v2) * plane;
        for (std::size_t u1 = 0; u1 < oh; ++u1) {
          double* dst = x + (i * h + u1 + v1) * w + v2;
          const double* s = src + u1 * ow;
          for (std::size_t u2 = 0; u2 < ow; ++u2) dst[u2] += s[u2];
        }
      }
    }
  }
}

struct ConvGeometry {
  std::size_t batch, n, h, w, m, k1, k2, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& x, const LayerParams& p) {
  require(p.is_conv(), "conv: parameters are not convolutional");
  require(x.rank() == 4 && x.shape()[1] == p.fanin,
          "conv: input " + shape_to_string(x.shape()) + " vs fanin " + std::to_string(p.fanin));
  ConvGeometry g{};
  g.batch = x.shape()[0];
  g.n = p.fanin;
  g.h = x.shape()[2];
  g.w = x.shape()[3];
  g.m = p.fanout;
  g.k1 = p.weights.shape()[2];
  g.k2 = p.weights.shape()[3];
  std::tie(g.oh, g.ow) = conv_output_extent(g.h, g.w, g.k1, g.k2);
  return g;
}

}  // namespace

Tensor conv_forward(const Tensor& x, const LayerParams& p) {
  const ConvGeometry g = conv_geometry(x, p);
  const std::size_t rows = g.n * g.k1 * g.k2, plane = g.oh * g.ow;
  Tensor y({g.batch, g.m, g.oh, g.ow});
  std::vector<double> col(rows * plane);
  const double* w = p.weights.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(x.data().data() + b * g.n * g.h * g.w, g.n, g.h, g.w, g.k1, g.k2, g.oh, g.ow,
           col.data());
    double* yb = y.data().data() + b * g.m * plane;
    for (std::size_t j = 0; j < g.m; ++j) {
      double* yj = yb + j * plane;
      std::fill(yj, yj + plane, 0.0);
      const double* wj = w + j * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double wr = wj[r];
        const double* cr = col.data() + r * plane;
        for (std::size_t u = 0; u < plane; ++u) yj[u] += wr * cr[u];
      }
      const double bias = p.bias[j];
      for (std::size_t u = 0; u < plane; ++u) yj[u] += bias;
    }
  }
  return y;
}

ParamGradients conv_backward(const Tensor& g_y, const Tensor& x, const LayerParams& p) {
  const ConvGeometry g = conv_geometry(x, p);
  require(g_y.shape() == Shape({g.batch, g.m, g.oh, g.ow}),
          "conv_backward: gradient shape " + shape_to_string(g_y.shape()));
  const std::size_t rows = g.n * g.k1 * g.k2, plane = g.oh * g.ow;
  ParamGradients out{Tensor(x.shape()), Tensor(p.weights.shape()), Tensor({g.m})};
  std::vector<double> col(rows * plane), gcol(rows * plane);
  const double* w = p.weights.data().data();
  double* gw = out.grad_w.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(x.data().data() + b * g.n * g.h * g.w, g.n, g.h, g.w, g.k1, g.k2, g.oh, g.ow,
           col.data());
    std::fill(gcol.begin(), gcol.end(), 0.0);
    const double* gb = g_y.data().data() + b * g.m * plane;
    for (std::size_t j = 0; j < g.m; ++j) {
      const double* gj = gb + j * plane;
      double bsum = 0.0;
      for (std::size_t u = 0; u < plane; ++u) bsum += gj[u];
      out.grad_b[j] += bsum;
      const double* wj = w + j * rows;
      double* gwj = gw + j * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* cr = col.data() + r * plane;
        double* gcr = gcol.data() + r * plane;
        const double wr = wj[r];
        double acc = 0.0;
        for (std::size_t u = 0; u < plane; ++u) {
          acc += gj[u] * cr[u];
          gcr[u] += wr * gj[u];
        }
        gwj[r] += acc;
      }
    }
    col2im_add(gcol.data(), g.n, g.h, g.w, g.k1, g.k2, g.oh, g.ow,
               out.g_x.data().data() + b * g.n * g.h * g.w);
  }
  return out;
}

Tensor activation_forward(Activation kind, const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = kind == Activation::relu ? (x[i] > 0.0 ? x[i] : 0.0) : std::tanh(x[i]);
  }
  return y;
}

Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& g_y) {
  require(x.shape() == g_y.shape(), "activation_backward: shape mismatch");
  Tensor g_x(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (kind == Activation::relu) {
      g_x[i] = x[i] > 0.0 ? g_y[i] : 0.0;
    } else {
      const double c = std::cosh(x[i]);
      g_x[i] = g_y[i] / (c * c);
    }
  }
  return g_x;
}

PoolResult maxpool_forward(const Tensor& x, std::size_t window) {
  require(x.rank() == 4, "maxpool expects [B x C x H x W]");
  require(window >= 1, "pool window must be positive");
  const std::size_t batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(h % window == 0 && w % window == 0 && h >= window && w >= window,
          "maxpool: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by " +
              std::to_string(window));
  const std::size_t oh = h / window, ow = w / window;
  PoolResult r{Tensor({batch, c, oh, ow}), std::vector<std::size_t>(batch * c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * h * w;
      for (std::size_t u1 = 0; u1 < oh; ++u1) {
        for (std::size_t u2 = 0; u2 < ow; ++u2, ++o) {
          std::size_t best = base + (u1 * window) * w + u2 * window;
          for (std::size_t v1 = 0; v1 < window; ++v1) {
            for (std::size_t v2 = 0; v2 < window; ++v2) {
              const std::size_t idx = base + (u1 * window + v1) * w + u2 * window + v2;
              if (x[idx] > x[best]) best = idx;
            }
          }
          r.y[o] = x[best];
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

Tensor maxpool_backward(const Tensor& g_y, const Shape& x_shape,
                        std::span<const std::size_t> argmax) {
  require(argmax.size() == g_y.size(), "maxpool_backward: argmax size mismatch");
  Tensor g_x(x_shape);
  for (std::size_t o = 0; o < g_y.size(); ++o) {
    require(argmax[o] < g_x.size(), "maxpool_backward: argmax out of range");
    g_x[argmax[o]] += g_y[o];
  }
  return g_x;
}

LossResult softmax_xent(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "softmax_xent expects [B x C] logits");
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  require(labels.size() == batch, "softmax_xent: label count differs from batch");
  require(batch >= 1 && classes >= 1, "softmax_xent: empty logits");
  LossResult r{0.0, Tensor(logits.shape())};
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InputError("label " + std::to_string(label) + " outside [0," +
                       std::to_string(classes) + ")");
    }
    double mx = logits(b, 0);
    for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, logits(b, k));
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) z += std::exp(logits(b, k) - mx);
    const double log_z = mx + std::log(z);
    r.loss += (log_z - logits(b, static_cast<std::size_t>(label))) * inv_b;
    for (std::size_t k = 0; k < classes; ++k) {
      const double prob = std::exp(logits(b, k) - log_z);
      r.g_logits(b, k) = (prob - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv_b;
    }
  }
  return r;
}

BatchNormState::BatchNormState(std::size_t channels)
    : scale({channels}, 1.0),
      shift({channels}, 0.0),
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0) {}

namespace {

struct ChannelLayout {
  std::size_t batch, channels, plane;
};

ChannelLayout channel_layout(const Tensor& x, std::size_t channels) {
  require(x.rank() == 2 || x.rank() == 4, "batchnorm expects [B x C] or [B x C x H x W]");
  require(x.shape()[1] == channels, "batchnorm: channel count " +
                                        std::to_string(x.shape()[1]) + " vs state " +
                                        std::to_string(channels));
  const std::size_t plane = x.rank() == 4 ? x.shape()[2] * x.shape()[3] : 1;
  return {x.shape()[0], channels, plane};
}

}  // namespace

Tensor batchnorm_forward(const Tensor& x, BatchNormState& state, Mode mode,
                         BatchNormCache* cache) {
  const ChannelLayout l = channel_layout(x, state.channels());
  if (!(state.epsilon > 0.0)) throw InputError("batchnorm epsilon must be positive");
  if (mode == Mode::train && l.batch < 2) {
    throw InputError("batchnorm in train mode needs a batch of at least 2");
  }
  Tensor y(x.shape());
  Tensor x_hat(x.shape());
  std::vector<double> inv_std(l.channels);
  const double count = static_cast<double>(l.batch * l.plane);
  for (std::size_t c = 0; c < l.channels; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t b = 0; b < l.batch; ++b) {
        const double* p = x.data().data() + (b * l.channels + c) * l.plane;
        for (std::size_t u = 0; u < l.plane; ++u) s += p[u];
      }
      mean = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < l.batch; ++b) {
        const double* p = x.data().data() + (b * l.channels + c) * l.plane;
        for (std::size_t u = 0; u < l.plane; ++u) ss += (p[u] - mean) * (p[u] - mean);
      }
      var = ss / count;
      const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + state.epsilon);
    for (std::size_t b = 0; b < l.batch; ++b) {
      const std::size_t off = (b * l.channels + c) * l.plane;
      for (std::size_t u = 0; u < l.plane; ++u) {
        const double xh = (x[off + u] - mean) * inv_std[c];
        x_hat[off + u] = xh;
        y[off + u] = state.scale[c] * xh + state.shift[c];
      }
    }
  }
  if (mode == Mode::train) ++state.updates;
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

BatchNormGradients batchnorm_backward(const Tensor& g_y, const BatchNormCache& cache,
                                      const BatchNormState& state) {
  require(g_y.shape() == cache.x_hat.shape(), "batchnorm_backward: gradient shape");
  const ChannelLayout l = channel_layout(g_y, state.channels());
  BatchNormGradients out{Tensor(g_y.shape()), Tensor({l.channels}), Tensor({l.channels})};
  const double count = static_cast<double>(l.batch * l.plane);
  for (std::size_t c = 0; c < l.channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < l.batch; ++b) {
      const std::size_t off = (b * l.channels + c) * l.plane;
      for (std::size_t u = 0; u < l.plane; ++u) {
        sum_g += g_y[off + u];
        sum_gx += g_y[off + u] * cache.x_hat[off + u];
      }
    }
    out.grad_shift[c] = sum_g;
    out.grad_scale[c] = sum_gx;
    const double k = state.scale[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < l.batch; ++b) {
      const std::size_t off = (b * l.channels + c) * l.plane;
      for (std::size_t u = 0; u < l.plane; ++u) {
        if (cache.mode == Mode::train) {
          out.g_x[off + u] =
              k * (g_y[off + u] - sum_g / count - cache.x_hat[off + u] * sum_gx / count);
        } else {
          out.g_x[off + u] = k * g_y[off + u];
        }
      }
    }
  }
  return out;
}

}  // namespace wrp
