#include "wrp/optimizers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "wrp/errors.hpp"

namespace wrp {

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sgd: return "sgd";
    case Algorithm::sgd_fanin: return "sgd_fanin";
    case Algorithm::rmsprop: return "rmsprop";
    case Algorithm::reparam_canonical: return "reparam_canonical";
    case Algorithm::reparam_whitening: return "reparam_whitening";
    case Algorithm::batchnorm_sgd: return "batchnorm_sgd";
    case Algorithm::mitigation_schedule: return "mitigation_schedule";
  }
  return "?";
}

Algorithm algorithm_from_string(std::string_view name) {
  for (Algorithm a : {Algorithm::sgd, Algorithm::sgd_fanin, Algorithm::rmsprop,
                      Algorithm::reparam_canonical, Algorithm::reparam_whitening,
                      Algorithm::batchnorm_sgd, Algorithm::mitigation_schedule}) {
    if (name == to_string(a)) return a;
  }
  throw UsageError("unknown algorithm '" + std::string(name) + "'");
}

bool uses_batchnorm(Algorithm a) noexcept {
  return a == Algorithm::batchnorm_sgd || a == Algorithm::mitigation_schedule;
}

bool uses_reparam(Algorithm a) noexcept {
  return a == Algorithm::reparam_canonical || a == Algorithm::reparam_whitening ||
         a == Algorithm::mitigation_schedule;
}

void OptimizerConfig::validate() const {
  if (!(stepsize >= 0.0) || !std::isfinite(stepsize)) {
    throw InputError("stepsize must be a finite non-negative number");
  }
  if (!(lambda_ema > 0.0 && lambda_ema < 1.0)) throw InputError("lambda_ema must lie in (0,1)");
  if (!(lambda_rms > 0.0 && lambda_rms <= 1.0)) throw InputError("lambda_rms must lie in (0,1]");
  if (!(mu_reg >= 0.0)) throw InputError("mu_reg must be non-negative");
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  if (uses_batchnorm(algorithm) && batch_size < 2) {
    throw InputError("batch normalization needs batch_size >= 2");
  }
  if (!(weight_decay >= 0.0)) throw InputError("weight_decay must be non-negative");
  bounds.validate();
}

DivergenceError::DivergenceError(std::size_t step, std::string layer, const std::string& what)
    : std::runtime_error(what), step_(step), layer_(std::move(layer)) {}

OptState make_opt_state(const Network& net, const OptimizerConfig& cfg) {
  OptState st;
  for (std::size_t idx : net.trainable_indices()) {
    const Layer& l = net.layers()[idx];
    LayerOptState ls;
    if (cfg.algorithm == Algorithm::rmsprop) {
      ls.rms_weights.emplace(l.params.weights.size(), cfg.lambda_rms);
      ls.rms_bias.emplace(l.params.bias.size(), cfg.lambda_rms);
    }
    if (uses_reparam(cfg.algorithm)) ls.moments.emplace(cfg.lambda_ema);
    st.layers.push_back(std::move(ls));
  }
  return st;
}

namespace {

void emit(const OptState& st, std::string_view event) {
  if (st.trace) st.trace(event);
}

void sgd_update(Layer& l, double rate, double weight_decay) {
  auto w = l.params.weights.data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= rate * (l.grad_w[i] + weight_decay * w[i]);
  for (std::size_t j = 0; j < l.params.bias.size(); ++j) l.params.bias[j] -= rate * l.grad_b[j];
}

void batchnorm_update(Network& net, double rate) {
  for (Layer& l : net.layers()) {
    if (l.kind != LayerKind::batchnorm || l.grad_scale.empty()) continue;
    for (std::size_t c = 0; c < l.bn.channels(); ++c) {
      l.bn.scale[c] -= rate * l.grad_scale[c];
      l.bn.shift[c] -= rate * l.grad_shift[c];
    }
  }
}

ReparamConstants batch_constants(const BatchStats& stats, Algorithm algorithm, const Layer& l,
                                 const OptimizerConfig& cfg) {
  MomentState fresh(cfg.lambda_ema);
  fresh = update_moments(fresh, stats).state;
  if (!fresh.initialized) throw NumericError("non-finite statistics in " + l.name);
  return algorithm == Algorithm::reparam_canonical
             ? canonical_constants(fresh, cfg.bounds, l.params.sharing)
             : whitening_constants(fresh, l.params.connections(), l.params.sharing, cfg.bounds);
}

void reparam_update(Network& net, Algorithm algorithm, const OptimizerConfig& cfg, OptState& st,
                    TrainRecord& rec) {
  const std::vector<std::size_t> idx = net.trainable_indices();
  double a_lo = INFINITY, a_hi = -INFINITY, b_lo = INFINITY, b_hi = -INFINITY;
  double discrepancy = -1.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Layer& l = net.layers()[idx[k]];
    LayerOptState& ls = st.layers[k];
    if (!ls.moments) ls.moments.emplace(cfg.lambda_ema);

    emit(st, "batch_stats");
    const BatchStats stats = layer_batch_stats(l);

    if (ls.moments->initialized && ls.constants) {
      for (std::size_t i = 0; i < stats.inputs(); ++i) {
        const double shift = std::abs(stats.mean_x[i] - ls.moments->mx[i]);
        discrepancy = std::max(discrepancy, shift * std::sqrt(ls.constants->alpha2[i]));
      }
    }

    ReparamConstants c;
    if (cfg.biased_minibatch_constants) {
      emit(st, "constants_from_batch");
      c = batch_constants(stats, algorithm, l, cfg);
    } else {
      emit(st, "update_moments");
      MomentUpdate mu = update_moments(*ls.moments, stats);
      if (mu.rejected) {
        throw DivergenceError(st.step, l.name, "non-finite statistics in layer " + l.name);
      }
      *ls.moments = std::move(mu.state);
      emit(st, "constants_from_moments");
      c = algorithm == Algorithm::reparam_canonical
              ? canonical_constants(*ls.moments, cfg.bounds, l.params.sharing)
              : whitening_constants(*ls.moments, l.params.connections(), l.params.sharing,
                                    cfg.bounds);
    }
    if (cfg.identity_input_constants) {
      std::fill(c.mu.begin(), c.mu.end(), 0.0);
      std::fill(c.alpha2.begin(), c.alpha2.end(), 1.0);
    }

    emit(st, "reparam_delta");
    const ReparamDelta d =
        l.kind == LayerKind::conv
            ? conv_reparam_delta(stats, c, l.params.weights.shape()[2], l.params.weights.shape()[3])
            : reparam_delta(stats, c);
    auto w = l.params.weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= cfg.stepsize * (d.delta_w[i] + cfg.weight_decay * w[i]);
    }
    for (std::size_t j = 0; j < l.params.bias.size(); ++j) {
      l.params.bias[j] -= cfg.stepsize * d.delta_b[j];
    }

    for (double v : c.alpha2) { a_lo = std::min(a_lo, v); a_hi = std::max(a_hi, v); }
    for (double v : c.beta2) { b_lo = std::min(b_lo, v); b_hi = std::max(b_hi, v); }
    ls.constants = std::move(c);
  }
  if (!idx.empty()) {
    rec.alpha2_min = a_lo;
    rec.alpha2_max = a_hi;
    rec.beta2_min = b_lo;
    rec.beta2_max = b_hi;
  }
  if (discrepancy >= 0.0) rec.stat_discrepancy = discrepancy;
}

void check_parameters(const Network& net, std::size_t step) {
  for (const Layer& l : net.layers()) {
    bool ok = true;
    if (l.trainable()) ok = l.params.weights.all_finite() && l.params.bias.all_finite();
    if (l.kind == LayerKind::batchnorm) ok = l.bn.scale.all_finite() && l.bn.shift.all_finite();
    if (!ok) {
      throw DivergenceError(step, l.name,
                            "parameters of layer " + l.name + " became non-finite at step " +
                                std::to_string(step));
    }
  }
}

TrainRecord step_as(Network& net, const Tensor& x, std::span<const int> labels,
                    Algorithm algorithm, const OptimizerConfig& cfg, OptState& st) {
  if (st.layers.size() != net.trainable_indices().size()) {
    throw StateError("optimizer state does not match the network's trainable layers");
  }
  TrainRecord rec;
  rec.step = st.step;
  rec.epoch = st.epoch;

  emit(st, "forward");
  const Tensor out = net.forward(x, Mode::train);
  LossResult loss = softmax_xent(out, labels);
  rec.loss = loss.loss;
  if (!std::isfinite(loss.loss) || loss.loss > cfg.divergence_loss_limit) {
    throw DivergenceError(st.step, "loss",
                          "loss " + std::to_string(loss.loss) + " at step " +
                              std::to_string(st.step));
  }
  emit(st, "backward");
  net.backward(loss.g_logits);

  const std::vector<std::size_t> idx = net.trainable_indices();
  switch (algorithm) {
    case Algorithm::sgd:
    case Algorithm::batchnorm_sgd:
      for (std::size_t i : idx) sgd_update(net.layers()[i], cfg.stepsize, cfg.weight_decay);
      batchnorm_update(net, cfg.stepsize);
      break;
    case Algorithm::sgd_fanin:
      for (std::size_t i : idx) {
        Layer& l = net.layers()[i];
        sgd_update(l, cfg.stepsize * fanin_scale(l.params.connections(), l.params.sharing),
                   cfg.weight_decay);
      }
      batchnorm_update(net, cfg.stepsize);
      break;
    case Algorithm::rmsprop:
      for (std::size_t k = 0; k < idx.size(); ++k) {
        Layer& l = net.layers()[idx[k]];
        LayerOptState& ls = st.layers[k];
        std::vector<double> gw(l.grad_w.values());
        auto w = l.params.weights.data();
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += cfg.weight_decay * w[i];
        RmsStep sw = rmsprop_step(*ls.rms_weights, gw, cfg.stepsize, cfg.mu_reg);
        RmsStep sb = rmsprop_step(*ls.rms_bias, l.grad_b.values(), cfg.stepsize, cfg.mu_reg);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += sw.step[i];
        for (std::size_t j = 0; j < l.params.bias.size(); ++j) l.params.bias[j] += sb.step[j];
        *ls.rms_weights = std::move(sw.state);
        *ls.rms_bias = std::move(sb.state);
      }
      batchnorm_update(net, cfg.stepsize);
      break;
    case Algorithm::reparam_canonical:
    case Algorithm::reparam_whitening:
      reparam_update(net, algorithm, cfg, st, rec);
      batchnorm_update(net, cfg.stepsize);
      break;
    case Algorithm::mitigation_schedule:
      throw StateError("mitigation schedule must be dispatched through mitigation_schedule_step");
  }
  check_parameters(net, st.step);
  ++st.step;
  return rec;
}

}  // namespace

TrainRecord step(Network& net, const Tensor& x, std::span<const int> labels,
                 const OptimizerConfig& cfg, OptState& state) {
  if (cfg.algorithm == Algorithm::mitigation_schedule) {
    return mitigation_schedule_step(net, x, labels, cfg, state);
  }
  return step_as(net, x, labels, cfg.algorithm, cfg, state);
}

TrainRecord mitigation_schedule_step(Network& net, const Tensor& x, std::span<const int> labels,
                                     const OptimizerConfig& cfg, OptState& state) {
  if (!state.switched && state.epoch >= cfg.switch_epoch) {
    emit(state, "fold");
    fold_batchnorm(net, x);
    state.switched = true;
  }
  return step_as(net, x, labels,
                 state.switched ? Algorithm::reparam_whitening : Algorithm::batchnorm_sgd, cfg,
                 state);
}

FoldReport fold_batchnorm(Network& net, const Tensor& probe, double tolerance) {
  FoldReport report;
  // A batch-norm layer that never saw a training batch is the identity by construction.
  for (std::size_t i = net.layers().size(); i-- > 0;) {
    const Layer& l = net.layers()[i];
    if (l.kind == LayerKind::batchnorm && l.bn.updates == 0) {
      net.erase_layer(i);
      ++report.dropped;
    }
  }
  if (!net.has_batchnorm()) return report;

  const Tensor before = net.infer(probe);
  for (std::size_t i = 0; i < net.layers().size();) {
    Layer& bn = net.layers()[i];
    if (bn.kind != LayerKind::batchnorm) {
      ++i;
      continue;
    }
    if (i == 0 || !net.layers()[i - 1].trainable()) {
      throw FoldError(INFINITY, "batch-norm layer " + bn.name +
                                    " does not follow a trainable layer and cannot be folded");
    }
    Layer& prev = net.layers()[i - 1];
    const std::size_t m = prev.params.fanout;
    const std::size_t per_unit = prev.params.weights.size() / m;
    for (std::size_t c = 0; c < m; ++c) {
      const double s = bn.bn.scale[c] / std::sqrt(bn.bn.running_var[c] + bn.bn.epsilon);
      double* w = prev.params.weights.data().data() + c * per_unit;
      for (std::size_t k = 0; k < per_unit; ++k) w[k] *= s;
      prev.params.bias[c] = (prev.params.bias[c] - bn.bn.running_mean[c]) * s + bn.bn.shift[c];
    }
    net.erase_layer(i);
    ++report.folded;
  }
  const Tensor after = net.infer(probe);
  report.residual = max_abs_diff(before, after);
  if (!(report.residual <= tolerance)) {
    throw FoldError(report.residual, "batch-norm folding changed probe outputs by " +
                                         std::to_string(report.residual));
  }
  return report;
}

double relu_death_fraction(const Network& net, const Tensor& probe) {
  std::size_t units = 0, dead = 0;
  net.infer(probe, [&](const Layer& l, const Tensor& out) {
    if (l.kind != LayerKind::activation || l.activation != Activation::relu) return;
    const std::size_t batch = out.shape()[0];
    const std::size_t per = out.size() / batch;
    for (std::size_t u = 0; u < per; ++u) {
      bool alive = false;
      for (std::size_t b = 0; b < batch && !alive; ++b) alive = out[b * per + u] > 0.0;
      dead += alive ? 0 : 1;
    }
    units += per;
  });
  return units ? static_cast<double>(dead) / static_cast<double>(units) : 0.0;
}

RunResult run_epochs(Network& net, const Dataset& data, const OptimizerConfig& cfg,
                     std::size_t epochs, std::uint64_t seed, const RunOptions& options) {
  cfg.validate();
  RunResult result{{}, make_opt_state(net, cfg)};
  if (epochs == 0) return result;
  if (data.size() == 0) throw InputError("run_epochs: empty dataset");
  if (data.size() < cfg.batch_size) {
    throw InputError("run_epochs: dataset smaller than one minibatch");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batches = data.size() / cfg.batch_size;
  std::vector<std::size_t> probe_idx(std::min(options.probe_size, data.size()));
  std::iota(probe_idx.begin(), probe_idx.end(), std::size_t{0});
  const Tensor probe = data.gather(probe_idx);

  try {
    for (std::size_t e = 0; e < epochs; ++e) {
      result.state.epoch = e;
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < batches; ++b) {
        const std::span<const std::size_t> idx(order.data() + b * cfg.batch_size, cfg.batch_size);
        const Tensor x = data.gather(idx);
        const std::vector<int> y = data.gather_labels(idx);
        const auto t0 = std::chrono::steady_clock::now();
        TrainRecord rec = step(net, x, y, cfg, result.state);
        if (options.wallclock) {
          rec.wall_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        }
        if (b + 1 == batches) rec.relu_dead = relu_death_fraction(net, probe);
        result.records.push_back(rec);
        if (options.on_record && !options.on_record(rec)) return result;
      }
    }
  } catch (DivergenceError& e) {
    e.set_history(result.records);
    throw;
  }
  return result;
}

double final_epoch_loss(std::span<const TrainRecord> records) {
  if (records.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t last = records.back().epoch;
  double sum = 0.0;
  std::size_t n = 0;
  for (const TrainRecord& r : records) {
    if (r.epoch == last) {
      sum += r.loss;
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

std::vector<double> descend_objective(
    const std::function<double(std::span<const double>)>& value,
    const std::function<std::vector<double>(std::span<const double>)>& gradient,
    std::vector<double> start, double stepsize, std::size_t steps) {
  std::vector<double> w = std::move(start);
  for (std::size_t t = 0; t < steps; ++t) {
    const double v = value(w);
    if (!std::isfinite(v)) {
      throw DivergenceError(t, "objective", "objective became non-finite at step " + std::to_string(t));
    }
    const std::vector<double> g = gradient(w);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= stepsize * g[i];
    if (!std::all_of(w.begin(), w.end(), [](double d) { return std::isfinite(d); })) {
      throw DivergenceError(t, "objective", "iterate became non-finite at step " + std::to_string(t));
    }
  }
  return w;
}

}  // namespace wrp
