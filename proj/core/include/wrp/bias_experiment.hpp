#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace wrp {

/// Synthetic single-input layer for the coupling-bias study: x ~ N(x_mean, x_sd^2) and
/// g = g_const + g_slope * x, with oracle-given alpha^2 and beta^2.
struct BiasExperimentParams {
  double x_mean = 0.0;
  double x_sd = 1.0;
  double g_const = 1.0;
  double g_slope = 0.0;
  double alpha2 = 1.0;
  double beta2 = 1.0;
  /// When true the bias update is evaluated on the same minibatch that produced mu-hat;
  /// otherwise on an independent minibatch of the same size.
  bool shared_batch = false;
};

struct BiasMeasurement {
  std::size_t batch = 0;
  double measured = 0.0;        // Monte-Carlo E[dw0_hat] - E[dw0]
  double standard_error = 0.0;  // of `measured`
  double predicted = 0.0;       // analytic value of the same difference
};

/// Analytic bias beta^2 alpha^2 (Var[mu_hat] E[g] + cov[mu_hat^2, g] - cov[mu_hat, x g]) for
/// the configured distribution and minibatch size.
double predicted_coupling_bias(std::size_t batch, const BiasExperimentParams& params);

/// Monte-Carlo estimate of the bias of the bias-weight update when mu is replaced by the
/// minibatch mean mu-hat. Requires batch >= 2 and trials >= 2.
BiasMeasurement coupling_bias_experiment(std::size_t batch, std::size_t trials,
                                         const BiasExperimentParams& params, std::uint64_t seed);

/// Least-squares slope of log|y| against log x.
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace wrp
