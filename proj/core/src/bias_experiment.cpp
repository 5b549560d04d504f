#include "wrp/bias_experiment.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "wrp/errors.hpp"

namespace wrp {

double predicted_coupling_bias(std::size_t batch, const BiasExperimentParams& p) {
  if (batch < 2) throw InputError("coupling bias needs batch >= 2");
  const double b = static_cast<double>(batch);
  const double s2 = p.x_sd * p.x_sd;
  const double var_mu = s2 / b;
  const double mean_g = p.g_const + p.g_slope * p.x_mean;
  double cov_mu2_g = 0.0, cov_mu_xg = 0.0;
  if (p.shared_batch) {
    // x is one of the B samples behind mu-hat; Gaussian x gives cov(x, x^2) = 2 m s^2.
    cov_mu2_g = p.g_slope * 2.0 * p.x_mean * s2 / b;
    cov_mu_xg = (p.g_const * s2 + p.g_slope * 2.0 * p.x_mean * s2) / b;
  }
  return p.beta2 * p.alpha2 * (var_mu * mean_g + cov_mu2_g - cov_mu_xg);
}

BiasMeasurement coupling_bias_experiment(std::size_t batch, std::size_t trials,
                                         const BiasExperimentParams& p, std::uint64_t seed) {
  if (batch < 2) throw InputError("coupling bias needs batch >= 2");
  if (trials < 2) throw InputError("coupling bias needs at least 2 trials");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(p.x_mean, p.x_sd);
  std::vector<double> est(batch), eval(batch);
  const double mu = p.x_mean;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    double mu_hat = 0.0;
    for (double& v : est) {
      v = normal(rng);
      mu_hat += v;
    }
    mu_hat /= static_cast<double>(batch);
    if (!p.shared_batch) {
      for (double& v : eval) v = normal(rng);
    }
    const std::vector<double>& xs = p.shared_batch ? est : eval;
    double diff = 0.0;
    for (double x : xs) {
      const double g = p.g_const + p.g_slope * x;
      const double actual = p.beta2 * g * (1.0 - p.alpha2 * mu_hat * (x - mu_hat));
      const double ideal = p.beta2 * g * (1.0 - p.alpha2 * mu * (x - mu));
      diff += actual - ideal;
    }
    diff /= static_cast<double>(batch);
    sum += diff;
    sum_sq += diff * diff;
  }
  const double n = static_cast<double>(trials);
  BiasMeasurement m;
  m.batch = batch;
  m.measured = sum / n;
  const double var = std::max(0.0, (sum_sq / n - m.measured * m.measured) * n / (n - 1.0));
  m.standard_error = std::sqrt(var / n);
  m.predicted = predicted_coupling_bias(batch, p);
  return m;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("loglog_slope needs >= 2 points");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(std::abs(y[i]));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace wrp
