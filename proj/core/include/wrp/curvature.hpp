#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace wrp {

/// Symmetric per-unit curvature block over coordinates (bias, input 1..n).
struct CurvatureBlock {
  std::size_t unit = 0;
  Eigen::MatrixXd matrix;

  bool symmetric(double tol = 1e-12) const;
  bool positive_semidefinite(double tol = 1e-10) const;
};

struct FisherEstimate {
  CurvatureBlock block;
  Eigen::MatrixXd standard_error;  // Monte-Carlo standard error of each entry
};

/// Sample average of beta^2 g^2 z_i z_i' with z_0 = 1 prepended to every z sample.
/// `z` holds one row per sample. Throws InputError without samples.
FisherEstimate empirical_fisher_block(std::span<const double> g, const Eigen::MatrixXd& z,
                                      double beta, std::size_t unit = 0);

/// beta^2 E[g^2] * (E[z_i^2] on the diagonal, E[z_i] E[z_i'] off it), with z_0 = 1.
CurvatureBlock approx_block(std::span<const double> mean_z, std::span<const double> mean_z2,
                            double mean_g2, double beta, std::size_t unit = 0);

using ScalarField = std::function<double(const Eigen::VectorXd&)>;

/// Per-coordinate step 1e-4 * max(1, |w_i|).
Eigen::VectorXd default_hessian_steps(const Eigen::VectorXd& w);

/// Central second differences, symmetrized. Throws NumericError on non-finite evaluations.
Eigen::MatrixXd finite_diff_hessian(const ScalarField& f, const Eigen::VectorXd& w);
Eigen::MatrixXd finite_diff_hessian(const ScalarField& f, const Eigen::VectorXd& w,
                                    const Eigen::VectorXd& steps);

/// F(w1,w2) = w1^2/2 + log(e^w2 + e^-w2), its gradient, and its Hessian.
struct MotivatingExample {
  double value = 0.0;
  Eigen::Vector2d gradient;
  Eigen::Matrix2d hessian;

  /// -(hessian)^-1 gradient.
  Eigen::Vector2d newton_direction() const;
};

MotivatingExample motivating_example(double w1, double w2);
double motivating_value(const Eigen::VectorXd& w);

/// Largest |H_ab| over coordinate pairs in different groups of `partition`, maximized over
/// `points`, using finite_diff_hessian.
double block_diagonality_probe(const ScalarField& f, std::span<const Eigen::VectorXd> points,
                               const std::vector<std::vector<std::size_t>>& partition);

}  // namespace wrp
