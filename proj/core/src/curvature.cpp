#include "wrp/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wrp/errors.hpp"

namespace wrp {

bool CurvatureBlock::symmetric(double tol) const {
  return (matrix - matrix.transpose()).cwiseAbs().maxCoeff() <= tol;
}

bool CurvatureBlock::positive_semidefinite(double tol) const {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

FisherEstimate empirical_fisher_block(std::span<const double> g, const Eigen::MatrixXd& z,
                                      double beta, std::size_t unit) {
  const auto samples = static_cast<Eigen::Index>(g.size());
  if (samples == 0) throw InputError("empirical_fisher_block needs samples");
  if (z.rows() != samples) throw DimensionError("empirical_fisher_block: g and z sample counts differ");
  const Eigen::Index dim = z.cols() + 1;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd zt(dim);
  const double b2 = beta * beta;
  for (Eigen::Index s = 0; s < samples; ++s) {
    zt(0) = 1.0;
    zt.tail(dim - 1) = z.row(s).transpose();
    const double w = b2 * g[static_cast<std::size_t>(s)] * g[static_cast<std::size_t>(s)];
    const Eigen::MatrixXd term = w * (zt * zt.transpose());
    sum += term;
    sum_sq += term.cwiseProduct(term);
  }
  const double n = static_cast<double>(samples);
  FisherEstimate est;
  est.block.unit = unit;
  est.block.matrix = sum / n;
  if (samples > 1) {
    const Eigen::MatrixXd var =
        ((sum_sq / n) - est.block.matrix.cwiseProduct(est.block.matrix)) * (n / (n - 1.0));
    est.standard_error = (var.cwiseMax(0.0) / n).cwiseSqrt();
  } else {
    est.standard_error = Eigen::MatrixXd::Constant(dim, dim, INFINITY);
  }
  return est;
}

CurvatureBlock approx_block(std::span<const double> mean_z, std::span<const double> mean_z2,
                            double mean_g2, double beta, std::size_t unit) {
  if (mean_z.size() != mean_z2.size()) throw DimensionError("approx_block: moment sizes differ");
  const std::size_t n = mean_z.size();
  std::vector<double> ez(n + 1), ez2(n + 1);
  ez[0] = ez2[0] = 1.0;
  std::copy(mean_z.begin(), mean_z.end(), ez.begin() + 1);
  std::copy(mean_z2.begin(), mean_z2.end(), ez2.begin() + 1);
  const double prefactor = beta * beta * mean_g2;
  CurvatureBlock block;
  block.unit = unit;
  block.matrix.resize(static_cast<Eigen::Index>(n + 1), static_cast<Eigen::Index>(n + 1));
  for (std::size_t a = 0; a <= n; ++a) {
    for (std::size_t b = 0; b <= n; ++b) {
      const double e = a == b ? ez2[a] : ez[a] * ez[b];
      block.matrix(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = prefactor * e;
    }
  }
  return block;
}

Eigen::VectorXd default_hessian_steps(const Eigen::VectorXd& w) {
  return 1e-4 * w.cwiseAbs().cwiseMax(1.0);
}

Eigen::MatrixXd finite_diff_hessian(const ScalarField& f, const Eigen::VectorXd& w) {
  return finite_diff_hessian(f, w, default_hessian_steps(w));
}

Eigen::MatrixXd finite_diff_hessian(const ScalarField& f, const Eigen::VectorXd& w,
                                    const Eigen::VectorXd& steps) {
  const Eigen::Index d = w.size();
  if (steps.size() != d) throw DimensionError("finite_diff_hessian: one step per coordinate");
  const auto eval = [&](const Eigen::VectorXd& p) {
    const double v = f(p);
    if (!std::isfinite(v)) throw NumericError("finite_diff_hessian: non-finite function value");
    return v;
  };
  const double f0 = eval(w);
  Eigen::MatrixXd h(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    Eigen::VectorXd p = w, q = w;
    p(a) += steps(a);
    q(a) -= steps(a);
    h(a, a) = (eval(p) - 2.0 * f0 + eval(q)) / (steps(a) * steps(a));
    for (Eigen::Index b = a + 1; b < d; ++b) {
      Eigen::VectorXd pp = w, pm = w, mp = w, mm = w;
      pp(a) += steps(a); pp(b) += steps(b);
      pm(a) += steps(a); pm(b) -= steps(b);
      mp(a) -= steps(a); mp(b) += steps(b);
      mm(a) -= steps(a); mm(b) -= steps(b);
      h(a, b) = (eval(pp) - eval(pm) - eval(mp) + eval(mm)) / (4.0 * steps(a) * steps(b));
      h(b, a) = h(a, b);
    }
  }
  return 0.5 * (h + h.transpose());
}

namespace {

// log(e^w + e^-w) without overflow.
double log_two_cosh(double w) {
  const double a = std::abs(w);
  return a + std::log1p(std::exp(-2.0 * a));
}

}  // namespace

Eigen::Vector2d MotivatingExample::newton_direction() const {
  return -hessian.ldlt().solve(gradient);
}

MotivatingExample motivating_example(double w1, double w2) {
  MotivatingExample ex;
  ex.value = 0.5 * w1 * w1 + log_two_cosh(w2);
  ex.gradient << w1, std::tanh(w2);
  const double c = std::cosh(w2);
  ex.hessian << 1.0, 0.0, 0.0, 1.0 / (c * c);
  return ex;
}

double motivating_value(const Eigen::VectorXd& w) {
  if (w.size() != 2) throw DimensionError("motivating_value expects two coordinates");
  return 0.5 * w(0) * w(0) + log_two_cosh(w(1));
}

double block_diagonality_probe(const ScalarField& f, std::span<const Eigen::VectorXd> points,
                               const std::vector<std::vector<std::size_t>>& partition) {
  double worst = 0.0;
  for (const Eigen::VectorXd& p : points) {
    std::vector<std::size_t> group(static_cast<std::size_t>(p.size()), partition.size());
    for (std::size_t k = 0; k < partition.size(); ++k) {
      for (std::size_t idx : partition[k]) {
        if (idx >= group.size()) throw DimensionError("partition index out of range");
        group[idx] = k;
      }
    }
    if (partition.size() <= 1) continue;
    const Eigen::MatrixXd h = finite_diff_hessian(f, p);
    for (Eigen::Index a = 0; a < h.rows(); ++a) {
      for (Eigen::Index b = 0; b < h.cols(); ++b) {
        if (group[static_cast<std::size_t>(a)] != group[static_cast<std::size_t>(b)]) {
          worst = std::max(worst, std::abs(h(a, b)));
        }
      }
    }
  }
  return worst;
}

}  // namespace wrp
