#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "errors.hpp"

namespace bnpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Lower-triangular Cholesky factor L of a symmetric positive definite
/// matrix, S = L L'.
class CholFactor {
public:
  /// Pivots at or below this value are treated as a loss of definiteness.
  static constexpr double pivot_floor = 1e-12;

  CholFactor() = default;

  /// Factorizes the lower triangle of `s`; the upper triangle is ignored.
  explicit CholFactor(const Matrix &s) : lower_(Matrix::Zero(s.rows(), s.cols())) {
    if (s.rows() != s.cols())
      throw InvalidParameter("cholesky: matrix is not square");
    const Eigen::Index n = s.rows();
    for (Eigen::Index j = 0; j < n; ++j) {
      double pivot = s(j, j);
      for (Eigen::Index k = 0; k < j; ++k)
        pivot -= lower_(j, k) * lower_(j, k);
      if (!(pivot > pivot_floor))
        throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) +
                                  " is " + std::to_string(pivot));
      const double diag = std::sqrt(pivot);
      lower_(j, j) = diag;
      for (Eigen::Index i = j + 1; i < n; ++i) {
        double v = s(i, j);
        for (Eigen::Index k = 0; k < j; ++k)
          v -= lower_(i, k) * lower_(j, k);
        lower_(i, j) = v / diag;
      }
    }
  }

  [[nodiscard]] const Matrix &lower() const noexcept { return lower_; }
  [[nodiscard]] Eigen::Index dim() const noexcept { return lower_.rows(); }

  /// Solves S x = b.
  [[nodiscard]] Vector solve(const Vector &b) const {
    const auto tri = lower_.triangularView<Eigen::Lower>();
    Vector z = tri.solve(b);
    return tri.transpose().solve(z);
  }

  [[nodiscard]] Matrix inverse() const {
    const auto tri = lower_.triangularView<Eigen::Lower>();
    Matrix linv = tri.solve(Matrix::Identity(dim(), dim()));
    return linv.transpose() * linv;
  }

  /// log det S.
  [[nodiscard]] double log_det() const {
    return 2.0 * lower_.diagonal().array().log().sum();
  }

  /// Quadratic form b' S^{-1} b.
  [[nodiscard]] double inverse_quadratic(const Vector &b) const {
    Vector z = lower_.triangularView<Eigen::Lower>().solve(b);
    return z.squaredNorm();
  }

private:
  Matrix lower_;
};

inline CholFactor cholesky(const Matrix &s) { return CholFactor(s); }

/// log sum exp(v_i), shifted by the maximum. All -inf input gives -inf.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty())
    throw InvalidParameter("log_sum_exp: empty input");
  const double top = *std::max_element(v.begin(), v.end());
  if (top == -std::numeric_limits<double>::infinity())
    return top;
  if (top == std::numeric_limits<double>::infinity())
    return top;
  double acc = 0.0;
  for (double x : v)
    acc += std::exp(x - top);
  return top + std::log(acc);
}

/// Running log-sum-exp accumulator; avoids materializing term vectors.
class LogSumAccumulator {
public:
  void add(double x) {
    if (x == -std::numeric_limits<double>::infinity())
      return;
    if (x <= max_) {
      sum_ += std::exp(x - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    }
  }
  [[nodiscard]] double value() const {
    if (sum_ == 0.0)
      return -std::numeric_limits<double>::infinity();
    return max_ + std::log(sum_);
  }

private:
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
};

struct NewtonOptions {
  double tol = 1e-8;
  int max_iter = 100;
  int max_halvings = 30;
};

struct NewtonResult {
  Vector mode;
  Matrix covariance; // (-H(mode))^{-1}
  double value = 0.0;
  int iterations = 0;
};

/// Damped Newton ascent. Stops when the gradient sup-norm is at most
/// `opts.tol`; each step is halved until the objective does not decrease.
template <class F, class G, class H>
NewtonResult newton_maximize(F &&f, G &&grad, H &&hess, Vector init,
                             const NewtonOptions &opts = {}) {
  if (!(opts.tol > 0.0))
    throw InvalidParameter("newton_maximize: tol must be positive");
  Vector x = std::move(init);
  double fx = f(x);
  int iter = 0;
  for (;;) {
    Vector g = grad(x);
    if (!g.allFinite() || !std::isfinite(fx))
      throw NoConvergence("newton_maximize: non-finite objective or gradient");
    if (g.lpNorm<Eigen::Infinity>() <= opts.tol)
      break;
    if (iter >= opts.max_iter)
      throw NoConvergence("newton_maximize: no convergence after " +
                          std::to_string(opts.max_iter) + " iterations");
    Matrix neg_h = -hess(x);
    const CholFactor chol(neg_h);
    Vector step = chol.solve(g);
    const double slack = 1e-14 * std::max(1.0, std::abs(fx));
    bool moved = false;
    for (int halving = 0; halving <= opts.max_halvings; ++halving) {
      Vector cand = x + step;
      const double fc = f(cand);
      if (std::isfinite(fc) && fc >= fx - slack) {
        x = std::move(cand);
        fx = fc;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    ++iter;
    if (!moved)
      throw NoConvergence("newton_maximize: step halving failed to ascend");
  }
  Matrix neg_h = -hess(x);
  const CholFactor chol(neg_h);
  Matrix cov = chol.inverse();
  cov = 0.5 * (cov + cov.transpose());
  return {std::move(x), std::move(cov), fx, iter};
}

} // namespace bnpc
