#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <shared_mutex>
#include <span>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "random.hpp"

namespace bnpc {

using RowRefs = std::vector<const Observation *>;

inline RowRefs refs_of(std::span<const Observation> rows) {
  RowRefs out;
  out.reserve(rows.size());
  for (const auto &r : rows)
    out.push_back(&r);
  return out;
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// ---------------------------------------------------------------------------
// pointwise log-likelihoods

/// Poisson log-pmf at count y with log-rate `log_rate`.
inline double poisson_log_pmf(double y, double log_rate) {
  if (y == 0.0)
    return -std::exp(log_rate);
  return y * log_rate - std::exp(log_rate) - std::lgamma(y + 1.0);
}

/// log Poisson(y; t exp(x'beta)).
inline double freq_loglik(double y, double t, const Vector &x,
                          const Vector &beta) {
  if (!(t > 0.0))
    throw InvalidParameter("freq_loglik: exposure must be positive");
  return poisson_log_pmf(y, std::log(t) + x.dot(beta));
}

inline double normal_log_density(double y, double mean, double variance) {
  const double r = y - mean;
  return -0.5 * (kLog2Pi + std::log(variance) + r * r / variance);
}

/// log Normal(y; x'beta, sigma2).
inline double sev_loglik(double y, const Vector &x, const Vector &beta,
                         double sigma2) {
  if (!(sigma2 > 0.0))
    throw InvalidParameter("sev_loglik: sigma2 must be positive");
  return normal_log_density(y, x.dot(beta), sigma2);
}

// ---------------------------------------------------------------------------
// base measure

inline FreqParams base_draw_freq(Eigen::Index dim, CounterRng &rng) {
  Vector beta(dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    beta[i] = draw_std_normal(rng);
  return {std::move(beta)};
}

inline SevParams base_draw_sev(Eigen::Index dim, double n0, double a, double b,
                               CounterRng &rng) {
  const double sigma2 = draw(rng, InverseGamma{a, b});
  const double sd = std::sqrt(n0 * sigma2);
  Vector beta(dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    beta[i] = sd * draw_std_normal(rng);
  return {std::move(beta), sigma2};
}

// ---------------------------------------------------------------------------
// Poisson-regression log posterior under the MVN(0, I) base measure

/// sum_rows [y (ln t + x'b) - t exp(x'b)] - b'b / 2. With a single row this
/// is the integrand exponent h(b) of the predictive base term.
class PoissonLogPosterior {
public:
  explicit PoissonLogPosterior(RowRefs rows) : rows_(std::move(rows)) {
    if (rows_.empty())
      throw InvalidParameter("PoissonLogPosterior: no rows");
  }

  [[nodiscard]] double value(const Vector &beta) const {
    double v = -0.5 * beta.squaredNorm();
    for (const auto *r : rows_) {
      const double lr = std::log(r->t) + r->x.dot(beta);
      v += (r->y == 0.0 ? 0.0 : r->y * lr) - std::exp(lr);
    }
    return v;
  }

  [[nodiscard]] Vector gradient(const Vector &beta) const {
    Vector g = -beta;
    for (const auto *r : rows_) {
      const double mu = r->t * std::exp(r->x.dot(beta));
      g.noalias() += (r->y - mu) * r->x;
    }
    return g;
  }

  [[nodiscard]] Matrix hessian(const Vector &beta) const {
    const Eigen::Index k = beta.size();
    Matrix h = -Matrix::Identity(k, k);
    for (const auto *r : rows_) {
      const double mu = r->t * std::exp(r->x.dot(beta));
      h.noalias() -= mu * r->x * r->x.transpose();
    }
    return h;
  }

  [[nodiscard]] NewtonResult maximize(const NewtonOptions &opts = {}) const {
    const Eigen::Index k = rows_.front()->x.size();
    return newton_maximize([this](const Vector &b) { return value(b); },
                           [this](const Vector &b) { return gradient(b); },
                           [this](const Vector &b) { return hessian(b); },
                           Vector::Zero(k), opts);
  }

  [[nodiscard]] const RowRefs &rows() const noexcept { return rows_; }

private:
  RowRefs rows_;
};

struct LaplaceResult {
  Vector mode;
  Matrix covariance;
  double log_marginal = 0.0;
};

/// Laplace approximation of log int Poisson(y; t e^{x'b}) MVN(b; 0, I) db:
/// h(b_hat) + ln|Sigma_hat| / 2 - ln y!.
inline LaplaceResult laplace_marginal_freq(double y, double t, const Vector &x,
                                           const NewtonOptions &opts = {}) {
  if (!(t > 0.0))
    throw InvalidParameter("laplace_marginal_freq: exposure must be positive");
  const Observation row{x, t, y};
  const PoissonLogPosterior h(RowRefs{&row});
  NewtonResult nr = h.maximize(opts);
  const double half_log_det = 0.5 * CholFactor(nr.covariance).log_det();
  const double lm = nr.value + half_log_det - std::lgamma(y + 1.0);
  return {std::move(nr.mode), std::move(nr.covariance), lm};
}

struct ProposalMoments {
  Vector mean;
  Matrix covariance;
};

/// Mode and inverse negative Hessian of the cluster's log posterior.
inline ProposalMoments laplace_cluster_proposal(const RowRefs &rows,
                                                const NewtonOptions &opts = {}) {
  if (rows.empty())
    throw InvalidParameter("laplace_cluster_proposal: empty cluster");
  NewtonResult nr = PoissonLogPosterior(rows).maximize(opts);
  return {std::move(nr.mode), std::move(nr.covariance)};
}

/// Thread-safe memo of Laplace log marginals keyed on (y, t, x).
class LaplaceCache {
public:
  explicit LaplaceCache(NewtonOptions opts = {}) : opts_(opts) {}

  double log_marginal(double y, double t, const Vector &x) {
    std::vector<double> key;
    key.reserve(static_cast<std::size_t>(x.size()) + 2);
    key.push_back(y);
    key.push_back(t);
    key.insert(key.end(), x.data(), x.data() + x.size());
    {
      std::shared_lock lock(mutex_);
      if (auto it = table_.find(key); it != table_.end())
        return it->second;
    }
    const double v = laplace_marginal_freq(y, t, x, opts_).log_marginal;
    std::unique_lock lock(mutex_);
    table_.emplace(std::move(key), v);
    return v;
  }

  [[nodiscard]] std::size_t size() const {
    std::shared_lock lock(mutex_);
    return table_.size();
  }

private:
  NewtonOptions opts_;
  mutable std::shared_mutex mutex_;
  std::map<std::vector<double>, double> table_;
};

// ---------------------------------------------------------------------------
// normal-inverse-gamma conjugacy

/// Posterior of (beta, sigma2) under beta | sigma2 ~ MVN(0, n0 sigma2 I),
/// sigma2 ~ IG(a, b): beta | sigma2 ~ MVN(mean, sigma2 cov), sigma2 ~ IG(shape, rate).
struct NigParams {
  Vector mean;
  Matrix cov;
  CholFactor precision_chol; // chol(X'X + I / n0)
  double shape = 0.0;
  double rate = 0.0;
};

inline NigParams nig_posterior(const RowRefs &rows, double n0, double a,
                               double b) {
  if (rows.empty())
    throw InvalidParameter("nig_posterior: empty cluster");
  if (!(n0 > 0.0) || !(a > 0.0) || !(b > 0.0))
    throw InvalidParameter("nig_posterior: n0, a, b must be positive");
  const Eigen::Index k = rows.front()->x.size();
  Matrix precision = Matrix::Identity(k, k) / n0;
  Vector xty = Vector::Zero(k);
  for (const auto *r : rows) {
    precision.noalias() += r->x * r->x.transpose();
    xty.noalias() += r->y * r->x;
  }
  NigParams out;
  out.precision_chol = CholFactor(precision);
  out.mean = out.precision_chol.solve(xty);
  out.cov = out.precision_chol.inverse();
  // y'y - m' P m == |y - X m|^2 + m'm / n0, which is nonnegative term by term
  double rss = out.mean.squaredNorm() / n0;
  for (const auto *r : rows) {
    const double e = r->y - r->x.dot(out.mean);
    rss += e * e;
  }
  out.shape = a + 0.5 * static_cast<double>(rows.size());
  out.rate = b + 0.5 * rss;
  return out;
}

/// Draws (beta, sigma2) from a NIG posterior.
inline SevParams draw_nig(const NigParams &post, CounterRng &rng) {
  const double sigma2 = draw(rng, InverseGamma{post.shape, post.rate});
  Vector z(post.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i)
    z[i] = draw_std_normal(rng);
  // L' v = z gives v ~ MVN(0, P^{-1})
  Vector v = post.precision_chol.lower().transpose().triangularView<Eigen::Upper>().solve(z);
  return {post.mean + std::sqrt(sigma2) * v, sigma2};
}

/// log of the closed-form marginal density int Normal(y; x'b, s2) dG0(b, s2)
/// with M = x x' + I / n0 and d = y x.
inline double nig_log_marginal_sev(double y, const Vector &x, double n0,
                                   double a, double b) {
  if (!(n0 > 0.0) || !(a > 0.0) || !(b > 0.0))
    throw InvalidParameter("nig_marginal_sev: n0, a, b must be positive");
  const Eigen::Index k = x.size();
  Matrix m = x * x.transpose();
  m.diagonal().array() += 1.0 / n0;
  const CholFactor chol(m);
  const Vector d = y * x;
  const double q = b + 0.5 * y * y - 0.5 * chol.inverse_quadratic(d);
  return -0.5 * kLog2Pi - 0.5 * static_cast<double>(k) * std::log(n0) +
         a * std::log(b) - std::lgamma(a) - 0.5 * chol.log_det() +
         std::lgamma(a + 0.5) - (a + 0.5) * std::log(q);
}

inline double nig_marginal_sev(double y, const Vector &x, double n0, double a,
                               double b) {
  return std::exp(nig_log_marginal_sev(y, x, n0, a, b));
}

// ---------------------------------------------------------------------------
// family policies consumed by the sampler

struct RefreshOutcome {
  bool accepted = true;
  bool fallback = false;
};

/// Poisson regression with exposure offset; non-conjugate MVN(0, I) base
/// measure, refreshed by independence MH with a Laplace proposal.
class PoissonRegression {
public:
  using Params = FreqParams;
  static constexpr Family family = Family::PoissonFrequency;

  explicit PoissonRegression(Eigen::Index dim, NewtonOptions opts = {})
      : dim_(dim), opts_(opts), prior_mean_(Vector::Zero(dim)),
        prior_chol_(Matrix::Identity(dim, dim)) {}

  [[nodiscard]] Eigen::Index dim() const noexcept { return dim_; }

  [[nodiscard]] double loglik(const Observation &o, const Params &p) const {
    return poisson_log_pmf(o.y, std::log(o.t) + o.x.dot(p.beta));
  }

  Params draw_base(CounterRng &rng) const { return base_draw_freq(dim_, rng); }

  [[nodiscard]] double log_target(const RowRefs &rows, const Params &p) const {
    double v = mvn_log_density(p.beta, prior_mean_, prior_chol_);
    for (const auto *r : rows)
      v += loglik(*r, p);
    return v;
  }

  RefreshOutcome refresh(Params &p, const RowRefs &rows, CounterRng &rng) const {
    RefreshOutcome out;
    ProposalMoments q;
    try {
      q = laplace_cluster_proposal(rows, opts_);
    } catch (const NumericError &e) {
      warn(std::string("Laplace proposal fell back to the prior: ") + e.what());
      q = {prior_mean_, Matrix::Identity(dim_, dim_)};
      out.fallback = true;
    }
    const CholFactor chol(q.covariance);
    Params cand{draw(rng, Mvn{q.mean, chol})};
    const double log_ratio = log_target(rows, cand) - log_target(rows, p) +
                             mvn_log_density(p.beta, q.mean, chol) -
                             mvn_log_density(cand.beta, q.mean, chol);
    out.accepted = std::log(uniform_open(rng)) < log_ratio;
    if (out.accepted)
      p = std::move(cand);
    return out;
  }

private:
  Eigen::Index dim_;
  NewtonOptions opts_;
  Vector prior_mean_;
  CholFactor prior_chol_;
};

/// Normal regression on log severity with the conjugate NIG base measure.
class NormalRegression {
public:
  using Params = SevParams;
  static constexpr Family family = Family::NormalSeverity;

  NormalRegression(Eigen::Index dim, double n0, double a, double b)
      : dim_(dim), n0_(n0), a_(a), b_(b) {
    if (!(n0 > 0.0) || !(a > 0.0) || !(b > 0.0))
      throw InvalidParameter("NormalRegression: n0, a, b must be positive");
  }

  [[nodiscard]] Eigen::Index dim() const noexcept { return dim_; }
  [[nodiscard]] double n0() const noexcept { return n0_; }
  [[nodiscard]] double a() const noexcept { return a_; }
  [[nodiscard]] double b() const noexcept { return b_; }

  [[nodiscard]] double loglik(const Observation &o, const Params &p) const {
    return normal_log_density(o.y, o.x.dot(p.beta), p.sigma2);
  }

  Params draw_base(CounterRng &rng) const {
    return base_draw_sev(dim_, n0_, a_, b_, rng);
  }

  RefreshOutcome refresh(Params &p, const RowRefs &rows, CounterRng &rng) const {
    p = draw_nig(nig_posterior(rows, n0_, a_, b_), rng);
    return {};
  }

private:
  Eigen::Index dim_;
  double n0_;
  double a_;
  double b_;
};

} // namespace bnpc
