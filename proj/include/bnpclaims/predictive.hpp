#pragma once

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "likelihoods.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace bnpc {

/// Predictive mass (counts) or density (severity) over a grid.
struct PredictiveDistribution {
  std::vector<double> grid;
  std::vector<double> mass;
  bool discrete = true;
  double mean = std::numeric_limits<double>::quiet_NaN();
  /// Probability beyond the grid: exact upper tails for counts, one minus the
  /// trapezoid integral for densities.
  double tail_mass = 0.0;
  /// Draw-averaged weight on the base-measure marginal.
  double base_weight = 0.0;
  Vector x_new;
  double t_new = 1.0;
  std::string model;
};

inline constexpr double kPmfTailLimit = 1e-6;
inline constexpr double kDensityTailLimit = 1e-3;

inline double trapezoid(const std::vector<double> &x, const std::vector<double> &f) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i)
    s += 0.5 * (x[i] - x[i - 1]) * (f[i] + f[i - 1]);
  return s;
}

/// Sum y * mass for a pmf, trapezoid of y * density otherwise.
inline double predictive_mean(const PredictiveDistribution &dist) {
  if (dist.grid.size() != dist.mass.size() || dist.grid.empty())
    throw InvalidParameter("predictive_mean: malformed distribution");
  if (dist.discrete) {
    if (dist.tail_mass >= kPmfTailLimit)
      throw TailMassTooLarge("predictive_mean: pmf tail mass " +
                             std::to_string(dist.tail_mass) + " beyond grid");
    double m = 0.0;
    for (std::size_t i = 0; i < dist.grid.size(); ++i)
      m += dist.grid[i] * dist.mass[i];
    return m;
  }
  if (dist.tail_mass >= kDensityTailLimit)
    throw TailMassTooLarge("predictive_mean: density grid misses mass " +
                           std::to_string(dist.tail_mass));
  std::vector<double> yf(dist.grid.size());
  for (std::size_t i = 0; i < yf.size(); ++i)
    yf[i] = dist.grid[i] * dist.mass[i];
  return trapezoid(dist.grid, yf);
}

/// Density on a grid with tail mass set from the trapezoid integral.
inline PredictiveDistribution make_density(std::vector<double> grid,
                                           std::vector<double> density) {
  PredictiveDistribution d;
  d.discrete = false;
  d.tail_mass = std::max(0.0, 1.0 - trapezoid(grid, density));
  d.grid = std::move(grid);
  d.mass = std::move(density);
  return d;
}

/// Evenly spaced grid of `points` values on [lo, hi].
inline std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
  if (points < 2 || !(hi > lo))
    throw InvalidParameter("linear_grid: need hi > lo and at least 2 points");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

inline std::vector<double> default_severity_grid(const DrawsMeta &meta,
                                                 std::size_t points = 513) {
  const double sd = meta.y_sd > 0.0 ? meta.y_sd : 1.0;
  return linear_grid(meta.y_min - 4.0 * sd, meta.y_max + 4.0 * sd, points);
}

namespace detail {

/// One mixture term of the data part: log weight and the component.
template <class Params> struct DataTerm {
  double log_weight;
  const Params *params;
};

/// Base-measure weight averaged over draws and the per-cluster log weights
/// 1/T * (n_k - d) / (alpha + n). The DP path uses n_k and alpha / (alpha + n).
template <class Params>
double collect_terms(const PosteriorDraws<Params> &pd, Process process,
                     std::vector<DataTerm<Params>> &terms) {
  if (pd.draws.empty())
    throw InvalidParameter("predictive: no draws");
  const double n = static_cast<double>(pd.meta.n);
  const double log_T = std::log(static_cast<double>(pd.T()));
  double base = 0.0;
  terms.clear();
  for (const auto &d : pd.draws) {
    const auto &s = d.state;
    const double log_norm = -log_T - std::log(s.alpha + n);
    if (process == Process::DP) {
      base += s.alpha / (s.alpha + n);
      for (const auto &[label, c] : s.clusters)
        terms.push_back({log_norm + std::log(static_cast<double>(c.size)), &c.params});
    } else {
      base += (s.alpha + s.discount * static_cast<double>(s.K())) / (s.alpha + n);
      for (const auto &[label, c] : s.clusters)
        terms.push_back({log_norm + std::log(static_cast<double>(c.size) - s.discount),
                         &c.params});
    }
  }
  return base / static_cast<double>(pd.T());
}

/// P(Y > y_max) for Y ~ Poisson(lam); underflow reads as 0.
inline double poisson_upper_tail(double y_max, double lam) {
  using namespace boost::math::policies;
  using quiet = policy<overflow_error<ignore_error>, underflow_error<ignore_error>>;
  return boost::math::gamma_p(y_max + 1.0, lam, quiet());
}

/// P(Y > y_max) for Y ~ Poisson(t e^{x'b}), b ~ MVN(0, I), by Simpson's rule
/// on the scalar x'b ~ N(0, x'x).
inline double base_tail_freq(double y_max, double t, const Vector &x) {
  const double sd = x.norm();
  constexpr int intervals = 2000;
  constexpr double zlim = 10.0;
  const double h = 2.0 * zlim / intervals;
  double acc = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    const double z = -zlim + h * i;
    const double lam = t * std::exp(sd * z);
    const double p = lam > 0.0 && std::isfinite(lam)
                         ? poisson_upper_tail(y_max, lam)
                         : (lam > 0.0 ? 1.0 : 0.0);
    const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * p * std::exp(-0.5 * z * z);
  }
  return acc * h / 3.0 / std::sqrt(2.0 * std::numbers::pi);
}

} // namespace detail

/// Posterior predictive pmf of a new count at (x_new, t_new) over 0..y_max.
/// The base-measure marginal is the Laplace approximation, computed once per
/// count value and shared by all draws.
inline PredictiveDistribution predictive_freq(const PosteriorDraws<FreqParams> &pd,
                                              const Vector &x_new, double t_new,
                                              int y_max, Process process,
                                              LaplaceCache *cache = nullptr) {
  if (!(t_new > 0.0))
    throw InvalidParameter("predictive_freq: exposure must be positive");
  if (y_max < 0)
    throw InvalidParameter("predictive_freq: y_max must be nonnegative");
  if (x_new.size() != pd.meta.dim)
    throw InvalidParameter("predictive_freq: covariate length mismatch");
  std::vector<detail::DataTerm<FreqParams>> terms;
  const double base = detail::collect_terms(pd, process, terms);
  const double log_base = std::log(base);
  const double log_t = std::log(t_new);
  std::vector<double> log_rate(terms.size());
  for (std::size_t j = 0; j < terms.size(); ++j)
    log_rate[j] = log_t + x_new.dot(terms[j].params->beta);

  PredictiveDistribution out;
  out.discrete = true;
  out.base_weight = base;
  out.x_new = x_new;
  out.t_new = t_new;
  out.model = std::string(to_string(Family::PoissonFrequency)) + "-" + to_string(process);
  out.grid.resize(static_cast<std::size_t>(y_max) + 1);
  out.mass.resize(out.grid.size());
  for (int y = 0; y <= y_max; ++y) {
    const double yy = static_cast<double>(y);
    const double lm = cache ? cache->log_marginal(yy, t_new, x_new)
                            : laplace_marginal_freq(yy, t_new, x_new).log_marginal;
    LogSumAccumulator acc;
    acc.add(log_base + lm);
    for (std::size_t j = 0; j < terms.size(); ++j)
      acc.add(terms[j].log_weight + poisson_log_pmf(yy, log_rate[j]));
    out.grid[static_cast<std::size_t>(y)] = yy;
    out.mass[static_cast<std::size_t>(y)] = std::exp(acc.value());
  }
  double tail = base * detail::base_tail_freq(y_max, t_new, x_new);
  for (std::size_t j = 0; j < terms.size(); ++j)
    tail += std::exp(terms[j].log_weight) *
            detail::poisson_upper_tail(static_cast<double>(y_max), std::exp(log_rate[j]));
  out.tail_mass = tail;
  double m = 0.0;
  for (std::size_t i = 0; i < out.grid.size(); ++i)
    m += out.grid[i] * out.mass[i];
  out.mean = m;
  return out;
}

inline PredictiveDistribution predictive_freq(const PosteriorDraws<FreqParams> &pd,
                                              const Vector &x_new, double t_new,
                                              int y_max = 50,
                                              LaplaceCache *cache = nullptr) {
  return predictive_freq(pd, x_new, t_new, y_max, pd.meta.spec.process, cache);
}

/// Mean of the frequency predictive with the base marginal taken exactly:
/// base_weight * t e^{x'x / 2} + sum of weighted component rates.
inline double predictive_freq_mean_exact(const PosteriorDraws<FreqParams> &pd,
                                         const Vector &x_new, double t_new,
                                         Process process) {
  std::vector<detail::DataTerm<FreqParams>> terms;
  const double base = detail::collect_terms(pd, process, terms);
  double m = base * t_new * std::exp(0.5 * x_new.squaredNorm());
  for (const auto &term : terms)
    m += std::exp(term.log_weight + std::log(t_new) + x_new.dot(term.params->beta));
  return m;
}

/// Posterior predictive density of a new log severity at x_new on `grid`,
/// with the closed-form normal-inverse-gamma base marginal.
inline PredictiveDistribution predictive_sev(const PosteriorDraws<SevParams> &pd,
                                             const Vector &x_new,
                                             const std::vector<double> &grid,
                                             Process process) {
  if (x_new.size() != pd.meta.dim)
    throw InvalidParameter("predictive_sev: covariate length mismatch");
  if (grid.empty())
    throw InvalidParameter("predictive_sev: empty grid");
  const auto &spec = pd.meta.spec;
  std::vector<detail::DataTerm<SevParams>> terms;
  const double base = detail::collect_terms(pd, process, terms);
  const double log_base = std::log(base);
  std::vector<double> means(terms.size());
  for (std::size_t j = 0; j < terms.size(); ++j)
    means[j] = x_new.dot(terms[j].params->beta);

  std::vector<double> dens(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double y = grid[i];
    LogSumAccumulator acc;
    acc.add(log_base + nig_log_marginal_sev(y, x_new, spec.n0, spec.a, spec.b));
    for (std::size_t j = 0; j < terms.size(); ++j)
      acc.add(terms[j].log_weight +
              normal_log_density(y, means[j], terms[j].params->sigma2));
    dens[i] = std::exp(acc.value());
  }
  PredictiveDistribution out = make_density(grid, std::move(dens));
  out.base_weight = base;
  out.x_new = x_new;
  out.t_new = 1.0;
  out.model = std::string(to_string(Family::NormalSeverity)) + "-" + to_string(process);
  std::vector<double> yf(out.grid.size());
  for (std::size_t i = 0; i < yf.size(); ++i)
    yf[i] = out.grid[i] * out.mass[i];
  out.mean = trapezoid(out.grid, yf);
  return out;
}

inline PredictiveDistribution predictive_sev(const PosteriorDraws<SevParams> &pd,
                                             const Vector &x_new,
                                             const std::vector<double> &grid) {
  return predictive_sev(pd, x_new, grid, pd.meta.spec.process);
}

/// Severity predictive mean without a grid: the base marginal has mean 0.
inline double predictive_sev_mean_exact(const PosteriorDraws<SevParams> &pd,
                                        const Vector &x_new, Process process) {
  std::vector<detail::DataTerm<SevParams>> terms;
  detail::collect_terms(pd, process, terms);
  double m = 0.0;
  for (const auto &term : terms)
    m += std::exp(term.log_weight) * x_new.dot(term.params->beta);
  return m;
}

/// Frequency predictives for many rows, in parallel over rows. The count grid
/// is doubled (up to `y_cap`) until the tail mass falls below the pmf limit.
inline std::vector<PredictiveDistribution>
predict_freq_rows(const PosteriorDraws<FreqParams> &pd,
                  const std::vector<Observation> &rows, int y_max, int y_cap,
                  Process process, unsigned threads = 0) {
  std::vector<PredictiveDistribution> out(rows.size());
  LaplaceCache cache;
  parallel_for(
      rows.size(),
      [&](std::size_t i) {
        int ym = y_max;
        for (;;) {
          out[i] = predictive_freq(pd, rows[i].x, rows[i].t, ym, process, &cache);
          if (out[i].tail_mass < kPmfTailLimit || ym >= y_cap)
            break;
          ym = std::min(y_cap, 2 * ym + 1);
        }
      },
      threads);
  return out;
}

inline std::vector<PredictiveDistribution>
predict_sev_rows(const PosteriorDraws<SevParams> &pd,
                 const std::vector<Observation> &rows,
                 const std::vector<double> &grid, Process process,
                 unsigned threads = 0) {
  std::vector<PredictiveDistribution> out(rows.size());
  parallel_for(
      rows.size(),
      [&](std::size_t i) { out[i] = predictive_sev(pd, rows[i].x, grid, process); },
      threads);
  return out;
}

} // namespace bnpc
