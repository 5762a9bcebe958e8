#pragma once

#include <Eigen/QR>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "predictive.hpp"
#include "serialization.hpp"

namespace bnpc {

// ---------------------------------------------------------------------------
// co-clustering

struct DissimilarityMatrix {
  Matrix D;
  std::vector<std::string> ids;
  [[nodiscard]] std::size_t n() const noexcept { return static_cast<std::size_t>(D.rows()); }
};

/// D(i,j) = fraction of saved draws with c_i != c_j.
template <class Params>
DissimilarityMatrix dissimilarity_matrix(const PosteriorDraws<Params> &pd,
                                         std::vector<std::string> ids = {},
                                         unsigned threads = 0) {
  if (pd.draws.empty())
    throw InvalidParameter("dissimilarity_matrix: no draws");
  const std::size_t n = pd.draws.front().state.n();
  if (ids.empty())
    for (std::size_t i = 0; i < n; ++i)
      ids.push_back(std::to_string(i));
  if (ids.size() != n)
    throw LengthMismatch("dissimilarity_matrix: id count differs from n");
  DissimilarityMatrix out{Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
                          std::move(ids)};
  const double T = static_cast<double>(pd.T());
  parallel_for(
      n,
      [&](std::size_t i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          std::size_t differ = 0;
          for (const auto &d : pd.draws)
            differ += d.state.assignments[i] != d.state.assignments[j];
          const double v = static_cast<double>(differ) / T;
          out.D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
          out.D(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
      },
      threads);
  return out;
}

struct Merge {
  std::size_t left; // node ids: leaves 0..n-1, internal n..2n-2
  std::size_t right;
  double height;
};

struct PointPartition {
  std::vector<int> labels;        // canonical: first appearance gets 0
  std::vector<std::size_t> order; // dendrogram leaf order
  std::vector<Merge> merges;      // ascending height
  [[nodiscard]] int clusters() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }
};

/// Relabels so that labels appear in order 0, 1, 2, ... along the rows.
inline std::vector<int> canonical_labels(const std::vector<int> &labels) {
  std::vector<int> out(labels.size());
  std::map<int, int> seen;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto [it, inserted] = seen.emplace(labels[i], static_cast<int>(seen.size()));
    out[i] = it->second;
  }
  return out;
}

/// Average-linkage agglomerative clustering (nearest-neighbour chain with
/// Lance-Williams updates), cut at height `cut`.
inline PointPartition point_partition(const Matrix &D, double cut = 0.5) {
  if (!(cut > 0.0 && cut < 1.0))
    throw InvalidParameter("point_partition: cut must lie in (0, 1)");
  if (D.rows() != D.cols())
    throw InvalidParameter("point_partition: matrix is not square");
  const std::size_t n = static_cast<std::size_t>(D.rows());
  PointPartition out;
  if (n == 0)
    return out;

  Matrix dist = D;
  std::vector<std::size_t> size(n, 1);
  std::vector<bool> active(n, true);
  struct RawMerge {
    std::size_t a, b;
    double h;
  };
  std::vector<RawMerge> raw;
  std::vector<std::size_t> chain;
  std::size_t remaining = n;
  while (remaining > 1) {
    if (chain.empty())
      for (std::size_t i = 0; i < n; ++i)
        if (active[i]) {
          chain.push_back(i);
          break;
        }
    const std::size_t top = chain.back();
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    if (chain.size() >= 2) {
      best = chain[chain.size() - 2];
      best_d = dist(static_cast<Eigen::Index>(top), static_cast<Eigen::Index>(best));
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == top)
        continue;
      const double dk = dist(static_cast<Eigen::Index>(top), static_cast<Eigen::Index>(k));
      if (dk < best_d) {
        best_d = dk;
        best = k;
      }
    }
    if (chain.size() >= 2 && best == chain[chain.size() - 2]) {
      chain.pop_back();
      chain.pop_back();
      const std::size_t a = std::min(top, best), b = std::max(top, best);
      raw.push_back({a, b, best_d});
      const double na = static_cast<double>(size[a]), nb = static_cast<double>(size[b]);
      for (std::size_t k = 0; k < n; ++k) {
        if (!active[k] || k == a || k == b)
          continue;
        const auto ka = static_cast<Eigen::Index>(k);
        const double v = (na * dist(ka, static_cast<Eigen::Index>(a)) +
                          nb * dist(ka, static_cast<Eigen::Index>(b))) /
                         (na + nb);
        dist(ka, static_cast<Eigen::Index>(a)) = v;
        dist(static_cast<Eigen::Index>(a), ka) = v;
      }
      size[a] += size[b];
      active[b] = false;
      --remaining;
    } else {
      chain.push_back(best);
    }
  }
  std::stable_sort(raw.begin(), raw.end(),
                   [](const RawMerge &x, const RawMerge &y) { return x.h < y.h; });

  // Replay merges in height order to get dendrogram node ids.
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x)
      x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<std::size_t> node_of(n); // union-find root -> dendrogram node
  std::iota(node_of.begin(), node_of.end(), 0);
  std::vector<std::size_t> min_leaf(2 * n - 1);
  std::iota(min_leaf.begin(), min_leaf.begin() + static_cast<std::ptrdiff_t>(n), 0);
  std::vector<std::pair<std::size_t, std::size_t>> children(2 * n - 1, {n, n});
  bool cut_done = false;
  std::vector<std::size_t> cut_parent;
  for (std::size_t m = 0; m < raw.size(); ++m) {
    if (!cut_done && raw[m].h > cut) {
      cut_parent = parent;
      cut_done = true;
    }
    const std::size_t ra = find(raw[m].a), rb = find(raw[m].b);
    std::size_t l = node_of[ra], r = node_of[rb];
    if (min_leaf[r] < min_leaf[l])
      std::swap(l, r);
    const std::size_t node = n + m;
    children[node] = {l, r};
    min_leaf[node] = min_leaf[l];
    out.merges.push_back({l, r, raw[m].h});
    parent[rb] = ra;
    node_of[ra] = node;
  }
  if (!cut_done)
    cut_parent = parent;
  {
    std::vector<int> root(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t x = i;
      while (cut_parent[x] != x)
        x = cut_parent[x];
      root[i] = static_cast<int>(x);
    }
    out.labels = canonical_labels(root);
  }
  std::vector<std::size_t> stack{n == 1 ? 0 : 2 * n - 2};
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    if (v < n) {
      out.order.push_back(v);
    } else {
      stack.push_back(children[v].second);
      stack.push_back(children[v].first);
    }
  }
  return out;
}

inline void write_dissimilarity_csv(const std::string &path, const DissimilarityMatrix &dm,
                                    const std::vector<std::size_t> &order) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + path);
  os << "id";
  for (std::size_t j : order)
    os << ',' << dm.ids[j];
  os << '\n';
  for (std::size_t i : order) {
    os << dm.ids[i];
    for (std::size_t j : order)
      os << ',' << fmt_real(dm.D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    os << '\n';
  }
  if (!os)
    throw IoError("write failed for " + path);
}

/// 8-bit binary PGM, 0 -> white and 1 -> black, rows and columns in `order`.
inline void write_dissimilarity_pgm(const std::string &path, const Matrix &D,
                                    const std::vector<std::size_t> &order) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + path);
  os << "P5\n" << order.size() << ' ' << order.size() << "\n255\n";
  for (std::size_t i : order)
    for (std::size_t j : order) {
      const double v = std::clamp(D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), 0.0, 1.0);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)))));
    }
  if (!os)
    throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// chain diagnostics

struct Traces {
  std::vector<double> alpha, discount, K, loglik;
};

template <class Params> Traces traces_of(const PosteriorDraws<Params> &pd) {
  Traces t;
  for (const auto &d : pd.draws) {
    t.alpha.push_back(d.state.alpha);
    t.discount.push_back(d.state.discount);
    t.K.push_back(static_cast<double>(d.state.K()));
    t.loglik.push_back(d.loglik);
  }
  return t;
}

struct ChainDiagnostics {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;
  double ess = 0.0;
  double geweke_z = 0.0;
  std::vector<double> acf; // lags 1..max_lag
};

namespace detail {

inline std::vector<double> autocovariance(const std::vector<double> &x, std::size_t max_lag) {
  const std::size_t n = x.size();
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::vector<double> c(max_lag + 1, 0.0);
  for (std::size_t k = 0; k <= max_lag && k < n; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i + k < n; ++i)
      s += (x[i] - mu) * (x[i + k] - mu);
    c[k] = s / static_cast<double>(n);
  }
  return c;
}

/// Integrated autocorrelation time by Geyer's initial positive sequence.
inline double ips_tau(const std::vector<double> &x) {
  const std::size_t n = x.size();
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  auto gamma = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i + k < n; ++i)
      s += (x[i] - mu) * (x[i + k] - mu);
    return s / static_cast<double>(n);
  };
  const double g0 = gamma(0);
  if (!(g0 > 0.0))
    return 1.0;
  double sum = 0.0;
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    const double pair = gamma(2 * m) + gamma(2 * m + 1);
    if (!(pair > 0.0))
      break;
    sum += pair;
  }
  return std::max(-1.0 + 2.0 * sum / g0, 1.0 / static_cast<double>(n));
}

inline std::pair<double, double> mean_var(const std::vector<double> &x) {
  const double n = static_cast<double>(x.size());
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x)
    ss += (v - mu) * (v - mu);
  return {mu, ss / n};
}

} // namespace detail

inline ChainDiagnostics chain_diagnostics(const std::vector<double> &series,
                                          std::size_t max_lag = 50) {
  if (series.size() < 100)
    throw SeriesTooShort("chain_diagnostics: need at least 100 values, got " +
                         std::to_string(series.size()));
  ChainDiagnostics out;
  out.n = series.size();
  std::tie(out.mean, out.variance) = detail::mean_var(series);
  if (!(out.variance > 0.0))
    throw DegenerateSeries("chain_diagnostics: series has zero variance");
  max_lag = std::min(max_lag, series.size() - 1);
  const auto c = detail::autocovariance(series, max_lag);
  for (std::size_t k = 1; k <= max_lag; ++k)
    out.acf.push_back(c[k] / c[0]);
  out.ess = static_cast<double>(out.n) / detail::ips_tau(series);

  const std::size_t na = out.n / 10, nb = out.n / 2;
  const std::vector<double> a(series.begin(), series.begin() + static_cast<std::ptrdiff_t>(na));
  const std::vector<double> b(series.end() - static_cast<std::ptrdiff_t>(nb), series.end());
  const auto [ma, va] = detail::mean_var(a);
  const auto [mb, vb] = detail::mean_var(b);
  const double se2 = va * detail::ips_tau(a) / static_cast<double>(na) +
                     vb * detail::ips_tau(b) / static_cast<double>(nb);
  if (se2 > 0.0)
    out.geweke_z = (ma - mb) / std::sqrt(se2);
  else
    out.geweke_z = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
  return out;
}

// ---------------------------------------------------------------------------
// goodness of fit

struct ChiSquareResult {
  double stat = 0.0;
  int df = 0;
  double p = 1.0;
  std::vector<double> expected; // merged bins, left to right
  std::vector<double> observed;
};

/// Pearson test with bins merged from the right until each expected count is
/// at least `min_expected`. A leftover low bin at the left end joins its
/// right neighbour.
inline ChiSquareResult chi_square_gof(std::vector<double> expected,
                                      std::vector<double> observed,
                                      double min_expected = 5.0) {
  const std::size_t len = std::max(expected.size(), observed.size());
  expected.resize(len, 0.0);
  observed.resize(len, 0.0);
  if (!(std::accumulate(observed.begin(), observed.end(), 0.0) >= 1.0))
    throw InvalidParameter("chi_square_gof: need at least one observation");
  ChiSquareResult r;
  double e = 0.0, o = 0.0;
  for (std::size_t i = len; i-- > 0;) {
    e += expected[i];
    o += observed[i];
    if (e >= min_expected) {
      r.expected.push_back(e);
      r.observed.push_back(o);
      e = o = 0.0;
    }
  }
  if (e > 0.0 || o > 0.0) {
    if (r.expected.empty()) {
      r.expected.push_back(e);
      r.observed.push_back(o);
    } else {
      r.expected.back() += e;
      r.observed.back() += o;
    }
  }
  std::reverse(r.expected.begin(), r.expected.end());
  std::reverse(r.observed.begin(), r.observed.end());
  if (r.expected.size() < 2)
    throw TooFewBins("chi_square_gof: fewer than 2 bins after merging");
  for (std::size_t i = 0; i < r.expected.size(); ++i) {
    const double diff = r.observed[i] - r.expected[i];
    r.stat += diff * diff / r.expected[i];
  }
  r.df = static_cast<int>(r.expected.size()) - 1;
  r.p = r.stat > 0.0 ? boost::math::cdf(boost::math::complement(
                           boost::math::chi_squared(r.df), r.stat))
                     : 1.0;
  return r;
}

/// Expected counts N * pmf(y), with the tail mass added to the last bin.
inline ChiSquareResult chi_square_gof(const PredictiveDistribution &pred,
                                      const std::vector<double> &observed) {
  if (!pred.discrete)
    throw InvalidParameter("chi_square_gof: needs a pmf");
  const double total = std::accumulate(observed.begin(), observed.end(), 0.0);
  std::vector<double> expected(pred.mass.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    expected[i] = total * pred.mass[i];
  if (!expected.empty())
    expected.back() += total * pred.tail_mass;
  std::vector<double> obs = observed;
  if (obs.size() > expected.size()) {
    const double extra = std::accumulate(obs.begin() + static_cast<std::ptrdiff_t>(expected.size()),
                                         obs.end(), 0.0);
    obs.resize(expected.size());
    obs.back() += extra;
  }
  return chi_square_gof(std::move(expected), std::move(obs));
}

/// Sum of per-row expected counts over rows with their own pmfs. Each row's
/// tail mass goes to the last bin.
inline std::vector<double> summed_expected_counts(const std::vector<PredictiveDistribution> &preds,
                                                  std::size_t bins) {
  std::vector<double> e(bins, 0.0);
  for (const auto &p : preds) {
    for (std::size_t y = 0; y < p.mass.size(); ++y)
      e[std::min(y, bins - 1)] += p.mass[y];
    e[bins - 1] += p.tail_mass;
  }
  return e;
}

inline double mse(const std::vector<double> &pred, const std::vector<double> &obs) {
  if (pred.size() != obs.size())
    throw LengthMismatch("mse: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(obs.size()) + " observations");
  if (pred.empty())
    throw LengthMismatch("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    s += (pred[i] - obs[i]) * (pred[i] - obs[i]);
  return s / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// parametric baselines

enum class BaselineFamily { PoissonGLM, OLS };

struct BaselineFit {
  BaselineFamily family = BaselineFamily::PoissonGLM;
  Vector beta;
  double sigma2 = 0.0; // OLS only
  int iterations = 0;

  [[nodiscard]] double predict(const Observation &r) const {
    const double eta = r.x.dot(beta);
    return family == BaselineFamily::PoissonGLM ? r.t * std::exp(eta) : eta;
  }
};

namespace detail {

inline Matrix design(const std::vector<Observation> &rows) {
  if (rows.empty())
    throw InvalidParameter("fit_baseline: empty data");
  Matrix X(static_cast<Eigen::Index>(rows.size()), rows.front().x.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    X.row(static_cast<Eigen::Index>(i)) = rows[i].x.transpose();
  return X;
}

inline void require_full_rank(const Matrix &X) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  if (X.rows() < X.cols() || qr.rank() < X.cols())
    throw RankDeficient("fit_baseline: design matrix has rank " +
                        std::to_string(qr.rank()) + " < " + std::to_string(X.cols()));
}

} // namespace detail

/// Poisson GLM by IRLS (log link, ln t offset) or OLS by normal equations.
inline BaselineFit fit_baseline(const std::vector<Observation> &rows, BaselineFamily family,
                                double tol = 1e-10, int max_iter = 100) {
  const Matrix X = detail::design(rows);
  detail::require_full_rank(X);
  const auto n = X.rows();
  Vector y(n), t(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = rows[static_cast<std::size_t>(i)].y;
    t[i] = rows[static_cast<std::size_t>(i)].t;
  }
  BaselineFit fit;
  fit.family = family;
  if (family == BaselineFamily::OLS) {
    const CholFactor ch(X.transpose() * X);
    fit.beta = ch.solve(X.transpose() * y);
    const double rss = (y - X * fit.beta).squaredNorm();
    fit.sigma2 = n > X.cols() ? rss / static_cast<double>(n - X.cols()) : 0.0;
    return fit;
  }
  if (!(y.sum() > 0.0))
    throw NoConvergence("fit_baseline: all counts are zero, MLE does not exist");
  fit.beta = Vector::Zero(X.cols());
  fit.beta[0] = std::log(y.sum() / t.sum());
  const Vector log_t = t.array().log();
  for (int it = 1; it <= max_iter; ++it) {
    const Vector mu = (X * fit.beta + log_t).array().exp();
    const Matrix info = X.transpose() * mu.asDiagonal() * X;
    const Vector step = cholesky(info).solve(X.transpose() * (y - mu));
    fit.beta += step;
    fit.iterations = it;
    if (!fit.beta.allFinite())
      break;
    if (step.lpNorm<Eigen::Infinity>() <= tol * (1.0 + fit.beta.lpNorm<Eigen::Infinity>()))
      return fit;
  }
  throw NoConvergence("fit_baseline: IRLS did not converge");
}

} // namespace bnpc
