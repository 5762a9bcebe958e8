#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "likelihoods.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "random.hpp"

namespace bnpc {

/// Likelihood used for the PY (d, alpha) moves. KnPmf is the distribution of
/// the number of clusters; Eppf uses the full cluster sizes; PriorOnly drops
/// the likelihood and exists for prior-recovery checks.
enum class HyperTarget { KnPmf, Eppf, PriorOnly };

inline const char *to_string(HyperTarget t) {
  switch (t) {
  case HyperTarget::KnPmf:
    return "kn";
  case HyperTarget::Eppf:
    return "eppf";
  case HyperTarget::PriorOnly:
    return "prior";
  }
  return "kn";
}

inline HyperTarget parse_hyper_target(const std::string &s) {
  if (s == "kn")
    return HyperTarget::KnPmf;
  if (s == "eppf")
    return HyperTarget::Eppf;
  if (s == "prior")
    return HyperTarget::PriorOnly;
  throw InvalidParameter("unknown hyper target '" + s + "'");
}

struct SamplerConfig {
  long iterations = 2000;
  std::optional<long> burn_in; // defaults to iterations / 2
  long thinning = 1;
  int m = 3;
  std::uint64_t seed = 1;
  long adapt_batch = 50;
  double target_accept = 0.44;
  double log_scale_logit_d = 0.0;
  double log_scale_log_sum = 0.0;
  double init_alpha = 1.0;
  double init_discount = 0.1;
  bool fix_alpha = false;
  bool fix_discount = false;
  HyperTarget hyper_target = HyperTarget::KnPmf;
  long progress_every = 100;

  [[nodiscard]] long effective_burn_in() const {
    return burn_in.value_or(iterations / 2);
  }

  void check() const {
    const long b = effective_burn_in();
    if (!(iterations > b && b >= 0))
      throw InvalidParameter("need iterations > burn_in >= 0");
    if (thinning < 1)
      throw InvalidParameter("thinning must be at least 1");
    if (m < 1)
      throw InvalidParameter("m must be at least 1");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw InvalidParameter("target_accept must lie in (0, 1)");
    if (adapt_batch < 1)
      throw InvalidParameter("adapt_batch must be at least 1");
  }
};

// ---------------------------------------------------------------------------
// Neal's Algorithm 8

/// log prior weight of joining an occupied cluster of size n_minus_i.
inline double urn_log_weight_existing(std::size_t n_minus_i, double discount) {
  return std::log(static_cast<double>(n_minus_i) - discount);
}

/// log prior weight of each of the m auxiliary components.
inline double urn_log_weight_auxiliary(double alpha, double discount,
                                       std::size_t k_minus, int m) {
  return std::log((alpha + discount * static_cast<double>(k_minus)) /
                  static_cast<double>(m));
}

/// One Gibbs scan over every observation's cluster label with m auxiliary
/// components drawn from the base measure. A singleton's own parameter is
/// reused as the first auxiliary.
template <class Fam>
void neal8_sweep(ClusterState<typename Fam::Params> &state,
                 const std::vector<Observation> &rows, const Fam &fam, int m,
                 CounterRng &rng) {
  using Params = typename Fam::Params;
  const double d = state.discount;
  const double alpha = state.alpha;
  std::vector<double> logw;
  std::vector<int> labels;
  std::vector<Params> aux;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Observation &obs = rows[i];
    auto home = state.clusters.find(state.assignments[i]);
    aux.clear();
    if (--home->second.size == 0) {
      aux.push_back(std::move(home->second.params));
      state.clusters.erase(home);
    }
    while (aux.size() < static_cast<std::size_t>(m))
      aux.push_back(fam.draw_base(rng));

    const std::size_t k_minus = state.K();
    logw.clear();
    labels.clear();
    for (const auto &[label, c] : state.clusters) {
      logw.push_back(urn_log_weight_existing(c.size, d) + fam.loglik(obs, c.params));
      labels.push_back(label);
    }
    const double log_new = urn_log_weight_auxiliary(alpha, d, k_minus, m);
    for (const auto &p : aux)
      logw.push_back(log_new + fam.loglik(obs, p));

    const std::size_t pick = draw(rng, Categorical{logw});
    if (pick < labels.size()) {
      state.assignments[i] = labels[pick];
      ++state.clusters.at(labels[pick]).size;
    } else {
      const int label = state.fresh_label();
      state.clusters.emplace(label, Cluster<Params>{std::move(aux[pick - labels.size()]), 1});
      state.assignments[i] = label;
    }
  }
}

/// Member rows of each occupied cluster, keyed by label.
template <class Params>
std::map<int, RowRefs> cluster_members(const ClusterState<Params> &state,
                                       const std::vector<Observation> &rows) {
  std::map<int, RowRefs> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    out[state.assignments[i]].push_back(&rows[i]);
  return out;
}

struct RefreshCounts {
  long attempts = 0;
  long accepted = 0;
  long fallbacks = 0;
};

/// Redraws every occupied cluster's parameter given its members: a conjugate
/// Gibbs draw for severity, an independence MH step for frequency.
template <class Fam>
RefreshCounts refresh_params(ClusterState<typename Fam::Params> &state,
                             const std::vector<Observation> &rows,
                             const Fam &fam, CounterRng &rng) {
  RefreshCounts counts;
  const auto members = cluster_members(state, rows);
  for (auto &[label, c] : state.clusters) {
    const RefreshOutcome r = fam.refresh(c.params, members.at(label), rng);
    ++counts.attempts;
    counts.accepted += r.accepted ? 1 : 0;
    counts.fallbacks += r.fallback ? 1 : 0;
  }
  return counts;
}

template <class Fam>
double state_loglik(const ClusterState<typename Fam::Params> &state,
                    const std::vector<Observation> &rows, const Fam &fam) {
  double ll = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    ll += fam.loglik(rows[i], state.clusters.at(state.assignments[i]).params);
  return ll;
}

// ---------------------------------------------------------------------------
// DP concentration: Escobar-West auxiliary-variable update

/// Probability of the Gamma(shape + K, .) branch given the auxiliary eta.
inline double escobar_west_mixture_prob(std::size_t K, std::size_t n, double eta,
                                        const HyperPrior &prior) {
  const double odds = (prior.alpha_shape + static_cast<double>(K) - 1.0) /
                      (static_cast<double>(n) * (prior.alpha_rate - std::log(eta)));
  return odds / (1.0 + odds);
}

inline double update_alpha_dp(double alpha, std::size_t K, std::size_t n,
                              const HyperPrior &prior, CounterRng &rng) {
  if (!(alpha > 0.0))
    throw InvalidParameter("update_alpha_dp: alpha must be positive");
  const double eta = draw(rng, Beta{alpha + 1.0, static_cast<double>(n)});
  const double pi = escobar_west_mixture_prob(K, n, eta, prior);
  const double rate = prior.alpha_rate - std::log(eta);
  const double shape = prior.alpha_shape + static_cast<double>(K) -
                       (uniform_open(rng) < pi ? 0.0 : 1.0);
  return draw(rng, Gamma{shape, rate});
}

// ---------------------------------------------------------------------------
// PY: distribution of the number of clusters and the (d, alpha) moves

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity())
    return b;
  if (b == -std::numeric_limits<double>::infinity())
    return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// ln Pr(K_n = K | d, alpha) under PY(d, alpha). Uses the generalized
/// factorial coefficients scaled by d^K, S(n, K) = C(n, K; d) / d^K, which obey
/// S(n+1, K) = (n - K d) S(n, K) + S(n, K-1) with S(1, 1) = 1; at d = 0 they
/// reduce to unsigned Stirling numbers of the first kind.
inline double kn_log_pmf(std::size_t n, std::size_t K, double d, double alpha) {
  if (n < 1 || K < 1 || K > n)
    throw InvalidParameter("kn_log_pmf: need 1 <= K <= n");
  if (!(d >= 0.0 && d < 1.0))
    throw InvalidParameter("kn_log_pmf: discount must lie in [0, 1)");
  if (!(alpha > -d))
    throw InvalidParameter("kn_log_pmf: alpha must exceed -d");
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> ls(K + 1, ninf);
  ls[1] = 0.0;
  for (std::size_t m = 1; m < n; ++m) {
    const std::size_t top = std::min(K, m + 1);
    for (std::size_t k = top; k >= 1; --k) {
      double stay = ninf;
      if (ls[k] != ninf)
        stay = std::log(static_cast<double>(m) - static_cast<double>(k) * d) + ls[k];
      ls[k] = log_add(stay, ls[k - 1]);
    }
  }
  double lp = ls[K];
  for (std::size_t i = 1; i < K; ++i)
    lp += std::log(alpha + static_cast<double>(i) * d);
  lp -= std::lgamma(alpha + static_cast<double>(n)) - std::lgamma(alpha + 1.0);
  return lp;
}

/// ln of the PY exchangeable partition probability for the given sizes.
inline double py_log_eppf(std::span<const std::size_t> sizes, double d,
                          double alpha) {
  std::size_t n = 0;
  for (auto s : sizes)
    n += s;
  double lp = 0.0;
  for (std::size_t i = 1; i < sizes.size(); ++i)
    lp += std::log(alpha + static_cast<double>(i) * d);
  lp -= std::lgamma(alpha + static_cast<double>(n)) - std::lgamma(alpha + 1.0);
  for (auto s : sizes)
    lp += std::lgamma(static_cast<double>(s) - d) - std::lgamma(1.0 - d);
  return lp;
}

/// Gaussian random-walk log-scale with batch adaptation toward a target
/// acceptance rate.
struct AdaptiveScale {
  double log_scale = 0.0;
  long batch_index = 0;
  long batch_accepted = 0;
  long batch_tried = 0;

  void record(bool accepted) {
    ++batch_tried;
    batch_accepted += accepted ? 1 : 0;
  }

  /// Closes a batch: the log-scale moves by min(0.01, b^{-1/2}) up if the
  /// batch acceptance exceeded `target`, down if it fell short.
  void end_batch(double target) {
    ++batch_index;
    const double delta =
        std::min(0.01, 1.0 / std::sqrt(static_cast<double>(batch_index)));
    const double rate = batch_tried > 0 ? static_cast<double>(batch_accepted) /
                                              static_cast<double>(batch_tried)
                                        : 0.0;
    if (rate > target)
      log_scale += delta;
    else if (rate < target)
      log_scale -= delta;
    batch_accepted = 0;
    batch_tried = 0;
  }
};

struct PyHyperState {
  double discount = 0.1;
  double alpha = 1.0;
  AdaptiveScale logit_d;
  AdaptiveScale log_sum;
};

struct PyMoveFlags {
  bool tried_d = false;
  bool accepted_d = false;
  bool tried_sum = false;
  bool accepted_sum = false;
};

/// Log target over (logit d, ln(alpha + d)), Jacobians included.
inline double py_hyper_log_target(double d, double sum, std::size_t K,
                                  std::size_t n,
                                  std::span<const std::size_t> sizes,
                                  HyperTarget target, const HyperPrior &prior) {
  if (!(d > 0.0 && d < 1.0) || !(sum > 0.0) || !std::isfinite(sum))
    return -std::numeric_limits<double>::infinity();
  const double z = (std::log(sum) - prior.sum_log_mean) / prior.sum_log_sd;
  double lp = -0.5 * z * z + std::log(d) + std::log1p(-d);
  const double alpha = sum - d;
  switch (target) {
  case HyperTarget::KnPmf:
    lp += kn_log_pmf(n, K, d, alpha);
    break;
  case HyperTarget::Eppf:
    lp += py_log_eppf(sizes, d, alpha);
    break;
  case HyperTarget::PriorOnly:
    break;
  }
  return lp;
}

/// Two Metropolis-within-Gibbs moves: logit(d) holding alpha + d, then
/// ln(alpha + d) holding d.
inline PyMoveFlags update_py_hyper(PyHyperState &h, std::size_t K, std::size_t n,
                                   std::span<const std::size_t> sizes,
                                   HyperTarget target, const HyperPrior &prior,
                                   CounterRng &rng, bool move_d = true,
                                   bool move_sum = true) {
  PyMoveFlags flags;
  double sum = h.alpha + h.discount;
  double current = py_hyper_log_target(h.discount, sum, K, n, sizes, target, prior);
  if (move_d) {
    const double u = std::log(h.discount) - std::log1p(-h.discount);
    const double u_new = u + std::exp(h.logit_d.log_scale) * draw_std_normal(rng);
    const double d_new = 1.0 / (1.0 + std::exp(-u_new));
    const double cand = py_hyper_log_target(d_new, sum, K, n, sizes, target, prior);
    flags.tried_d = true;
    flags.accepted_d = std::log(uniform_open(rng)) < cand - current;
    if (flags.accepted_d) {
      h.discount = d_new;
      current = cand;
    }
    h.logit_d.record(flags.accepted_d);
  }
  if (move_sum) {
    const double v_new =
        std::log(sum) + std::exp(h.log_sum.log_scale) * draw_std_normal(rng);
    const double sum_new = std::exp(v_new);
    const double cand =
        py_hyper_log_target(h.discount, sum_new, K, n, sizes, target, prior);
    flags.tried_sum = true;
    flags.accepted_sum = std::log(uniform_open(rng)) < cand - current;
    if (flags.accepted_sum)
      sum = sum_new;
    h.log_sum.record(flags.accepted_sum);
  }
  h.alpha = sum - h.discount;
  return flags;
}

// ---------------------------------------------------------------------------
// chain driver

struct RunStats {
  double wall_seconds = 0.0;
  long phi_fallbacks = 0;
  double final_log_scale_logit_d = 0.0;
  double final_log_scale_log_sum = 0.0;
};

template <class Params>
std::vector<std::size_t> cluster_sizes(const ClusterState<Params> &s) {
  std::vector<std::size_t> out;
  out.reserve(s.K());
  for (const auto &[label, c] : s.clusters)
    out.push_back(c.size);
  return out;
}

/// Runs one chain: sweep, parameter refresh, hyperparameter update per
/// iteration; post-burn-in states are saved every `thinning` iterations.
template <class Fam>
PosteriorDraws<typename Fam::Params>
run_chain(const Dataset &data, const ModelSpec &spec, const Fam &fam,
          const SamplerConfig &cfg, std::ostream *progress = nullptr,
          RunStats *stats = nullptr) {
  using Params = typename Fam::Params;
  cfg.check();
  if (data.rows.empty())
    throw InvalidParameter("run_chain: empty dataset");
  const bool is_py = spec.process == Process::PY;
  if (is_py && cfg.fix_alpha && !cfg.fix_discount)
    throw InvalidParameter("PY: fixing alpha without fixing d is not supported");
  const auto t0 = std::chrono::steady_clock::now();
  const long burn_in = cfg.effective_burn_in();
  const auto &rows = data.rows;
  const std::size_t n = rows.size();

  CounterRng rng(cfg.seed);
  ClusterState<Params> state;
  state.assignments.assign(n, 0);
  state.clusters.emplace(0, Cluster<Params>{fam.draw_base(rng), n});
  state.alpha = cfg.init_alpha;
  state.discount = is_py ? cfg.init_discount : 0.0;

  PyHyperState hyper;
  hyper.discount = state.discount;
  hyper.alpha = state.alpha;
  hyper.logit_d.log_scale = cfg.log_scale_logit_d;
  hyper.log_sum.log_scale = cfg.log_scale_log_sum;

  PosteriorDraws<Params> out;
  out.meta.spec = spec;
  out.meta.iterations = cfg.iterations;
  out.meta.burn_in = burn_in;
  out.meta.thinning = cfg.thinning;
  out.meta.seed = cfg.seed;
  out.meta.m = cfg.m;
  out.meta.n = n;
  out.meta.dim = fam.dim();
  out.meta.standardization = data.standardization;
  {
    double lo = rows.front().y, hi = rows.front().y, s1 = 0.0, s2 = 0.0;
    for (const auto &r : rows) {
      lo = std::min(lo, r.y);
      hi = std::max(hi, r.y);
      s1 += r.y;
      s2 += r.y * r.y;
    }
    const double nn = static_cast<double>(n);
    out.meta.y_min = lo;
    out.meta.y_max = hi;
    out.meta.y_sd = n > 1 ? std::sqrt(std::max(0.0, (s2 - s1 * s1 / nn) / (nn - 1.0))) : 0.0;
  }
  out.draws.reserve(static_cast<std::size_t>((cfg.iterations - burn_in + cfg.thinning - 1) / cfg.thinning));

  long phi_tried = 0, phi_acc = 0, d_tried = 0, d_acc = 0, s_tried = 0, s_acc = 0;
  long fallbacks = 0;
  for (long it = 1; it <= cfg.iterations; ++it) {
    try {
      neal8_sweep(state, rows, fam, cfg.m, rng);
      const RefreshCounts rc = refresh_params(state, rows, fam, rng);
      fallbacks += rc.fallbacks;
      if (!is_py) {
        if (!cfg.fix_alpha)
          state.alpha = update_alpha_dp(state.alpha, state.K(), n, spec.hyper, rng);
      } else if (!(cfg.fix_alpha && cfg.fix_discount)) {
        const auto sizes = cluster_sizes(state);
        hyper.discount = state.discount;
        hyper.alpha = state.alpha;
        const PyMoveFlags f = update_py_hyper(hyper, state.K(), n, sizes,
                                              cfg.hyper_target, spec.hyper, rng,
                                              !cfg.fix_discount, true);
        state.discount = hyper.discount;
        state.alpha = hyper.alpha;
        if (it > burn_in) {
          d_tried += f.tried_d ? 1 : 0;
          d_acc += f.accepted_d ? 1 : 0;
          s_tried += f.tried_sum ? 1 : 0;
          s_acc += f.accepted_sum ? 1 : 0;
        }
        if (it <= burn_in && it % cfg.adapt_batch == 0) {
          if (!cfg.fix_discount)
            hyper.logit_d.end_batch(cfg.target_accept);
          hyper.log_sum.end_batch(cfg.target_accept);
        }
      }
      if (it > burn_in) {
        phi_tried += rc.attempts;
        phi_acc += rc.accepted;
      }
#ifndef NDEBUG
      if (!state.valid())
        throw NumericError("cluster state invariant broken");
#endif
    } catch (const NumericError &e) {
      throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
    }

    if (it > burn_in && (it - burn_in - 1) % cfg.thinning == 0)
      out.draws.push_back({it, state_loglik(state, rows, fam), state});

    if (progress && cfg.progress_every > 0 && it % cfg.progress_every == 0) {
      *progress << "iter=" << it << " K=" << state.K() << " alpha=" << state.alpha
                << " d=" << state.discount << " accept_phi="
                << (phi_tried ? double(phi_acc) / double(phi_tried) : 0.0)
                << " accept_logit_d=" << (d_tried ? double(d_acc) / double(d_tried) : 0.0)
                << " accept_log_sum=" << (s_tried ? double(s_acc) / double(s_tried) : 0.0)
                << '\n';
    }
  }
  out.meta.accept_phi = phi_tried ? double(phi_acc) / double(phi_tried) : 0.0;
  out.meta.accept_logit_d = d_tried ? double(d_acc) / double(d_tried) : 0.0;
  out.meta.accept_log_sum = s_tried ? double(s_acc) / double(s_tried) : 0.0;
  if (stats) {
    stats->wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stats->phi_fallbacks = fallbacks;
    stats->final_log_scale_logit_d = hyper.logit_d.log_scale;
    stats->final_log_scale_log_sum = hyper.log_sum.log_scale;
  }
  return out;
}

/// Family object for a model spec and covariate dimension.
inline PoissonRegression make_family(const ModelSpec &, Eigen::Index dim,
                                     std::type_identity<FreqParams>) {
  return PoissonRegression(dim);
}
inline NormalRegression make_family(const ModelSpec &spec, Eigen::Index dim,
                                    std::type_identity<SevParams>) {
  return NormalRegression(dim, spec.n0, spec.a, spec.b);
}

} // namespace bnpc
