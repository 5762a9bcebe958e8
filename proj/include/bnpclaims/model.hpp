#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"

namespace bnpc {

enum class Family { PoissonFrequency, NormalSeverity };
enum class Process { DP, PY };

inline const char *to_string(Family f) {
  return f == Family::PoissonFrequency ? "poisson" : "normal";
}
inline const char *to_string(Process p) { return p == Process::DP ? "dp" : "py"; }

inline Family parse_family(const std::string &s) {
  if (s == "poisson" || s == "freq" || s == "frequency")
    return Family::PoissonFrequency;
  if (s == "normal" || s == "sev" || s == "severity")
    return Family::NormalSeverity;
  throw InvalidParameter("unknown family '" + s + "'");
}
inline Process parse_process(const std::string &s) {
  if (s == "dp" || s == "DP")
    return Process::DP;
  if (s == "py" || s == "PY")
    return Process::PY;
  throw InvalidParameter("unknown process '" + s + "'");
}

/// One policyholder (frequency) or one claim (severity). `x` carries the
/// leading intercept 1.
struct Observation {
  Vector x;
  double t = 1.0;
  double y = 0.0;
};

struct ColumnScale {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
  bool operator==(const ColumnScale &) const = default;
};

struct Dataset {
  std::vector<Observation> rows;
  std::vector<std::string> ids;
  std::vector<std::string> colnames; // covariates, intercept excluded
  std::vector<ColumnScale> standardization;

  [[nodiscard]] std::size_t n() const noexcept { return rows.size(); }
  [[nodiscard]] Eigen::Index dim() const noexcept {
    return rows.empty() ? static_cast<Eigen::Index>(colnames.size() + 1)
                        : rows.front().x.size();
  }
};

/// Hyperpriors: Gamma(shape, rate) on alpha for the DP; Uniform(0,1) on d and
/// LogNormal(mu, sigma) on (alpha + d) for the PY.
struct HyperPrior {
  double alpha_shape = 1.0;
  double alpha_rate = 1.0;
  double sum_log_mean = 0.0;
  double sum_log_sd = 1.0;
};

struct ModelSpec {
  Family family = Family::PoissonFrequency;
  Process process = Process::DP;
  double n0 = 0.5;
  double a = 3.0;
  double b = 5.0;
  HyperPrior hyper;
};

struct FreqParams {
  Vector beta;
  bool operator==(const FreqParams &o) const { return beta == o.beta; }
};

struct SevParams {
  Vector beta;
  double sigma2 = 1.0;
  bool operator==(const SevParams &o) const {
    return beta == o.beta && sigma2 == o.sigma2;
  }
};

template <class Params> struct Cluster {
  Params params;
  std::size_t size = 0;
  bool operator==(const Cluster &) const = default;
};

/// Partition of the observations plus the distinct parameter of each
/// occupied cluster. Labels are opaque.
template <class Params> struct ClusterState {
  std::vector<int> assignments;
  std::map<int, Cluster<Params>> clusters;
  double alpha = 1.0;
  double discount = 0.0;

  [[nodiscard]] std::size_t K() const noexcept { return clusters.size(); }
  [[nodiscard]] std::size_t n() const noexcept { return assignments.size(); }

  /// Smallest nonnegative label not in use.
  [[nodiscard]] int fresh_label() const {
    int label = 0;
    for (const auto &[l, c] : clusters) {
      if (l != label)
        break;
      ++label;
    }
    return label;
  }

  /// Every violated invariant, one message each.
  [[nodiscard]] std::vector<std::string> violations() const {
    std::vector<std::string> out;
    std::map<int, std::size_t> counts;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (!clusters.contains(assignments[i]))
        out.push_back("observation " + std::to_string(i) +
                      " refers to missing cluster " +
                      std::to_string(assignments[i]));
      ++counts[assignments[i]];
    }
    std::size_t total = 0;
    for (const auto &[label, c] : clusters) {
      total += c.size;
      if (c.size == 0)
        out.push_back("cluster " + std::to_string(label) + " is empty");
      const auto it = counts.find(label);
      const std::size_t seen = it == counts.end() ? 0 : it->second;
      if (seen != c.size)
        out.push_back("cluster " + std::to_string(label) + " records size " +
                      std::to_string(c.size) + " but has " +
                      std::to_string(seen) + " members");
    }
    if (total != assignments.size())
      out.push_back("cluster sizes sum to " + std::to_string(total) +
                    ", expected " + std::to_string(assignments.size()));
    if (!(discount >= 0.0 && discount < 1.0))
      out.push_back("discount outside [0, 1)");
    if (!(alpha > -discount))
      out.push_back("alpha must exceed -discount");
    return out;
  }

  [[nodiscard]] bool valid() const { return violations().empty(); }

  /// Builds a state from labels; sizes are counted. `params` must hold an
  /// entry for every label used.
  static ClusterState from_assignments(std::vector<int> labels,
                                       const std::map<int, Params> &params,
                                       double alpha, double discount) {
    ClusterState s;
    s.assignments = std::move(labels);
    s.alpha = alpha;
    s.discount = discount;
    for (int l : s.assignments) {
      auto it = s.clusters.find(l);
      if (it == s.clusters.end()) {
        const auto p = params.find(l);
        if (p == params.end())
          throw InvalidParameter("no parameters for label " + std::to_string(l));
        it = s.clusters.emplace(l, Cluster<Params>{p->second, 0}).first;
      }
      ++it->second.size;
    }
    return s;
  }

  bool operator==(const ClusterState &) const = default;
};

template <class Params> struct SavedDraw {
  long iteration = 0;
  double loglik = 0.0;
  ClusterState<Params> state;
  bool operator==(const SavedDraw &) const = default;
};

struct DrawsMeta {
  ModelSpec spec;
  long iterations = 0;
  long burn_in = 0;
  long thinning = 1;
  std::uint64_t seed = 0;
  int m = 3;
  std::size_t n = 0;
  Eigen::Index dim = 0;
  double accept_phi = 0.0;
  double accept_logit_d = 0.0;
  double accept_log_sum = 0.0;
  std::vector<ColumnScale> standardization;
  double y_min = 0.0;
  double y_max = 0.0;
  double y_sd = 0.0;

  bool operator==(const DrawsMeta &o) const {
    return spec.family == o.spec.family && spec.process == o.spec.process &&
           spec.n0 == o.spec.n0 && spec.a == o.spec.a && spec.b == o.spec.b &&
           spec.hyper.alpha_shape == o.spec.hyper.alpha_shape &&
           spec.hyper.alpha_rate == o.spec.hyper.alpha_rate &&
           spec.hyper.sum_log_mean == o.spec.hyper.sum_log_mean &&
           spec.hyper.sum_log_sd == o.spec.hyper.sum_log_sd &&
           iterations == o.iterations && burn_in == o.burn_in &&
           thinning == o.thinning && seed == o.seed && m == o.m && n == o.n &&
           dim == o.dim && accept_phi == o.accept_phi &&
           accept_logit_d == o.accept_logit_d &&
           accept_log_sum == o.accept_log_sum &&
           standardization == o.standardization && y_min == o.y_min &&
           y_max == o.y_max && y_sd == o.y_sd;
  }
};

/// Thinned post-burn-in chain states.
template <class Params> struct PosteriorDraws {
  DrawsMeta meta;
  std::vector<SavedDraw<Params>> draws;

  [[nodiscard]] std::size_t T() const noexcept { return draws.size(); }
  bool operator==(const PosteriorDraws &) const = default;
};

struct ValidationReport {
  std::vector<std::string> errors;
  [[nodiscard]] bool ok() const noexcept { return errors.empty(); }
  [[nodiscard]] std::string to_string() const {
    std::string s;
    for (const auto &e : errors)
      s += e + "\n";
    return s;
  }
};

inline ValidationReport validate(const ModelSpec &spec) {
  ValidationReport r;
  if (!(spec.n0 > 0.0))
    r.errors.push_back("n0 must be positive");
  if (!(spec.a > 0.0))
    r.errors.push_back("a must be positive");
  if (!(spec.b > 0.0))
    r.errors.push_back("b must be positive");
  if (!(spec.hyper.alpha_shape > 0.0) || !(spec.hyper.alpha_rate > 0.0))
    r.errors.push_back("alpha prior must have positive shape and rate");
  if (!(spec.hyper.sum_log_sd > 0.0))
    r.errors.push_back("log-normal prior sd must be positive");
  return r;
}

/// Checks every dataset invariant against the model; row numbers are
/// zero-based positions in `dataset.rows`.
inline ValidationReport validate(const Dataset &dataset, const ModelSpec &spec) {
  ValidationReport r = validate(spec);
  if (dataset.rows.empty())
    r.errors.push_back("dataset is empty");
  const Eigen::Index dim =
      dataset.rows.empty() ? 0 : dataset.rows.front().x.size();
  if (!dataset.colnames.empty() &&
      static_cast<Eigen::Index>(dataset.colnames.size() + 1) != dim &&
      !dataset.rows.empty())
    r.errors.push_back("column names do not match covariate length");
  for (std::size_t i = 0; i < dataset.rows.size(); ++i) {
    const auto &row = dataset.rows[i];
    const std::string where = "row " + std::to_string(i) + ": ";
    if (row.x.size() != dim) {
      r.errors.push_back(where + "covariate length " +
                         std::to_string(row.x.size()) + " differs from " +
                         std::to_string(dim));
      continue;
    }
    if (dim == 0 || row.x[0] != 1.0)
      r.errors.push_back(where + "intercept x[0] is not 1");
    if (!row.x.allFinite())
      r.errors.push_back(where + "non-finite covariate");
    if (!(row.t > 0.0) || !std::isfinite(row.t))
      r.errors.push_back(where + "nonpositive exposure");
    if (!std::isfinite(row.y)) {
      r.errors.push_back(where + "non-finite response");
    } else if (spec.family == Family::PoissonFrequency) {
      if (row.y < 0.0 || row.y != std::floor(row.y))
        r.errors.push_back(where + "frequency response is not a count");
    } else if (row.t != 1.0) {
      r.errors.push_back(where + "severity exposure must be 1");
    }
  }
  for (const auto &s : dataset.standardization)
    if (!(s.sd > 0.0))
      r.errors.push_back("standardization of " + s.name +
                         " has nonpositive sd");
  return r;
}

} // namespace bnpc
