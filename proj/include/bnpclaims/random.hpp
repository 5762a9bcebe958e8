#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>

#include "errors.hpp"
#include "linalg.hpp"

namespace bnpc {

/// Counter-based generator: output n is a SplitMix64 finalization of
/// key + (n + 1) * golden. Streams with distinct keys are independent, and
/// any position can be reached by setting the counter.
class CounterRng {
public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : key_(finalize(seed ^ finalize(stream + 0x632BE59BD9B4E019ULL))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return finalize(key_ + (++counter_) * kGolden); }

  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }
  void set_counter(std::uint64_t c) noexcept { counter_ = c; }

  /// Independent child stream, e.g. one per parallel chain.
  [[nodiscard]] CounterRng split(std::uint64_t stream) const {
    CounterRng child;
    child.key_ = finalize(key_ ^ finalize(stream * kGolden + 1));
    return child;
  }

  bool operator==(const CounterRng &) const = default;

private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static constexpr std::uint64_t finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Uniform on the open interval (0, 1).
inline double uniform_open(CounterRng &rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

struct Gamma {
  double shape;
  double rate;
};
struct Beta {
  double a;
  double b;
};
struct Uniform {
  double lo;
  double hi;
};
struct Normal {
  double mean;
  double variance;
};
struct InverseGamma {
  double shape;
  double scale;
};
struct Poisson {
  double rate;
};
struct Mvn {
  const Vector &mean;
  const CholFactor &chol;
};
struct Categorical {
  std::span<const double> log_weights;
};

inline double draw(CounterRng &rng, const Uniform &d) {
  if (!(d.lo < d.hi))
    throw InvalidParameter("Uniform: need lo < hi");
  return d.lo + (d.hi - d.lo) * uniform_open(rng);
}

inline double draw_std_normal(CounterRng &rng) {
  const double u1 = uniform_open(rng);
  const double u2 = uniform_open(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double draw(CounterRng &rng, const Normal &d) {
  if (!(d.variance > 0.0))
    throw InvalidParameter("Normal: variance must be positive");
  return d.mean + std::sqrt(d.variance) * draw_std_normal(rng);
}

// Marsaglia-Tsang; shape < 1 handled by boosting to shape + 1.
inline double draw(CounterRng &rng, const Gamma &d) {
  if (!(d.shape > 0.0) || !(d.rate > 0.0))
    throw InvalidParameter("Gamma: shape and rate must be positive");
  if (d.shape < 1.0) {
    const double g = draw(rng, Gamma{d.shape + 1.0, d.rate});
    return g * std::pow(uniform_open(rng), 1.0 / d.shape);
  }
  const double dd = d.shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * dd);
  for (;;) {
    double z = 0.0;
    double v = 0.0;
    do {
      z = draw_std_normal(rng);
      v = 1.0 + c * z;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open(rng);
    if (std::log(u) < 0.5 * z * z + dd - dd * v + dd * std::log(v))
      return dd * v / d.rate;
  }
}

inline double draw(CounterRng &rng, const InverseGamma &d) {
  if (!(d.shape > 0.0) || !(d.scale > 0.0))
    throw InvalidParameter("InverseGamma: shape and scale must be positive");
  return 1.0 / draw(rng, Gamma{d.shape, d.scale});
}

inline double draw(CounterRng &rng, const Beta &d) {
  if (!(d.a > 0.0) || !(d.b > 0.0))
    throw InvalidParameter("Beta: parameters must be positive");
  const double x = draw(rng, Gamma{d.a, 1.0});
  const double y = draw(rng, Gamma{d.b, 1.0});
  return x / (x + y);
}

// Inversion for small rates, Hormann's PTRS otherwise.
inline long long draw(CounterRng &rng, const Poisson &d) {
  if (!(d.rate >= 0.0) || !std::isfinite(d.rate))
    throw InvalidParameter("Poisson: rate must be finite and nonnegative");
  if (d.rate == 0.0)
    return 0;
  if (d.rate < 10.0) {
    const double u = uniform_open(rng);
    double p = std::exp(-d.rate);
    double cdf = p;
    long long k = 0;
    while (u > cdf && k < 1000) {
      ++k;
      p *= d.rate / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }
  const double lam = d.rate;
  const double slam = std::sqrt(lam);
  const double loglam = std::log(lam);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = uniform_open(rng) - 0.5;
    const double v = uniform_open(rng);
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + lam + 0.43);
    if (us >= 0.07 && v <= vr)
      return static_cast<long long>(k);
    if (k < 0.0 || (us < 0.013 && v > us))
      continue;
    if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
        -lam + k * loglam - std::lgamma(k + 1.0))
      return static_cast<long long>(k);
  }
}

inline Vector draw(CounterRng &rng, const Mvn &d) {
  if (d.mean.size() != d.chol.dim())
    throw InvalidParameter("Mvn: mean and factor dimensions differ");
  Vector z(d.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i)
    z[i] = draw_std_normal(rng);
  return d.mean + d.chol.lower().triangularView<Eigen::Lower>() * z;
}

/// Index drawn with probability proportional to exp(log_weights[i]).
inline std::size_t draw(CounterRng &rng, const Categorical &d) {
  if (d.log_weights.empty())
    throw InvalidParameter("Categorical: no categories");
  const double total = log_sum_exp(d.log_weights);
  if (!std::isfinite(total))
    throw InvalidParameter("Categorical: weights are all zero or not finite");
  const double u = uniform_open(rng);
  double cdf = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < d.log_weights.size(); ++i) {
    if (d.log_weights[i] == -std::numeric_limits<double>::infinity())
      continue;
    cdf += std::exp(d.log_weights[i] - total);
    last = i;
    if (u < cdf)
      return i;
  }
  return last;
}

/// log density of MVN(mean, S) at x given chol(S).
inline double mvn_log_density(const Vector &x, const Vector &mean,
                              const CholFactor &chol) {
  const double k = static_cast<double>(x.size());
  return -0.5 * (k * std::log(2.0 * std::numbers::pi) + chol.log_det() +
                 chol.inverse_quadratic(x - mean));
}

} // namespace bnpc
