#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace bnpc;
using testing_support::vec;

namespace {

PosteriorDraws<FreqParams> single_draw(double t_alpha = 1.0, double d = 0.0) {
  PosteriorDraws<FreqParams> pd;
  pd.meta.n = 1;
  pd.meta.dim = 2;
  pd.meta.spec.process = d > 0 ? Process::PY : Process::DP;
  pd.draws.push_back({1, 0.0,
                      ClusterState<FreqParams>::from_assignments({0}, {{0, {vec({0.3, -0.2})}}}, t_alpha, d)});
  return pd;
}

/// A short frequency chain with PY draws (d > 0 in most states).
PosteriorDraws<FreqParams> py_chain(std::size_t n = 12, long iterations = 100) {
  const auto sim = simulate(SimKind::FreqMixture, {{0.5, vec({-1, 1})}, {0.5, vec({1, -1})}}, n, 51);
  SamplerConfig cfg;
  cfg.iterations = iterations;
  cfg.seed = 52;
  ModelSpec spec;
  spec.process = Process::PY;
  return run_chain(sim.data, spec, PoissonRegression(2), cfg);
}

/// Naive evaluation of the printed PY predictive: sum over every observation's
/// parameter minus d times the sum over distinct parameters, no log space.
double naive_py_mass(const PosteriorDraws<FreqParams> &pd, double y, const Vector &x, double t) {
  const double n = static_cast<double>(pd.meta.n);
  const double lap = std::exp(laplace_marginal_freq(y, t, x).log_marginal);
  double total = 0.0;
  for (const auto &d : pd.draws) {
    const auto &s = d.state;
    auto pois = [&](const Vector &b) {
      const double lam = t * std::exp(x.dot(b));
      return std::pow(lam, y) * std::exp(-lam) / std::tgamma(y + 1.0);
    };
    double all = 0.0, distinct = 0.0;
    for (int c : s.assignments)
      all += pois(s.clusters.at(c).params.beta);
    for (const auto &[l, c] : s.clusters)
      distinct += pois(c.params.beta);
    total += (s.alpha + s.discount * static_cast<double>(s.K())) / (s.alpha + n) * lap +
             (all - s.discount * distinct) / (s.alpha + n);
  }
  return total / static_cast<double>(pd.T());
}

double naive_dp_mass(const PosteriorDraws<FreqParams> &pd, double y, const Vector &x, double t) {
  const double n = static_cast<double>(pd.meta.n);
  const double lap = std::exp(laplace_marginal_freq(y, t, x).log_marginal);
  double total = 0.0;
  for (const auto &d : pd.draws) {
    const auto &s = d.state;
    double all = 0.0;
    for (int c : s.assignments) {
      const double lam = t * std::exp(x.dot(s.clusters.at(c).params.beta));
      all += std::pow(lam, y) * std::exp(-lam) / std::tgamma(y + 1.0);
    }
    total += s.alpha / (s.alpha + n) * lap + all / (s.alpha + n);
  }
  return total / static_cast<double>(pd.T());
}

} // namespace

TEST(PredictiveFreq, SingleDrawCollapse) {
  const auto pd = single_draw();
  const Vector x = vec({1.0, 0.4});
  const auto p = predictive_freq(pd, x, 0.7, 30);
  for (int y = 0; y <= 30; ++y) {
    const double want = 0.5 * std::exp(laplace_marginal_freq(y, 0.7, x).log_marginal) +
                        0.5 * std::exp(poisson_log_pmf(y, std::log(0.7) + x.dot(vec({0.3, -0.2}))));
    EXPECT_NEAR(p.mass[static_cast<std::size_t>(y)], want, 1e-15 + 1e-13 * want);
  }
  EXPECT_DOUBLE_EQ(p.base_weight, 0.5);
  EXPECT_TRUE(p.discrete);
}

TEST(PredictiveFreq, MatchesNaiveSummation) {
  const auto pd = py_chain(3, 100);
  ASSERT_EQ(pd.T(), 50u);
  const Vector x = vec({1.0, 0.3});
  const auto py = predictive_freq(pd, x, 1.2, 5, Process::PY);
  const auto dp = predictive_freq(pd, x, 1.2, 5, Process::DP);
  for (int y = 0; y <= 5; ++y) {
    const double a = naive_py_mass(pd, y, x, 1.2), b = naive_dp_mass(pd, y, x, 1.2);
    EXPECT_NEAR(py.mass[static_cast<std::size_t>(y)], a, 1e-10 * a);
    EXPECT_NEAR(dp.mass[static_cast<std::size_t>(y)], b, 1e-10 * b);
  }
}

TEST(PredictiveFreq, ZeroDiscountPyEqualsDp) {
  auto pd = py_chain();
  for (auto &d : pd.draws)
    d.state.discount = 0.0;
  const Vector x = vec({1.0, -0.8});
  const auto a = predictive_freq(pd, x, 1.0, 50, Process::PY);
  const auto b = predictive_freq(pd, x, 1.0, 50, Process::DP);
  for (std::size_t y = 0; y < a.mass.size(); ++y)
    EXPECT_NEAR(a.mass[y], b.mass[y], 1e-12 * std::max(1.0, b.mass[y]));
  EXPECT_NEAR(a.tail_mass, b.tail_mass, 1e-15);
}

TEST(PredictiveFreq, MassInvariants) {
  const auto pd = py_chain(30, 200);
  for (double xv : {-2.0, -0.5, 0.0, 0.5, 1.5})
    for (Process proc : {Process::DP, Process::PY}) {
      const Vector x = vec({1.0, xv});
      const auto p = predictive_freq(pd, x, 1.0, 50, proc);
      double sum = 0.0;
      for (double m : p.mass) {
        EXPECT_GE(m, 0.0);
        sum += m;
      }
      if (std::abs(xv) <= 0.5)
        EXPECT_GE(sum, 0.999);
      // the data part is a proper sub-probability: strip the base term
      double data_sum = 0.0;
      for (std::size_t y = 0; y < p.mass.size(); ++y)
        data_sum += p.mass[y] - p.base_weight * std::exp(laplace_marginal_freq(static_cast<double>(y), 1.0, x).log_marginal);
      EXPECT_LE(data_sum, 1.0 - p.base_weight + 1e-9);
      // the only deviation from 1 is the Laplace error on the base weight
      EXPECT_LE(std::abs(sum + p.tail_mass - 1.0), 0.03 * p.base_weight);
    }
}

TEST(PredictiveFreq, DuplicatedDrawsAndRelabelingLeaveOutputUnchanged) {
  const auto pd = py_chain();
  auto twice = pd;
  twice.draws.insert(twice.draws.end(), pd.draws.begin(), pd.draws.end());
  auto relabeled = pd;
  for (auto &d : relabeled.draws) {
    std::map<int, FreqParams> p;
    std::vector<int> labels;
    for (int c : d.state.assignments)
      labels.push_back(100 - c);
    for (const auto &[l, c] : d.state.clusters)
      p[100 - l] = c.params;
    d.state = ClusterState<FreqParams>::from_assignments(labels, p, d.state.alpha, d.state.discount);
  }
  const Vector x = vec({1.0, 0.5});
  const auto a = predictive_freq(pd, x, 1.0, 20);
  const auto b = predictive_freq(twice, x, 1.0, 20);
  const auto c = predictive_freq(relabeled, x, 1.0, 20);
  const auto again = predictive_freq(pd, x, 1.0, 20);
  for (std::size_t y = 0; y < a.mass.size(); ++y) {
    EXPECT_NEAR(a.mass[y], b.mass[y], 1e-12);
    EXPECT_NEAR(a.mass[y], c.mass[y], 1e-12);
    EXPECT_EQ(a.mass[y], again.mass[y]);
  }
}

TEST(PredictiveFreq, RowsAreThreadCountInvariant) {
  const auto pd = py_chain();
  std::vector<Observation> rows;
  for (int i = 0; i < 9; ++i)
    rows.push_back({vec({1.0, -1.0 + 0.25 * i}), 0.5 + 0.1 * i, 0.0});
  const auto a = predict_freq_rows(pd, rows, 10, 640, Process::PY, 1);
  const auto b = predict_freq_rows(pd, rows, 10, 640, Process::PY, 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(a[i].mass, b[i].mass);
    EXPECT_LT(a[i].tail_mass, kPmfTailLimit);
  }
  EXPECT_THROW(predictive_freq(pd, vec({1.0, 0.0}), 0.0, 10), InvalidParameter);
  EXPECT_THROW(predictive_freq(pd, vec({1.0}), 1.0, 10), InvalidParameter);
}

TEST(PredictiveFreq, TailIsExact) {
  // no base weight to speak of: alpha tiny
  const auto pd = single_draw(1e-12);
  const Vector x = vec({1.0, 0.0});
  const auto p = predictive_freq(pd, x, 2.0, 3);
  double sum = 0.0;
  for (double m : p.mass)
    sum += m;
  EXPECT_NEAR(sum + p.tail_mass, 1.0, 1e-10);
  EXPECT_THROW(predictive_mean(p), TailMassTooLarge);
}

TEST(PredictiveMean, Examples) {
  PredictiveDistribution point;
  point.grid = {0, 1, 2, 3};
  point.mass = {0, 0, 1, 0};
  EXPECT_DOUBLE_EQ(predictive_mean(point), 2.0);

  PredictiveDistribution pois;
  for (int y = 0; y <= 60; ++y) {
    pois.grid.push_back(y);
    pois.mass.push_back(std::exp(poisson_log_pmf(y, std::log(3.0))));
  }
  EXPECT_NEAR(predictive_mean(pois), 3.0, 1e-6);

  const auto grid = linear_grid(-10.0, 10.0, 2001);
  std::vector<double> f;
  for (double y : grid)
    f.push_back(std::exp(normal_log_density(y, 0.0, 1.0)));
  const auto dens = make_density(grid, f);
  EXPECT_NEAR(predictive_mean(dens), 0.0, 1e-6);

  const auto narrow = make_density(linear_grid(-1.0, 1.0, 201), std::vector<double>(201, 0.3));
  EXPECT_THROW(predictive_mean(narrow), TailMassTooLarge);
}

TEST(PredictiveSev, SingleDrawCollapseAndNormalization) {
  PosteriorDraws<SevParams> pd;
  pd.meta.spec.family = Family::NormalSeverity;
  pd.meta.n = 1;
  pd.meta.dim = 2;
  pd.draws.push_back({1, 0.0, ClusterState<SevParams>::from_assignments({0}, {{0, {vec({1.0, 0.5}), 0.4}}}, 1.0, 0.0)});
  const Vector x = vec({1.0, -0.5});
  const auto grid = linear_grid(-30.0, 30.0, 60001);
  const auto p = predictive_sev(pd, x, grid);
  for (std::size_t i = 0; i < grid.size(); i += 997) {
    const double want = 0.5 * nig_marginal_sev(grid[i], x, 0.5, 3.0, 5.0) +
                        0.5 * std::exp(normal_log_density(grid[i], 0.75, 0.4));
    EXPECT_NEAR(p.mass[i], want, 1e-14 + 1e-12 * want);
  }
  EXPECT_NEAR(trapezoid(p.grid, p.mass), 1.0, 1e-3);
}

TEST(PredictiveSev, ZeroDiscountPyEqualsDpAndMeans) {
  const auto sim = simulate(SimKind::SevMixture, {{0.5, vec({0, 3}), 0.25}, {0.5, vec({6, -3}), 0.25}}, 40, 53);
  SamplerConfig cfg;
  cfg.iterations = 100;
  ModelSpec spec;
  spec.family = Family::NormalSeverity;
  spec.process = Process::PY;
  cfg.init_discount = 0.0;
  cfg.fix_discount = true;
  cfg.fix_alpha = true;
  const auto pd = run_chain(sim.data, spec, NormalRegression(2, 0.5, 3.0, 5.0), cfg);
  const Vector x = vec({1.0, 0.2});
  const auto grid = default_severity_grid(pd.meta);
  EXPECT_EQ(grid.size(), 513u);
  const auto a = predictive_sev(pd, x, grid, Process::PY);
  const auto b = predictive_sev(pd, x, grid, Process::DP);
  for (std::size_t i = 0; i < grid.size(); ++i)
    EXPECT_NEAR(a.mass[i], b.mass[i], 1e-12);
  const auto wide = predictive_sev(pd, x, linear_grid(-40.0, 40.0, 40001), Process::PY);
  EXPECT_NEAR(predictive_mean(wide), predictive_sev_mean_exact(pd, x, Process::PY), 1e-4);
}

TEST(PredictiveFreq, UpperTailUnderflowsToZero) {
  EXPECT_EQ(detail::poisson_upper_tail(3200.0, 1e-30), 0.0);
  EXPECT_EQ(detail::poisson_upper_tail(3200.0, 1.0), 0.0);
  EXPECT_NEAR(detail::poisson_upper_tail(0.0, 2.0), 1.0 - std::exp(-2.0), 1e-15);
  EXPECT_NEAR(detail::poisson_upper_tail(2.0, 1.5), 1.0 - std::exp(-1.5) * (1 + 1.5 + 1.125), 1e-15);
  const auto pd = single_draw();
  const auto p = predictive_freq(pd, testing_support::vec({1.0, 0.0}), 1e-3, 3200);
  EXPECT_GE(p.tail_mass, 0.0);
}
