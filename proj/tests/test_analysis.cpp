#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

using namespace bnpc;
using testing_support::vec;

namespace {

PosteriorDraws<FreqParams> draws_of(const std::vector<std::vector<int>> &labelings) {
  PosteriorDraws<FreqParams> pd;
  for (const auto &l : labelings) {
    std::map<int, FreqParams> p;
    for (int c : l)
      p[c] = {vec({0.1 * c})};
    pd.draws.push_back({0, 0.0, ClusterState<FreqParams>::from_assignments(l, p, 1.0, 0.0)});
  }
  pd.meta.n = labelings.front().size();
  return pd;
}

Matrix blocks(const std::vector<int> &truth, double within = 0.0, double across = 1.0) {
  const auto n = static_cast<Eigen::Index>(truth.size());
  Matrix D(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      D(i, j) = i == j ? 0.0 : (truth[static_cast<std::size_t>(i)] == truth[static_cast<std::size_t>(j)] ? within : across);
  return D;
}

std::vector<double> ar1(double rho, std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, 3);
  std::vector<double> x(n);
  double v = draw_std_normal(rng) / std::sqrt(1 - rho * rho);
  for (auto &e : x) {
    v = rho * v + draw_std_normal(rng);
    e = v;
  }
  return x;
}

} // namespace

TEST(Dissimilarity, HandCountedExamples) {
  const auto alt = dissimilarity_matrix(draws_of({{0, 0, 1}, {0, 1, 1}, {0, 0, 1}, {0, 1, 1}}));
  EXPECT_DOUBLE_EQ(alt.D(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(alt.D(1, 2), 0.5);
  EXPECT_DOUBLE_EQ(alt.D(0, 2), 1.0);
  const auto one = dissimilarity_matrix(draws_of({{3, 3, 3, 3}, {7, 7, 7, 7}}));
  EXPECT_TRUE(one.D.isZero(0.0));
  EXPECT_EQ(one.ids, (std::vector<std::string>{"0", "1", "2", "3"}));
  EXPECT_THROW(dissimilarity_matrix(PosteriorDraws<FreqParams>{}), InvalidParameter);
}

TEST(Dissimilarity, StructuralInvariantsAndLabelInvariance) {
  const auto sim = simulate(SimKind::FreqMixture, {{0.5, vec({-1, 1})}, {0.5, vec({1, -1})}}, 25, 61);
  SamplerConfig cfg;
  cfg.iterations = 60;
  const auto pd = run_chain(sim.data, ModelSpec{}, PoissonRegression(2), cfg);
  auto relabeled = pd;
  for (auto &d : relabeled.draws) {
    std::vector<int> l;
    std::map<int, FreqParams> p;
    for (int c : d.state.assignments)
      l.push_back(-3 * c - 1);
    for (const auto &[k, c] : d.state.clusters)
      p[-3 * k - 1] = c.params;
    d.state = ClusterState<FreqParams>::from_assignments(l, p, d.state.alpha, d.state.discount);
  }
  const auto a = dissimilarity_matrix(pd, {}, 1);
  const auto b = dissimilarity_matrix(relabeled, {}, 3);
  EXPECT_EQ(a.D, b.D);
  EXPECT_EQ(a.D, a.D.transpose());
  EXPECT_TRUE(a.D.diagonal().isZero(0.0));
  EXPECT_GE(a.D.minCoeff(), 0.0);
  EXPECT_LE(a.D.maxCoeff(), 1.0);
}

TEST(PointPartition, Examples) {
  const auto zero = point_partition(Matrix::Zero(5, 5));
  EXPECT_EQ(zero.clusters(), 1);
  const std::vector<int> truth{0, 1, 0, 2, 1, 1, 2, 0};
  const auto p = point_partition(blocks(truth, 0.1, 0.9));
  EXPECT_EQ(p.clusters(), 3);
  EXPECT_EQ(p.labels, canonical_labels(truth));
  EXPECT_EQ(p.merges.size(), truth.size() - 1);
  for (std::size_t i = 1; i < p.merges.size(); ++i)
    EXPECT_LE(p.merges[i - 1].height, p.merges[i].height);
  // leaf order keeps blocks contiguous
  std::vector<int> seq;
  for (auto i : p.order)
    if (seq.empty() || seq.back() != truth[i])
      seq.push_back(truth[i]);
  EXPECT_EQ(seq.size(), 3u);
  const auto two = point_partition(blocks({0, 0, 1, 1, 1}));
  EXPECT_EQ(two.labels, (std::vector<int>{0, 0, 1, 1, 1}));
  EXPECT_THROW(point_partition(Matrix::Zero(3, 3), 1.0), InvalidParameter);
  EXPECT_THROW(point_partition(Matrix::Zero(3, 3), 0.0), InvalidParameter);
}

TEST(PointPartition, AverageLinkageHeights) {
  // 0,1 at 0.2; 2 joins at mean(0.6, 0.8)=0.7
  Matrix D(3, 3);
  D << 0, 0.2, 0.6, 0.2, 0, 0.8, 0.6, 0.8, 0;
  const auto p = point_partition(D);
  ASSERT_EQ(p.merges.size(), 2u);
  EXPECT_DOUBLE_EQ(p.merges[0].height, 0.2);
  EXPECT_DOUBLE_EQ(p.merges[1].height, 0.7);
  EXPECT_EQ(p.labels, (std::vector<int>{0, 0, 1}));
  EXPECT_EQ(point_partition(D, 0.75).clusters(), 1);
}

TEST(PointPartition, ReorderInvariantUpToLabels) {
  CounterRng rng(62, 0);
  const std::size_t n = 30;
  Matrix D(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = i == j ? 0.0 : std::clamp(0.5 * static_cast<double>((i % 3) != (j % 3)) + 0.45 * uniform_open(rng), 0.0, 1.0);
      D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      D(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix P(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          D(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(perm[j]));
  const auto a = point_partition(D);
  const auto b = point_partition(P);
  std::vector<int> back(n);
  for (std::size_t i = 0; i < n; ++i)
    back[perm[i]] = b.labels[i];
  EXPECT_EQ(canonical_labels(back), a.labels);
  EXPECT_EQ(a.clusters(), 3);
}

TEST(Export, CsvAndPgm) {
  std::filesystem::create_directories(BNPCLAIMS_TEST_TMP);
  const std::string dir = BNPCLAIMS_TEST_TMP;
  DissimilarityMatrix dm{blocks({0, 1, 0}), {"a", "b", "c"}};
  dm.D(0, 1) = dm.D(1, 0) = 0.5;
  const std::vector<std::size_t> order{0, 2, 1};
  write_dissimilarity_csv(dir + "/d.csv", dm, order);
  write_dissimilarity_pgm(dir + "/d.pgm", dm.D, order);
  std::ifstream csv(dir + "/d.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "id,a,c,b");
  std::getline(csv, line);
  EXPECT_EQ(line.substr(0, 8), "a,0,0,0.");
  std::ifstream pgm(dir + "/d.pgm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, mx = 0;
  pgm >> magic >> w >> h >> mx;
  pgm.get();
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 3);
  EXPECT_EQ(mx, 255);
  std::vector<unsigned char> px(9);
  pgm.read(reinterpret_cast<char *>(px.data()), 9);
  EXPECT_EQ(px, (std::vector<unsigned char>{255, 255, 128, 255, 255, 0, 128, 0, 255}));
  EXPECT_THROW(write_dissimilarity_pgm("/nonexistent/dir/x.pgm", dm.D, order), IoError);
}

TEST(ChainDiagnostics, IidSeries) {
  CounterRng rng(63, 0);
  std::vector<double> x(10000);
  for (auto &v : x)
    v = draw_std_normal(rng);
  const auto d = chain_diagnostics(x);
  EXPECT_GE(d.ess, 8500.0);
  EXPECT_LE(d.ess, 11500.0);
  EXPECT_LT(std::abs(d.geweke_z), 4.0);
  EXPECT_EQ(d.acf.size(), 50u);
  EXPECT_LT(std::abs(d.acf[0]), 0.04);
}

TEST(ChainDiagnostics, Ar1Series) {
  const std::size_t n = 100000;
  const auto d = chain_diagnostics(ar1(0.9, n, 64));
  const double want = static_cast<double>(n) * 0.1 / 1.9;
  EXPECT_NEAR(d.ess, want, 0.3 * want);
  EXPECT_NEAR(d.acf[0], 0.9, 0.02);
  EXPECT_NEAR(d.acf[1], 0.81, 0.03);
}

TEST(ChainDiagnostics, GewekeDetectsDrift) {
  auto x = ar1(0.5, 2000, 65);
  for (std::size_t i = 0; i < 200; ++i)
    x[i] += 5.0;
  EXPECT_GT(std::abs(chain_diagnostics(x).geweke_z), 4.0);
}

TEST(ChainDiagnostics, Errors) {
  EXPECT_THROW(chain_diagnostics(std::vector<double>(500, 1.5)), DegenerateSeries);
  EXPECT_THROW(chain_diagnostics(std::vector<double>(99, 0.0)), SeriesTooShort);
}

TEST(ChiSquare, HandExample) {
  const auto r = chi_square_gof({50, 30, 20}, {45, 35, 20});
  EXPECT_NEAR(r.stat, 25.0 / 50 + 25.0 / 30, 1e-12);
  EXPECT_EQ(r.df, 2);
  // chi-square upper tail with 2 df is exp(-x/2)
  EXPECT_NEAR(r.p, std::exp(-r.stat / 2), 1e-12);
  EXPECT_NEAR(r.p, 0.513, 5e-4);
}

TEST(ChiSquare, ProportionalAndMerging) {
  const auto exact = chi_square_gof({40, 30, 20, 10}, {40, 30, 20, 10});
  EXPECT_EQ(exact.stat, 0.0);
  EXPECT_EQ(exact.p, 1.0);
  // tail bins 3, 1, 0.5 merge into one bin of 4.5 which then joins 10
  const auto m = chi_square_gof({60, 25, 10, 3, 1, 0.5}, {55, 30, 9, 4, 1, 0});
  EXPECT_EQ(m.expected, (std::vector<double>{60, 25, 14.5}));
  EXPECT_EQ(m.observed, (std::vector<double>{55, 30, 14}));
  EXPECT_EQ(m.df, 2);
  // a leftover low bin at the left joins its right neighbour
  const auto left = chi_square_gof({2, 10, 10}, {3, 9, 10});
  EXPECT_EQ(left.expected, (std::vector<double>{12, 10}));
  EXPECT_THROW(chi_square_gof({3, 1}, {2, 2}), TooFewBins);
  EXPECT_THROW(chi_square_gof({10, 10}, {0, 0}), InvalidParameter);
}

TEST(ChiSquare, MergingNeverIncreasesDfAndPInRange) {
  CounterRng rng(66, 0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = 3 + rep % 12;
    std::vector<double> e(k), o(k);
    for (std::size_t i = 0; i < k; ++i) {
      e[i] = 40.0 * uniform_open(rng);
      o[i] = static_cast<double>(draw(rng, Poisson{e[i] + 0.1}));
    }
    try {
      const auto r = chi_square_gof(e, o);
      EXPECT_LE(r.df, static_cast<int>(k) - 1);
      EXPECT_GE(r.p, 0.0);
      EXPECT_LE(r.p, 1.0);
      for (double v : r.expected)
        EXPECT_GE(v, 5.0);
    } catch (const TooFewBins &) {
    }
  }
}

TEST(ChiSquare, FromPredictive) {
  PredictiveDistribution p;
  p.discrete = true;
  p.grid = {0, 1, 2};
  p.mass = {0.5, 0.3, 0.15};
  p.tail_mass = 0.05;
  const auto r = chi_square_gof(p, {50, 30, 15, 4, 1});
  EXPECT_EQ(r.expected, (std::vector<double>{50, 30, 20}));
  EXPECT_EQ(r.observed, (std::vector<double>{50, 30, 20}));
  const auto e = summed_expected_counts({p, p}, 2);
  EXPECT_NEAR(e[0], 1.0, 1e-15);
  EXPECT_NEAR(e[1], 1.0, 1e-15);
}

TEST(Mse, Examples) {
  EXPECT_EQ(mse({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(mse({1, 2}, {2, 4}), 2.5);
  EXPECT_THROW(mse({1}, {1, 2}), LengthMismatch);
}

TEST(Baseline, OlsExact) {
  std::vector<Observation> rows;
  for (int i = 0; i < 20; ++i) {
    const double a = 0.3 * i - 2, b = std::sin(i);
    rows.push_back({vec({1.0, a, b}), 1.0, 1.5 - 2.0 * a + 0.25 * b});
  }
  const auto f = fit_baseline(rows, BaselineFamily::OLS);
  EXPECT_NEAR(f.beta[0], 1.5, 1e-10);
  EXPECT_NEAR(f.beta[1], -2.0, 1e-10);
  EXPECT_NEAR(f.beta[2], 0.25, 1e-10);
  EXPECT_NEAR(f.sigma2, 0.0, 1e-18);
  EXPECT_NEAR(f.predict(rows[3]), rows[3].y, 1e-10);
}

TEST(Baseline, OlsResidualVariance) {
  // y = 1,2,4 on intercept only: mean 7/3, RSS = 14/3, df 2
  const auto f = fit_baseline({{vec({1.0}), 1, 1}, {vec({1.0}), 1, 2}, {vec({1.0}), 1, 4}}, BaselineFamily::OLS);
  EXPECT_NEAR(f.beta[0], 7.0 / 3, 1e-12);
  EXPECT_NEAR(f.sigma2, 7.0 / 3, 1e-12);
}

TEST(Baseline, PoissonGlmRecoversTruthAndSolvesScore) {
  CounterRng rng(67, 0);
  std::vector<Observation> rows;
  const Vector beta = vec({0.5, -0.3});
  for (int i = 0; i < 5000; ++i) {
    const Vector x = vec({1.0, draw_std_normal(rng)});
    const double t = draw(rng, Uniform{0.5, 1.5});
    rows.push_back({x, t, static_cast<double>(draw(rng, Poisson{t * std::exp(x.dot(beta))}))});
  }
  const auto f = fit_baseline(rows, BaselineFamily::PoissonGLM);
  Matrix info = Matrix::Zero(2, 2);
  Vector score = Vector::Zero(2);
  for (const auto &r : rows) {
    const double mu = r.t * std::exp(r.x.dot(f.beta));
    info += mu * r.x * r.x.transpose();
    score += (r.y - mu) * r.x;
  }
  const Matrix cov = info.inverse();
  for (int j = 0; j < 2; ++j)
    EXPECT_NEAR(f.beta[j], beta[j], 4 * std::sqrt(cov(j, j)));
  EXPECT_LT(score.lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(Baseline, InterceptOnlyClosedForm) {
  std::vector<Observation> rows{{vec({1.0}), 0.5, 0}, {vec({1.0}), 1.2, 3}, {vec({1.0}), 0.9, 1}, {vec({1.0}), 2.0, 2}};
  const auto f = fit_baseline(rows, BaselineFamily::PoissonGLM);
  EXPECT_NEAR(f.beta[0], std::log(6.0 / 4.6), 1e-12);
}

TEST(Baseline, Errors) {
  std::vector<Observation> rows;
  for (int i = 0; i < 10; ++i)
    rows.push_back({vec({1.0, 2.0 * i, static_cast<double>(i)}), 1.0, static_cast<double>(i % 3)});
  EXPECT_THROW(fit_baseline(rows, BaselineFamily::PoissonGLM), RankDeficient);
  EXPECT_THROW(fit_baseline(rows, BaselineFamily::OLS), RankDeficient);
  std::vector<Observation> zeros{{vec({1.0}), 1, 0}, {vec({1.0}), 1, 0}};
  EXPECT_THROW(fit_baseline(zeros, BaselineFamily::PoissonGLM), NoConvergence);
}
