#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace bnpc;
using testing_support::vec;

namespace {

template <class Params> std::string to_text(const PosteriorDraws<Params> &pd) {
  std::ostringstream os;
  write_draws(os, pd);
  return os.str();
}

PosteriorDraws<SevParams> sev_draws() {
  PosteriorDraws<SevParams> pd;
  pd.meta.spec.family = Family::NormalSeverity;
  pd.meta.spec.process = Process::PY;
  pd.meta.n = 4;
  pd.meta.dim = 2;
  pd.meta.iterations = 10;
  pd.meta.burn_in = 5;
  pd.meta.seed = 123456789012345ULL;
  pd.meta.accept_logit_d = 0.4412;
  pd.meta.y_min = -1.0 / 3.0;
  pd.meta.y_max = 1e300;
  pd.meta.y_sd = 5e-324;
  pd.meta.standardization = {{"DriverAge", 45.123456789, 14.2}};
  for (long it = 6; it <= 10; ++it) {
    std::map<int, SevParams> p{{0, {vec({0.1 * it, -1.0 / 7.0}), 0.3}}, {3, {vec({1e-17, 2.5}), 1.0 / 3.0}}};
    SavedDraw<SevParams> d;
    d.iteration = it;
    d.loglik = -123.456789 * it;
    d.state = ClusterState<SevParams>::from_assignments({0, 3, 3, 0}, p, M_PI, 0.123);
    pd.draws.push_back(d);
  }
  return pd;
}

} // namespace

TEST(Draws, ExactRoundTripSeverity) {
  const auto pd = sev_draws();
  const std::string text = to_text(pd);
  std::istringstream is(text);
  const auto back = read_draws<SevParams>(is);
  EXPECT_EQ(back, pd);
  EXPECT_EQ(to_text(back), text);
}

TEST(Draws, ExactRoundTripFrequencyFromChain) {
  const auto sim = simulate(SimKind::FreqMixture, {{1.0, vec({0.2, 0.4})}}, 40, 3);
  SamplerConfig cfg;
  cfg.iterations = 60;
  const auto pd = run_chain(sim.data, ModelSpec{}, PoissonRegression(2), cfg);
  const std::string text = to_text(pd);
  std::istringstream is(text);
  EXPECT_EQ(read_draws<FreqParams>(is), pd);
  std::istringstream meta_only(text);
  const auto m = read_draws_meta(meta_only);
  EXPECT_EQ(m.n, 40u);
  EXPECT_EQ(m.spec.family, Family::PoissonFrequency);
}

TEST(Draws, FileRoundTrip) {
  const auto pd = sev_draws();
  const std::string dir = BNPCLAIMS_TEST_TMP;
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/roundtrip_draws.txt";
  save_draws(path, pd);
  EXPECT_EQ(load_draws<SevParams>(path), pd);
  EXPECT_EQ(load_draws_meta(path).seed, pd.meta.seed);
  EXPECT_THROW(load_draws<SevParams>(dir + "/missing.txt"), IoError);
  EXPECT_THROW(save_draws(dir + "/no/such/dir/x.txt", pd), IoError);
}

TEST(Draws, RejectsMalformedInput) {
  const std::string good = to_text(sev_draws());
  auto reads = [](const std::string &t) {
    std::istringstream is(t);
    return read_draws<SevParams>(is);
  };
  EXPECT_THROW(reads("garbage\n"), ParseError);
  {
    std::istringstream is(good);
    EXPECT_THROW(read_draws<FreqParams>(is), ParseError);
  }
  EXPECT_THROW(reads(good.substr(0, good.rfind("end"))), ParseError);
  std::string bad_count = good;
  bad_count.replace(bad_count.rfind("end 5"), 5, "end 4");
  EXPECT_THROW(reads(bad_count), ParseError);
  std::string bad_size = good;
  bad_size.replace(bad_size.find("cluster 0 2"), 11, "cluster 0 3");
  try {
    reads(bad_size);
    FAIL() << "expected ParseError";
  } catch (const ParseError &e) {
    EXPECT_GT(e.line(), 3u);
  }
  std::string bad_real = good;
  bad_real.replace(bad_real.find("cluster 3 2 ") + 12, 1, "x");
  EXPECT_THROW(reads(bad_real), ParseError);
}

TEST(Draws, RealFormattingIsShortestRoundTrip) {
  for (double v : {0.1, -1.0 / 3.0, 1e-310, 6.02214076e23, 0.0}) {
    EXPECT_EQ(parse_real(fmt_real(v)), v);
  }
  EXPECT_EQ(fmt_real(0.5), "0.5");
  EXPECT_THROW(parse_real("1.0x"), ParseError);
  EXPECT_EQ(parse_real("-inf"), -std::numeric_limits<double>::infinity());
}
