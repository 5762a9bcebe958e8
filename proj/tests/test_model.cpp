#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace bnpc;
using testing_support::vec;

namespace {

ClusterState<FreqParams> three_clusters() {
  std::map<int, FreqParams> p{{0, {vec({0.0})}}, {2, {vec({1.0})}}, {5, {vec({2.0})}}};
  return ClusterState<FreqParams>::from_assignments({0, 2, 2, 5, 0}, p, 1.0, 0.0);
}

Dataset tiny_freq() {
  Dataset d;
  d.colnames = {"x1"};
  d.rows = {{vec({1, 0.5}), 1.0, 0.0}, {vec({1, -0.5}), 0.5, 2.0}};
  d.ids = {"a", "b"};
  return d;
}

} // namespace

TEST(ClusterState, FromAssignmentsCountsSizes) {
  const auto s = three_clusters();
  EXPECT_EQ(s.K(), 3u);
  EXPECT_EQ(s.n(), 5u);
  EXPECT_EQ(s.clusters.at(0).size, 2u);
  EXPECT_EQ(s.clusters.at(2).size, 2u);
  EXPECT_EQ(s.clusters.at(5).size, 1u);
  EXPECT_TRUE(s.valid());
  EXPECT_EQ(s.fresh_label(), 1);
}

TEST(ClusterState, ViolationsDetected) {
  auto s = three_clusters();
  s.clusters.at(5).size = 2;
  EXPECT_FALSE(s.valid());
  s = three_clusters();
  s.assignments[0] = 9;
  EXPECT_FALSE(s.valid());
  s = three_clusters();
  s.discount = 1.0;
  EXPECT_FALSE(s.valid());
  s = three_clusters();
  s.discount = 0.5;
  s.alpha = -0.6;
  EXPECT_FALSE(s.valid());
  s.alpha = -0.4;
  EXPECT_TRUE(s.valid());
  EXPECT_THROW(ClusterState<FreqParams>::from_assignments({0, 1}, {{0, {vec({0.0})}}}, 1.0, 0.0),
               InvalidParameter);
}

TEST(ClusterState, FreshLabelFillsGaps) {
  ClusterState<FreqParams> s;
  EXPECT_EQ(s.fresh_label(), 0);
  s.clusters.emplace(0, Cluster<FreqParams>{{vec({0.0})}, 1});
  s.clusters.emplace(1, Cluster<FreqParams>{{vec({0.0})}, 1});
  EXPECT_EQ(s.fresh_label(), 2);
}

TEST(Parsing, FamilyAndProcess) {
  EXPECT_EQ(parse_family("poisson"), Family::PoissonFrequency);
  EXPECT_EQ(parse_family("normal"), Family::NormalSeverity);
  EXPECT_EQ(parse_process("py"), Process::PY);
  EXPECT_STREQ(to_string(Process::DP), "dp");
  EXPECT_THROW(parse_family("gamma"), InvalidParameter);
  EXPECT_THROW(parse_process("hdp"), InvalidParameter);
}

TEST(Validation, AcceptsWellFormedData) {
  EXPECT_TRUE(validate(tiny_freq(), ModelSpec{}).ok());
}

TEST(Validation, ReportsEachProblem) {
  ModelSpec spec;
  auto d = tiny_freq();
  d.rows[1].t = 0.0;
  auto r = validate(d, spec);
  ASSERT_FALSE(r.ok());
  EXPECT_NE(r.to_string().find("row 1: nonpositive exposure"), std::string::npos);

  d = tiny_freq();
  d.rows[0].x[0] = 2.0;
  EXPECT_NE(validate(d, spec).to_string().find("intercept"), std::string::npos);

  d = tiny_freq();
  d.rows[0].y = 1.5;
  EXPECT_FALSE(validate(d, spec).ok());

  d = tiny_freq();
  spec.family = Family::NormalSeverity;
  EXPECT_NE(validate(d, spec).to_string().find("severity exposure"), std::string::npos);

  ModelSpec bad;
  bad.n0 = 0.0;
  bad.a = -1.0;
  EXPECT_EQ(validate(bad).errors.size(), 2u);
}
