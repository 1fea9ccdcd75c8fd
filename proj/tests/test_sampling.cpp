#include <set>

#include <gtest/gtest.h>

#include "vrom/sampling.hpp"

using namespace vrom;
using namespace vrom::sampling;

namespace {

void expect_one_per_bin(const std::vector<ParameterPoint>& pts, const ParameterBox& box) {
  const auto n = pts.size();
  std::set<std::size_t> mach_bins, alpha_bins;
  for (const auto& p : pts) {
    EXPECT_TRUE(box.contains(p.mach, p.alpha0));
    const double um = (p.mach - box.mach_range[0]) / (box.mach_range[1] - box.mach_range[0]);
    const double ua = (p.alpha0 - box.alpha0_range[0]) / (box.alpha0_range[1] - box.alpha0_range[0]);
    mach_bins.insert(std::min(n - 1, static_cast<std::size_t>(um * static_cast<double>(n))));
    alpha_bins.insert(std::min(n - 1, static_cast<std::size_t>(ua * static_cast<double>(n))));
  }
  EXPECT_EQ(mach_bins.size(), n);
  EXPECT_EQ(alpha_bins.size(), n);
}

}  // namespace

TEST(Lhs, SinglePointInsideBox) {
  const ParameterBox box;
  const auto pts = lhs(box, 1, 3);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_TRUE(box.contains(pts[0].mach, pts[0].alpha0));
  EXPECT_THROW(lhs(box, 0, 3), Error);
}

TEST(Lhs, StratifiedForSeveralSizes) {
  const ParameterBox box;
  for (std::size_t n : {4u, 10u, 70u, 200u})
    for (std::uint64_t seed = 0; seed < 5; ++seed) expect_one_per_bin(lhs(box, n, seed), box);
  ParameterBox other{{0.70, 0.84}, {0.0, 5.0}};
  expect_one_per_bin(lhs(other, 70, 1), other);
}

TEST(Lhs, DeterministicPerSeed) {
  const ParameterBox box;
  const auto a = lhs(box, 20, 9), b = lhs(box, 20, 9), c = lhs(box, 20, 10);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(a[i].mach, b[i].mach);
    EXPECT_EQ(a[i].alpha0, b[i].alpha0);
  }
  EXPECT_NE(a[0].mach, c[0].mach);
}

TEST(Split, CountsForStandardConfigurations) {
  EXPECT_EQ(split_counts(70, {45.0 / 70, 15.0 / 70, 10.0 / 70}), (std::array<std::size_t, 3>{45, 15, 10}));
  EXPECT_EQ(split_counts(70, {0.6, 0.2, 0.2}), (std::array<std::size_t, 3>{42, 14, 14}));
  EXPECT_EQ(split_counts(70, {1.0, 0.0, 0.0}), (std::array<std::size_t, 3>{70, 0, 0}));
  EXPECT_EQ(split_counts(10, {0.6, 0.2, 0.2}), (std::array<std::size_t, 3>{6, 2, 2}));
}

TEST(Split, RejectsBadFractions) {
  EXPECT_THROW(split_counts(10, {0.5, 0.6, -0.1}), Error);
  EXPECT_THROW(split_counts(10, {0.5, 0.2, 0.2}), Error);
}

TEST(Split, PartitionIsDisjointAndDeterministic) {
  const auto pts = lhs(ParameterBox{}, 70, 1);
  const auto plan = split(pts, {45.0 / 70, 15.0 / 70, 10.0 / 70}, 5);
  EXPECT_EQ(plan.count(Role::train), 45u);
  EXPECT_EQ(plan.count(Role::test), 15u);
  EXPECT_EQ(plan.count(Role::validation), 10u);
  std::set<std::size_t> all;
  for (auto r : {Role::train, Role::test, Role::validation})
    for (auto i : plan.indices(r)) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 70u);
  const auto again = split(pts, {45.0 / 70, 15.0 / 70, 10.0 / 70}, 5);
  EXPECT_EQ(plan.roles, again.roles);
  for (std::size_t i = 0; i < 70; ++i) EXPECT_EQ(plan.points[i].mach, pts[i].mach);
}

TEST(SamplePlanCsv, RoundTrip) {
  const auto plan = split(lhs(ParameterBox{}, 12, 2), {0.5, 0.25, 0.25}, 8);
  const auto text = to_csv(plan);
  EXPECT_EQ(text.substr(0, 23), "index,mach,alpha0,role\n");
  const auto back = plan_from_csv(text);
  EXPECT_EQ(back.roles, plan.roles);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(back.points[i].mach, plan.points[i].mach);
    EXPECT_EQ(back.points[i].alpha0, plan.points[i].alpha0);
  }
  EXPECT_EQ(to_csv(back), text);
  EXPECT_THROW(plan_from_csv("idx,m\n"), Error);
}
