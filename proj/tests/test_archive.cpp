#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dpt/archive.hpp"

using namespace dpt;

namespace {
Tuple tup(TupleId id, double x, double a) { return Tuple{id, {x}, a}; }
}  // namespace

TEST(Archive, InsertAndDeleteTrackSize) {
  Archive a;
  a.insert(tup(1, 0.5, 1.0));
  EXPECT_EQ(a.size(), 1u);
  Tuple removed;
  a.erase(1, &removed);
  EXPECT_EQ(a.size(), 0u);
  EXPECT_EQ(removed, tup(1, 0.5, 1.0));
  EXPECT_THROW(a.erase(42), std::invalid_argument);
}

TEST(Archive, RejectsDuplicateLiveIdAndDimensionChange) {
  Archive a;
  a.insert(tup(1, 0.5, 1.0));
  EXPECT_THROW(a.insert(tup(1, 0.6, 1.0)), std::invalid_argument);
  EXPECT_THROW(a.insert(Tuple{2, {0.1, 0.2}, 1.0}), DimensionMismatch);
}

TEST(Archive, VersionsCountEveryUpdate) {
  Archive a;
  EXPECT_EQ(a.version(), 0u);
  a.insert(tup(1, 0.1, 1.0));
  a.insert(tup(2, 0.2, 1.0));
  a.erase(1);
  EXPECT_EQ(a.version(), 3u);
  EXPECT_EQ(a.size_at(2), 2u);
  EXPECT_EQ(a.size_at(3), 1u);
}

TEST(Archive, SampleWholePopulationAndEmptySample) {
  Archive a;
  for (TupleId i = 1; i <= 5; ++i) a.insert(tup(i, 0.1 * static_cast<double>(i), 1.0));
  std::mt19937_64 rng(1);
  for (auto mode : {SampleMode::Sequential, SampleMode::Singleton}) {
    auto s = a.sample_uniform(5, mode, rng);
    std::sort(s.begin(), s.end(), [](const Tuple& x, const Tuple& y) { return x.id < y.id; });
    ASSERT_EQ(s.size(), 5u);
    for (TupleId i = 1; i <= 5; ++i) EXPECT_EQ(s[i - 1].id, i);
    EXPECT_TRUE(a.sample_uniform(0, mode, rng).empty());
  }
  EXPECT_THROW(a.sample_uniform(6, SampleMode::Sequential, rng), std::invalid_argument);
}

// Each tuple is included with probability n/N; binomial 3-sigma band.
TEST(Archive, SampleInclusionFrequenciesAreUniform) {
  Archive a;
  for (TupleId i = 0; i < 1000; ++i) a.insert(tup(i, 0.0, 1.0));
  for (auto mode : {SampleMode::Sequential, SampleMode::Singleton}) {
    std::mt19937_64 rng(mode == SampleMode::Sequential ? 11 : 12);
    std::vector<int> hits(1000, 0);
    const int reps = 2000;
    for (int r = 0; r < reps; ++r)
      for (const auto& t : a.sample_uniform(100, mode, rng)) ++hits[t.id];
    const double p = 0.1, sigma = std::sqrt(reps * p * (1 - p));
    int outside = 0;
    for (int h : hits)
      if (std::abs(h - reps * p) > 3.0 * sigma) ++outside;
    // 3 sigma leaves ~0.27% of 1000 tuples outside by chance
    EXPECT_LE(outside, 10);
  }
}

TEST(Archive, SampleAtPastVersionUsesThatLiveSet) {
  Archive a;
  for (TupleId i = 1; i <= 10; ++i) a.insert(tup(i, 0.0, 1.0));
  const Version v = a.version();
  for (TupleId i = 1; i <= 5; ++i) a.erase(i);
  for (TupleId i = 11; i <= 20; ++i) a.insert(tup(i, 0.0, 1.0));
  std::mt19937_64 rng(3);
  auto s = a.sample_uniform(10, SampleMode::Sequential, rng, v);
  std::sort(s.begin(), s.end(), [](const Tuple& x, const Tuple& y) { return x.id < y.id; });
  for (TupleId i = 1; i <= 10; ++i) EXPECT_EQ(s[i - 1].id, i);
}

TEST(Archive, GroundTruthAggregates) {
  Archive a;
  a.insert(tup(1, 0.1, 1.0));
  a.insert(tup(2, 0.2, 2.0));
  a.insert(tup(3, 0.3, 3.0));
  const Rectangle all({0.0}, {1.0});
  EXPECT_DOUBLE_EQ(a.ground_truth({AggregateKind::Sum, all}), 6.0);
  EXPECT_DOUBLE_EQ(a.ground_truth({AggregateKind::Avg, all}), 2.0);
  EXPECT_DOUBLE_EQ(a.ground_truth({AggregateKind::Min, all}), 1.0);
  EXPECT_DOUBLE_EQ(a.ground_truth({AggregateKind::Max, all}), 3.0);
  const Rectangle none({5.0}, {6.0});
  EXPECT_DOUBLE_EQ(a.ground_truth({AggregateKind::Count, none}), 0.0);
  EXPECT_THROW((void)a.ground_truth({AggregateKind::Avg, none}), std::domain_error);
}

TEST(Archive, EventLogReplaysToTheSameState) {
  Archive a;
  for (TupleId i = 1; i <= 6; ++i) a.insert(tup(i, 0.1 * static_cast<double>(i), 1.0));
  a.erase(2);
  a.erase(5);
  Archive b;
  for (const auto& e : a.events()) b.apply(e);
  EXPECT_EQ(b.size(), a.size());
  EXPECT_EQ(b.version(), a.version());
  EXPECT_FALSE(b.is_live(2));
  EXPECT_TRUE(b.is_live(6));
}

TEST(SnapshotSampler, DrawsEachSnapshotTupleOnce) {
  Archive a;
  for (TupleId i = 1; i <= 50; ++i) a.insert(tup(i, 0.0, 1.0));
  a.erase(7);
  const Version v = a.version();
  a.erase(8);  // deleted after the snapshot: still part of it
  a.insert(tup(100, 0.0, 1.0));  // inserted after: not part of it
  Archive::SnapshotSampler s(a, v, 9);
  std::vector<TupleId> got;
  while (auto t = s.next()) got.push_back(t->id);
  std::sort(got.begin(), got.end());
  ASSERT_EQ(got.size(), 49u);
  EXPECT_TRUE(std::adjacent_find(got.begin(), got.end()) == got.end());
  EXPECT_FALSE(std::binary_search(got.begin(), got.end(), TupleId{7}));
  EXPECT_TRUE(std::binary_search(got.begin(), got.end(), TupleId{8}));
  EXPECT_FALSE(std::binary_search(got.begin(), got.end(), TupleId{100}));
  EXPECT_TRUE(s.exhausted());
}
