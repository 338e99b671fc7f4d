#include <cmath>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "dpt/reservoir.hpp"

using namespace dpt;

namespace {

std::vector<Tuple> make(std::size_t n, TupleId first = 0) {
  std::vector<Tuple> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(Tuple{first + i, {static_cast<double>(i) / static_cast<double>(n)}, 1.0});
  return out;
}

Reservoir::RefillSource from(std::vector<Tuple> live) {
  return [live = std::move(live)](std::size_t n) {
    return std::vector<Tuple>(live.begin(), live.begin() + static_cast<std::ptrdiff_t>(n));
  };
}

}  // namespace

TEST(Reservoir, BelowCapAlwaysKeeps) {
  Reservoir r(5, 1);
  r.assign(make(5));
  const auto out = r.on_insert(Tuple{99, {0.5}, 1.0}, 6);
  EXPECT_EQ(out.kind, Reservoir::InsertKind::Kept);
  EXPECT_FALSE(out.replaced.has_value());
  EXPECT_EQ(r.size(), 6u);
}

// At capacity an arrival is accepted with probability |S|/N.
TEST(Reservoir, AcceptanceRateAtCapacity) {
  Reservoir r(50, 2);
  r.assign(make(100));
  const std::size_t n_live = 10000;
  const int trials = 100000;
  int kept = 0;
  for (int i = 0; i < trials; ++i) {
    const auto out = r.on_insert(Tuple{1000000u + static_cast<TupleId>(i), {0.5}, 1.0}, n_live);
    if (out.kind == Reservoir::InsertKind::Kept) ++kept;
    ASSERT_EQ(r.size(), 100u);
  }
  const double p = 0.01, sigma = std::sqrt(p * (1 - p) / trials);
  EXPECT_NEAR(static_cast<double>(kept) / trials, p, 3 * sigma);
}

TEST(Reservoir, ReplacementVictimsAreUniform) {
  const std::size_t pool = 40;
  const int trials = 40000;
  std::vector<double> hits(pool, 0.0);
  Reservoir r(pool / 2, 3);
  int replaced = 0;
  for (int i = 0; i < trials; ++i) {
    r.assign(make(pool));
    const auto out = r.on_insert(Tuple{999, {0.5}, 1.0}, pool + 1);
    if (out.replaced) {
      hits[out.replaced->id] += 1.0;
      ++replaced;
    }
  }
  const double expect = static_cast<double>(replaced) / pool;
  double chi2 = 0.0;
  for (double h : hits) chi2 += (h - expect) * (h - expect) / expect;
  const boost::math::chi_squared dist(static_cast<double>(pool - 1));
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.001);
}

TEST(Reservoir, DeleteOutcomes) {
  const auto live = make(100);
  Reservoir r(5, 4);
  r.assign(make(6));
  EXPECT_EQ(r.on_delete(12345, 99, from(live)), Reservoir::DeleteOutcome::Untouched);
  EXPECT_EQ(r.on_delete(0, 99, from(live)), Reservoir::DeleteOutcome::Removed);
  EXPECT_EQ(r.size(), 5u);
  EXPECT_EQ(r.on_delete(1, 98, from(live)), Reservoir::DeleteOutcome::RefillTriggered);
  EXPECT_EQ(r.size(), 10u);  // resampled to 2m
}

TEST(Reservoir, RefillIsBoundedByLiveSet) {
  Reservoir r(5, 4);
  r.refill(3, from(make(3)));
  EXPECT_EQ(r.size(), 3u);
}

TEST(Reservoir, StratumByRectangleMatchesLinearScan) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Tuple> pts;
  for (TupleId i = 0; i < 64; ++i) pts.push_back(Tuple{i, {u(rng), u(rng)}, u(rng)});
  Reservoir r(32, 6);
  r.assign(pts);
  // four quadrant leaves
  std::vector<Rectangle> leaves{Rectangle({-kInf, -kInf}, {0.5, 0.5}), Rectangle({-kInf, 0.5}, {0.5, kInf}),
                                Rectangle({0.5, -kInf}, {kInf, 0.5}), Rectangle({0.5, 0.5}, {kInf, kInf})};
  r.reindex(leaves, [](const double* x) -> std::size_t { return (x[0] >= 0.5 ? 2 : 0) + (x[1] >= 0.5 ? 1 : 0); });
  std::size_t total = 0;
  for (std::size_t l = 0; l < 4; ++l) total += r.stratum_size(l);
  EXPECT_EQ(total, 64u);
  EXPECT_EQ(r.stratum(Rectangle::universe(2)).size(), 64u);
  EXPECT_TRUE(r.stratum(Rectangle({2.0, 2.0}, {3.0, 3.0})).empty());
  for (int it = 0; it < 200; ++it) {
    double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    const Rectangle q({std::min(a, b), std::min(c, d)}, {std::max(a, b), std::max(c, d)});
    std::vector<TupleId> want, got;
    for (const auto& t : pts)
      if (q.contains(t.coords)) want.push_back(t.id);
    for (const auto& t : r.stratum(q)) got.push_back(t.id);
    std::sort(want.begin(), want.end());
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, want);
  }
}

TEST(Reservoir, StrataFollowInsertsAndDeletes) {
  Reservoir r(4, 7);
  r.assign(make(4));
  r.reindex({Rectangle({-kInf}, {0.5}), Rectangle({0.5}, {kInf})},
            [](const double* x) -> std::size_t { return x[0] < 0.5 ? 0 : 1; });
  EXPECT_EQ(r.stratum_size(0), 2u);
  r.on_insert(Tuple{50, {0.9}, 1.0}, 5);
  EXPECT_EQ(r.stratum_size(1), 3u);
  r.on_delete(0, 4, from(make(8)));
  EXPECT_EQ(r.stratum_size(0), 1u);
}
