#pragma once

// Slow, obviously-correct reference computations for the tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "dpt/core.hpp"
#include "dpt/maxvar.hpp"

namespace dpt::testing {

struct BruteMax {
  double count = 0.0;
  double sum = 0.0;
  double avg = 0.0;
};

/// Max raw bracket per kind over every sub-rectangle of R with sample
/// boundaries. d is 1 or 2. AVG only considers selections of at least
/// min_avg samples.
inline BruteMax brute_max_variance(const std::vector<Tuple>& all, const Rectangle& r,
                                   std::size_t min_avg) {
  std::vector<Tuple> pts;
  for (const auto& t : all)
    if (r.contains(t.coords)) pts.push_back(t);
  const double n = static_cast<double>(pts.size());
  BruteMax out;
  auto consider = [&](const Moments& m) {
    out.count = std::max(out.count, count_bracket(n, m.count));
    out.sum = std::max(out.sum, sum_bracket(n, m));
    if (m.count >= static_cast<double>(min_avg)) out.avg = std::max(out.avg, avg_variance(n, m));
  };
  const std::size_t d = r.dims();
  if (pts.empty()) return out;
  auto by = [&](std::size_t j) {
    std::vector<Tuple> s = pts;
    std::sort(s.begin(), s.end(), [&](const Tuple& a, const Tuple& b) { return a.coords[j] < b.coords[j]; });
    return s;
  };
  if (d == 1) {
    const auto s = by(0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i > 0 && s[i].coords[0] == s[i - 1].coords[0]) continue;  // same lower boundary
      Moments m;
      for (std::size_t j = i; j < s.size(); ++j) {
        m.add(s[j].value);
        if (j + 1 < s.size() && s[j + 1].coords[0] == s[j].coords[0]) continue;
        consider(m);
      }
    }
    return out;
  }
  if (d != 2) throw std::invalid_argument("brute force supports d <= 2");
  std::vector<double> xs;
  for (const auto& t : pts) xs.push_back(t.coords[0]);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const auto sy = by(1);
  for (std::size_t a = 0; a < xs.size(); ++a) {
    for (std::size_t b = a; b < xs.size(); ++b) {
      // points with x in [xs[a], xs[b]], in y order
      std::vector<const Tuple*> col;
      for (const auto& t : sy)
        if (t.coords[0] >= xs[a] && t.coords[0] <= xs[b]) col.push_back(&t);
      for (std::size_t i = 0; i < col.size(); ++i) {
        if (i > 0 && col[i]->coords[1] == col[i - 1]->coords[1]) continue;
        Moments m;
        for (std::size_t j = i; j < col.size(); ++j) {
          m.add(col[j]->value);
          if (j + 1 < col.size() && col[j + 1]->coords[1] == col[j]->coords[1]) continue;
          consider(m);
        }
      }
    }
  }
  return out;
}

/// True in-bucket error (squared CI length up to a shared factor) of the
/// samples inside r, by brute force.
inline double brute_in_bucket_error(const std::vector<Tuple>& all, const Rectangle& r,
                                    AggregateKind kind, std::size_t min_avg) {
  std::size_t n = 0;
  for (const auto& t : all)
    if (r.contains(t.coords)) ++n;
  if (n == 0) return 0.0;
  const BruteMax b = brute_max_variance(all, r, min_avg);
  switch (kind) {
    case AggregateKind::Count: return in_bucket_error(kind, b.count, n);
    case AggregateKind::Avg: return in_bucket_error(kind, b.avg, n);
    default: return in_bucket_error(kind, b.sum, n);
  }
}

/// Optimal max in-bucket error of a 1D partition into at most k buckets of
/// at least `floor` samples, boundaries between distinct coordinates.
/// Samples must be sorted by coordinate.
inline double dp_optimal_1d(const std::vector<Tuple>& xs, std::size_t k, AggregateKind kind,
                            std::size_t min_avg, std::size_t floor) {
  const std::size_t n = xs.size();
  floor = std::max<std::size_t>(1, floor);
  // err[i][j]: bucket holding xs[i..j)
  std::vector<std::vector<double>> err(n + 1, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j <= n; ++j) {
      std::vector<Tuple> b(xs.begin() + static_cast<std::ptrdiff_t>(i),
                           xs.begin() + static_cast<std::ptrdiff_t>(j));
      err[i][j] = brute_in_bucket_error(b, Rectangle::universe(1), kind, min_avg);
    }
  }
  auto valid_cut = [&](std::size_t j) { return j == n || (j > 0 && xs[j - 1].coords[0] < xs[j].coords[0]); };
  const double inf = std::numeric_limits<double>::infinity();
  // best[b][j]: min over partitions of xs[0..j) into b buckets
  std::vector<std::vector<double>> best(k + 1, std::vector<double>(n + 1, inf));
  best[0][0] = 0.0;
  for (std::size_t b = 1; b <= k; ++b)
    for (std::size_t j = 1; j <= n; ++j) {
      if (!valid_cut(j)) continue;
      for (std::size_t i = 0; i + floor <= j; ++i) {
        if (best[b - 1][i] == inf) continue;
        if (i > 0 && !valid_cut(i)) continue;
        best[b][j] = std::min(best[b][j], std::max(best[b - 1][i], err[i][j]));
      }
    }
  double out = inf;
  for (std::size_t b = 1; b <= k; ++b) out = std::min(out, best[b][n]);
  return out;
}

/// Exact oracle with the partitioner's interface: brute force over a fixed
/// sample set.
class BruteOracle {
public:
  BruteOracle(std::vector<Tuple> samples, std::size_t min_avg)
    : s_(std::move(samples)), min_avg_(min_avg) {}

  [[nodiscard]] double error(AggregateKind kind, const Rectangle& r) const {
    return brute_in_bucket_error(s_, r, kind, min_avg_);
  }
  [[nodiscard]] std::size_t count(const Rectangle& r) const {
    std::size_t c = 0;
    for (const auto& t : s_)
      if (r.contains(t.coords)) ++c;
    return c;
  }
  [[nodiscard]] double select(const Rectangle& r, std::size_t dim, std::size_t rank) const {
    std::vector<double> v;
    for (const auto& t : s_)
      if (r.contains(t.coords)) v.push_back(t.coords[dim]);
    std::sort(v.begin(), v.end());
    return v.at(rank);
  }

private:
  std::vector<Tuple> s_;
  std::size_t min_avg_;
};

template <class Rng>
std::vector<Tuple> random_samples(Rng& rng, std::size_t n, std::size_t d, bool heavy = false) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::lognormal_distribution<double> ln(0.0, 1.0);
  std::vector<Tuple> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tuple t{i + 1, std::vector<double>(d), 0.0};
    for (auto& x : t.coords) x = u(rng);
    t.value = heavy ? ln(rng) : 1.0 + 9.0 * u(rng);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace dpt::testing
