#pragma once

// Partition construction over a sample.
//
// The oracle is any type with
//   double      error(AggregateKind, const Rectangle&)   squared CI length
//   std::size_t count(const Rectangle&)
//   double      select(const Rectangle&, std::size_t dim, std::size_t rank)
// MaxVarIndex is the production oracle; tests plug in exhaustive ones.

#include <algorithm>
#include <cmath>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include "dpt/core.hpp"
#include "dpt/plan.hpp"

namespace dpt {

template <class O>
concept MaxVarOracle = requires(const O& o, const Rectangle& r) {
  { o.error(AggregateKind::Sum, r) } -> std::convertible_to<double>;
  { o.count(r) } -> std::convertible_to<std::size_t>;
  { o.select(r, std::size_t{0}, std::size_t{0}) } -> std::convertible_to<double>;
};

/// Candidate CI lengths: 0 and the powers of rho covering [lo, hi].
class ErrorGrid {
public:
  ErrorGrid(double lo, double hi, double rho) {
    if (!(rho > 1.0)) throw std::invalid_argument("grid ratio must be > 1");
    values_.push_back(0.0);
    if (!(lo > 0.0) || !(hi >= lo) || !std::isfinite(hi)) return;
    double t = std::floor(std::log(lo) / std::log(rho));
    const double top = std::ceil(std::log(hi) / std::log(rho));
    for (; t <= top; t += 1.0) values_.push_back(std::pow(rho, t));
  }

  /// Grid for n samples with nonzero |values| in [value_lo, value_hi].
  static ErrorGrid for_kind(AggregateKind kind, std::size_t n, double value_lo, double value_hi,
                            double rho) {
    const double nn = std::max<double>(1.0, static_cast<double>(n));
    if (kind == AggregateKind::Avg)
      return {value_lo / (std::sqrt(2.0) * nn), std::sqrt(nn) * value_hi, rho};
    return {value_lo / std::sqrt(2.0), nn * value_hi, rho};
  }

  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }

private:
  std::vector<double> values_;
};

struct PartitionOptions {
  AggregateKind kind = AggregateKind::Sum;
  std::size_t k = 1;
  std::size_t floor = 1;  // minimum samples per leaf
  double rho = 2.0;
  std::optional<double> value_lo;
  std::optional<double> value_hi;
  DimensionOrder order = DimensionOrder::RoundRobin;
};

namespace detail {

inline std::vector<Tuple> sorted_by_x(std::span<const Tuple> samples) {
  std::vector<Tuple> s(samples.begin(), samples.end());
  std::stable_sort(s.begin(), s.end(),
                   [](const Tuple& a, const Tuple& b) { return a.coords[0] < b.coords[0]; });
  return s;
}

inline std::pair<double, double> value_bounds(std::span<const Tuple> samples,
                                              const PartitionOptions& opt) {
  double lo = kInf, hi = 0.0;
  for (const auto& t : samples) {
    const double v = std::abs(t.value);
    if (v > 0.0) lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {opt.value_lo.value_or(lo), opt.value_hi.value_or(hi)};
}

// Balanced binary tree over buckets [ends[i-1], ends[i]) of the sorted
// samples; split planes sit on the first coordinate of the right bucket.
inline void build_1d(PartitionPlan& plan, std::size_t node, const std::vector<Tuple>& xs,
                     const std::vector<std::size_t>& ends, std::size_t b0, std::size_t b1) {
  if (b1 - b0 <= 1) return;
  const std::size_t mid = b0 + (b1 - b0) / 2;
  const double cut = xs[ends[mid - 1]].coords[0];
  auto [l, r] = plan.split(node, 0, cut);
  build_1d(plan, l, xs, ends, b0, mid);
  build_1d(plan, r, xs, ends, mid, b1);
}

}  // namespace detail

/// Greedy maximal buckets left to right with sqrt(error) <= e. `xs` is
/// sorted by coordinate; returns bucket end positions, or nullopt when more
/// than k buckets would be needed.
template <MaxVarOracle O>
std::optional<std::vector<std::size_t>> feasible_1d(double e, std::size_t k,
                                                    const std::vector<Tuple>& xs, const O& oracle,
                                                    AggregateKind kind, std::size_t floor,
                                                    const Rectangle& root) {
  const std::size_t n = xs.size();
  // Bucket boundaries may only fall between distinct coordinates.
  std::vector<std::size_t> cand;
  for (std::size_t j = 1; j < n; ++j)
    if (xs[j - 1].coords[0] < xs[j].coords[0]) cand.push_back(j);
  cand.push_back(n);

  auto bucket = [&](std::size_t i, std::size_t j) {
    Rectangle r = root;
    if (i > 0) r.lo[0] = xs[i].coords[0];
    if (j < n) r.hi[0] = xs[j].coords[0];
    return r;
  };
  const double limit = e * e;
  std::vector<std::size_t> ends;
  std::size_t start = 0;
  while (start < n) {
    if (ends.size() == k) return std::nullopt;
    // usable ends: bucket keeps the floor and so does the remainder
    auto first = std::lower_bound(cand.begin(), cand.end(), start + floor);
    std::vector<std::size_t> ok;
    for (auto it = first; it != cand.end(); ++it)
      if (*it == n || n - *it >= floor) ok.push_back(*it);
    if (ok.empty()) return std::nullopt;
    if (oracle.error(kind, bucket(start, ok[0])) > limit) return std::nullopt;
    std::size_t lo = 0, hi = ok.size() - 1;
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo + 1) / 2;
      if (oracle.error(kind, bucket(start, ok[mid])) <= limit) lo = mid;
      else hi = mid - 1;
    }
    ends.push_back(ok[lo]);
    start = ok[lo];
  }
  return ends;
}

namespace detail {

// k buckets of (nearly) equal sample counts, boundaries snapped to distinct
// coordinates.
inline std::vector<std::size_t> equal_mass_ends(const std::vector<Tuple>& xs, std::size_t k) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> ends;
  std::size_t prev = 0;
  for (std::size_t b = 1; b < k; ++b) {
    std::size_t j = (n * b + k / 2) / k;
    while (j < n && j > prev && xs[j - 1].coords[0] == xs[j].coords[0]) ++j;
    if (j <= prev || j >= n) continue;
    ends.push_back(j);
    prev = j;
  }
  ends.push_back(n);
  return ends;
}

template <MaxVarOracle O>
PartitionPlan plan_from_ends(const std::vector<Tuple>& xs, const std::vector<std::size_t>& ends,
                             const O& oracle, const PartitionOptions& opt, const Rectangle& root) {
  PartitionPlan plan = PartitionPlan::single(root, opt.kind);
  build_1d(plan, 0, xs, ends, 0, ends.size());
  plan.collect_leaves();
  for (std::size_t i = 0; i < plan.leaves.size(); ++i)
    plan.leaf_error[i] = oracle.error(opt.kind, plan.nodes[plan.leaves[i]].rect);
  plan.max_error = 0.0;
  for (double v : plan.leaf_error) plan.max_error = std::max(plan.max_error, v);
  return plan;
}

// Splits buckets until there are k (or none can split while keeping the
// floor), worst error first. Extra buckets never raise the max error.
template <MaxVarOracle O>
std::vector<std::size_t> refine_ends(const std::vector<Tuple>& xs, std::vector<std::size_t> ends,
                                     std::size_t k, std::size_t floor, const O& oracle,
                                     AggregateKind kind, const Rectangle& root) {
  const std::size_t n = xs.size();
  floor = std::max<std::size_t>(1, floor);
  auto bucket = [&](std::size_t i, std::size_t j) {
    Rectangle r = root;
    if (i > 0) r.lo[0] = xs[i].coords[0];
    if (j < n) r.hi[0] = xs[j].coords[0];
    return r;
  };
  // A split point near the middle of [i, j) on a distinct coordinate.
  auto split_point = [&](std::size_t i, std::size_t j) -> std::optional<std::size_t> {
    if (j - i < 2 * floor) return std::nullopt;
    const std::size_t mid = i + (j - i) / 2;
    for (std::size_t off = 0; off <= (j - i) / 2; ++off) {
      for (std::size_t c : {mid + off, mid - off}) {
        if (c < i + floor || c + floor > j) continue;
        if (xs[c - 1].coords[0] < xs[c].coords[0]) return c;
      }
    }
    return std::nullopt;
  };
  while (ends.size() < k) {
    double worst = -1.0;
    std::size_t at = 0, cut = 0;
    for (std::size_t b = 0; b < ends.size(); ++b) {
      const std::size_t i = b == 0 ? 0 : ends[b - 1];
      const auto c = split_point(i, ends[b]);
      if (!c) continue;
      const double e = oracle.error(kind, bucket(i, ends[b]));
      if (e > worst) {
        worst = e;
        at = b;
        cut = *c;
      }
    }
    if (worst < 0.0) break;
    ends.insert(ends.begin() + static_cast<std::ptrdiff_t>(at), cut);
  }
  return ends;
}

}  // namespace detail

/// One-dimensional partition: binary search over the error grid for the
/// smallest CI length the greedy can meet with k buckets. COUNT uses equal
/// mass buckets, which are optimal for it.
template <MaxVarOracle O>
PartitionPlan partition_1d(std::span<const Tuple> samples, const O& oracle,
                           const PartitionOptions& opt,
                           const Rectangle& root = Rectangle::universe(1)) {
  if (root.dims() != 1) throw DimensionMismatch(1, root.dims());
  if (samples.size() < opt.k)
    throw std::invalid_argument("partition needs at least k samples");
  const auto xs = detail::sorted_by_x(samples);
  if (opt.kind == AggregateKind::Count || opt.k == 1)
    return detail::plan_from_ends(xs, detail::equal_mass_ends(xs, opt.k), oracle, opt, root);

  const auto [vlo, vhi] = detail::value_bounds(samples, opt);
  const ErrorGrid grid = ErrorGrid::for_kind(opt.kind, xs.size(), vlo, vhi, opt.rho);
  const auto& E = grid.values();
  std::optional<std::vector<std::size_t>> best;
  std::size_t lo = 0, hi = E.size() - 1;
  best = feasible_1d(E[hi], opt.k, xs, oracle, opt.kind, opt.floor, root);
  if (!best) {
    auto plan = detail::plan_from_ends(xs, detail::equal_mass_ends(xs, opt.k), oracle, opt, root);
    plan.warnings.push_back("no grid value was feasible; fell back to equal-mass buckets");
    return plan;
  }
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (auto f = feasible_1d(E[mid], opt.k, xs, oracle, opt.kind, opt.floor, root)) {
      best = std::move(f);
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return detail::plan_from_ends(
      xs, detail::refine_ends(xs, *best, opt.k, opt.floor, oracle, opt.kind, root), oracle, opt, root);
}

/// Greedy k-d construction: repeatedly split the leaf with the largest
/// error at the sample median of its next dimension.
template <MaxVarOracle O>
PartitionPlan partition_kd(std::size_t d, const O& oracle, const PartitionOptions& opt,
                           std::optional<Rectangle> root_rect = std::nullopt,
                           std::size_t first_dim = 0) {
  const Rectangle root = root_rect.value_or(Rectangle::universe(d));
  if (root.dims() != d) throw DimensionMismatch(d, root.dims());
  const std::size_t m = oracle.count(root);
  if (m < opt.k) throw std::invalid_argument("partition needs at least k samples");
  PartitionPlan plan = PartitionPlan::single(root, opt.kind);
  std::vector<double> err{oracle.error(opt.kind, root)};
  std::vector<std::size_t> next_dim{first_dim % d};

  using Item = std::pair<double, std::size_t>;  // (error, node); ties pop the lower id
  auto cmp = [](const Item& a, const Item& b) {
    return a.first < b.first || (a.first == b.first && a.second > b.second);
  };
  std::priority_queue<Item, std::vector<Item>, decltype(cmp)> heap(cmp);
  heap.push({err[0], 0});
  std::size_t leaves = 1;

  auto spread = [&](const Rectangle& r, std::size_t n, std::size_t j) {
    return oracle.select(r, j, n - 1) - oracle.select(r, j, 0);
  };

  while (leaves < opt.k && !heap.empty()) {
    const auto [e, node] = heap.top();
    heap.pop();
    const Rectangle rect = plan.nodes[node].rect;
    const std::size_t n = oracle.count(rect);
    if (n < 2 * std::max<std::size_t>(1, opt.floor)) continue;

    std::vector<std::size_t> dims;
    if (opt.order == DimensionOrder::LongestSide) {
      for (std::size_t j = 0; j < d; ++j) dims.push_back(j);
      std::stable_sort(dims.begin(), dims.end(), [&](std::size_t a, std::size_t b) {
        return spread(rect, n, a) > spread(rect, n, b);
      });
    } else {
      for (std::size_t t = 0; t < d; ++t) dims.push_back((next_dim[node] + t) % d);
    }

    for (std::size_t j : dims) {
      const double cut = oracle.select(rect, j, n / 2);
      Rectangle left = rect;
      left.hi[j] = cut;
      const std::size_t nl = oracle.count(left);
      if (nl < std::max<std::size_t>(1, opt.floor) || n - nl < std::max<std::size_t>(1, opt.floor))
        continue;  // ties or the floor block this dimension
      auto [l, r] = plan.split(node, j, cut);
      err.resize(plan.nodes.size(), 0.0);
      next_dim.resize(plan.nodes.size(), 0);
      err[l] = oracle.error(opt.kind, plan.nodes[l].rect);
      err[r] = oracle.error(opt.kind, plan.nodes[r].rect);
      next_dim[l] = next_dim[r] = (j + 1) % d;
      heap.push({err[l], l});
      heap.push({err[r], r});
      ++leaves;
      break;
    }
  }
  if (leaves < opt.k)
    plan.warnings.push_back("stopped at " + std::to_string(leaves) + " of " +
                            std::to_string(opt.k) + " leaves: no leaf could be split");
  std::vector<double> by_node = err;
  by_node.resize(plan.nodes.size(), 0.0);
  plan.collect_leaves();
  for (std::size_t i = 0; i < plan.leaves.size(); ++i) plan.leaf_error[i] = by_node[plan.leaves[i]];
  plan.max_error = 0.0;
  for (double v : plan.leaf_error) plan.max_error = std::max(plan.max_error, v);
  return plan;
}

}  // namespace dpt
