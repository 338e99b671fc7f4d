#pragma once

// Orthogonal range aggregates (count, sum, sum of squares) over weighted
// d-dimensional points.
//
// StaticRangeTree is a classic multi-level range tree: a segment tree over
// dimension 0 whose nodes carry a tree over dimension 1, and so on, with
// prefix moments at the last dimension. DynamicRangeTree layers the
// logarithmic method on top: blocks of size 2^i are merged on insert, and a
// delete inserts a negatively signed copy of the point. A global rebuild
// drops cancelled pairs once they outnumber live points.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "dpt/core.hpp"

namespace dpt {

struct WeightedPoint {
  std::vector<double> x;
  double a = 0.0;
  double sign = 1.0;
};

class StaticRangeTree {
public:
  StaticRangeTree() = default;

  StaticRangeTree(std::size_t dims, std::vector<WeightedPoint> pts) : d_(dims) {
    n_ = pts.size();
    x_.resize(n_ * d_);
    a_.resize(n_);
    s_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      if (pts[i].x.size() != d_) throw DimensionMismatch(d_, pts[i].x.size());
      std::copy(pts[i].x.begin(), pts[i].x.end(), x_.begin() + static_cast<std::ptrdiff_t>(i * d_));
      a_[i] = pts[i].a;
      s_[i] = pts[i].sign;
    }
    std::vector<std::uint32_t> all(n_);
    std::iota(all.begin(), all.end(), 0u);
    if (n_ > 0) root_ = build(0, std::move(all));
  }

  [[nodiscard]] std::size_t size() const { return n_; }
  [[nodiscard]] std::size_t dims() const { return d_; }

  [[nodiscard]] Moments query(const Rectangle& r) const {
    Moments out;
    if (n_ == 0) return out;
    query(0, root_, r, out);
    return out;
  }

  [[nodiscard]] WeightedPoint point(std::size_t i) const {
    WeightedPoint p;
    p.x.assign(x_.begin() + static_cast<std::ptrdiff_t>(i * d_),
               x_.begin() + static_cast<std::ptrdiff_t>((i + 1) * d_));
    p.a = a_[i];
    p.sign = s_[i];
    return p;
  }

  /// A last-level canonical node: the points it holds and their moments.
  struct NodeView {
    std::span<const std::uint32_t> items;
    Moments moments;
  };

  /// Visits every node of every last-level structure, top-down, as dyadic
  /// ranges of that structure's sorted order. Returning false from fn skips
  /// the node's children.
  void for_each_last_level_node(const std::function<bool(const NodeView&)>& fn) const {
    if (n_ == 0) return;
    for (std::uint32_t id = 0; id < assoc_.size(); ++id) {
      if (assoc_[id].dim + 1 == d_) dyadic(assoc_[id], 0, assoc_[id].order.size(), fn);
    }
  }

  /// Canonical last-level pieces covering r's points.
  void for_each_canonical(const Rectangle& r, const std::function<void(const NodeView&)>& fn) const {
    if (n_ == 0) return;
    canonical(0, root_, r, fn);
  }

  [[nodiscard]] const double* coords(std::size_t i) const { return &x_[i * d_]; }

private:
  struct SegNode {
    std::uint32_t lo, hi;      // range within the parent structure's order
    std::int32_t left = -1, right = -1;
    std::uint32_t child = 0;   // structure over the next dimension
  };
  struct Assoc {
    std::size_t dim = 0;
    std::vector<std::uint32_t> order;  // item ids sorted by coordinate dim
    std::vector<double> keys;
    std::vector<Moments> prefix;       // last dimension only
    std::vector<SegNode> nodes;        // other dimensions; node 0 is the root
  };

  std::uint32_t build(std::size_t dim, std::vector<std::uint32_t> ids) {
    std::sort(ids.begin(), ids.end(), [&](std::uint32_t p, std::uint32_t q) {
      const double xp = x_[p * d_ + dim], xq = x_[q * d_ + dim];
      return xp < xq || (xp == xq && p < q);
    });
    const auto id = static_cast<std::uint32_t>(assoc_.size());
    assoc_.emplace_back();
    Assoc a;
    a.dim = dim;
    a.keys.reserve(ids.size());
    for (auto i : ids) a.keys.push_back(x_[i * d_ + dim]);
    if (dim + 1 == d_) {
      a.prefix.resize(ids.size() + 1);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        a.prefix[i + 1] = a.prefix[i];
        a.prefix[i + 1].add(a_[ids[i]], s_[ids[i]]);
      }
    } else {
      a.nodes.reserve(2 * ids.size());
      build_seg(a, dim, ids, 0, static_cast<std::uint32_t>(ids.size()));
    }
    a.order = std::move(ids);
    assoc_[id] = std::move(a);
    return id;
  }

  std::int32_t build_seg(Assoc& a, std::size_t dim, const std::vector<std::uint32_t>& ids,
                         std::uint32_t lo, std::uint32_t hi) {
    const auto me = static_cast<std::int32_t>(a.nodes.size());
    a.nodes.push_back(SegNode{lo, hi});
    std::vector<std::uint32_t> sub(ids.begin() + lo, ids.begin() + hi);
    const std::uint32_t child = build(dim + 1, std::move(sub));
    a.nodes[me].child = child;
    if (hi - lo > 1) {
      const std::uint32_t mid = lo + (hi - lo) / 2;
      const auto l = build_seg(a, dim, ids, lo, mid);
      const auto r = build_seg(a, dim, ids, mid, hi);
      a.nodes[me].left = l;
      a.nodes[me].right = r;
    }
    return me;
  }

  static std::pair<std::uint32_t, std::uint32_t> span_of(const Assoc& a, const Rectangle& r) {
    const auto lo = std::lower_bound(a.keys.begin(), a.keys.end(), r.lo[a.dim]) - a.keys.begin();
    const auto hi = std::lower_bound(a.keys.begin(), a.keys.end(), r.hi[a.dim]) - a.keys.begin();
    return {static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(std::max(lo, hi))};
  }

  void query(std::size_t dim, std::uint32_t id, const Rectangle& r, Moments& out) const {
    const Assoc& a = assoc_[id];
    const auto [lo, hi] = span_of(a, r);
    if (lo >= hi) return;
    if (dim + 1 == d_) {
      out += a.prefix[hi] - a.prefix[lo];
      return;
    }
    seg_query(a, 0, lo, hi, r, out);
  }

  void seg_query(const Assoc& a, std::int32_t node, std::uint32_t lo, std::uint32_t hi,
                 const Rectangle& r, Moments& out) const {
    const SegNode& s = a.nodes[static_cast<std::size_t>(node)];
    if (hi <= s.lo || s.hi <= lo) return;
    if (lo <= s.lo && s.hi <= hi) {
      query(a.dim + 1, s.child, r, out);
      return;
    }
    seg_query(a, s.left, lo, hi, r, out);
    seg_query(a, s.right, lo, hi, r, out);
  }

  void canonical(std::size_t dim, std::uint32_t id, const Rectangle& r,
                 const std::function<void(const NodeView&)>& fn) const {
    const Assoc& a = assoc_[id];
    const auto [lo, hi] = span_of(a, r);
    if (lo >= hi) return;
    if (dim + 1 == d_) {
      last_canonical(a, 0, a.order.size(), lo, hi, fn);
      return;
    }
    seg_canonical(a, 0, lo, hi, r, fn);
  }

  void seg_canonical(const Assoc& a, std::int32_t node, std::uint32_t lo, std::uint32_t hi,
                     const Rectangle& r, const std::function<void(const NodeView&)>& fn) const {
    const SegNode& s = a.nodes[static_cast<std::size_t>(node)];
    if (hi <= s.lo || s.hi <= lo) return;
    if (lo <= s.lo && s.hi <= hi) {
      canonical(a.dim + 1, s.child, r, fn);
      return;
    }
    seg_canonical(a, s.left, lo, hi, r, fn);
    seg_canonical(a, s.right, lo, hi, r, fn);
  }

  // Dyadic decomposition of [lo,hi) within the last-level range [nlo,nhi),
  // split at the same midpoints the segment trees use.
  void last_canonical(const Assoc& a, std::size_t nlo, std::size_t nhi, std::size_t lo,
                      std::size_t hi, const std::function<void(const NodeView&)>& fn) const {
    if (hi <= nlo || nhi <= lo) return;
    if (lo <= nlo && nhi <= hi) {
      fn(NodeView{std::span<const std::uint32_t>(a.order).subspan(nlo, nhi - nlo),
                  a.prefix[nhi] - a.prefix[nlo]});
      return;
    }
    const std::size_t mid = nlo + (nhi - nlo) / 2;
    last_canonical(a, nlo, mid, lo, hi, fn);
    last_canonical(a, mid, nhi, lo, hi, fn);
  }

  void dyadic(const Assoc& a, std::size_t lo, std::size_t hi,
              const std::function<bool(const NodeView&)>& fn) const {
    if (lo >= hi) return;
    const bool descend = fn(NodeView{std::span<const std::uint32_t>(a.order).subspan(lo, hi - lo),
                                     a.prefix[hi] - a.prefix[lo]});
    if (!descend || hi - lo == 1) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    dyadic(a, lo, mid, fn);
    dyadic(a, mid, hi, fn);
  }

  std::size_t d_ = 1;
  std::size_t n_ = 0;
  std::vector<double> x_;
  std::vector<double> a_;
  std::vector<double> s_;
  std::vector<Assoc> assoc_;
  std::uint32_t root_ = 0;
};

class DynamicRangeTree {
public:
  explicit DynamicRangeTree(std::size_t dims) : d_(dims) {
    if (dims == 0) throw std::invalid_argument("range tree needs d >= 1");
  }

  [[nodiscard]] std::size_t dims() const { return d_; }
  [[nodiscard]] std::size_t live() const { return live_; }
  [[nodiscard]] std::size_t cancelled() const { return anti_; }
  [[nodiscard]] std::size_t block_count() const {
    return static_cast<std::size_t>(
        std::count_if(blocks_.begin(), blocks_.end(), [](const auto& b) { return b.has_value(); }));
  }

  void insert(std::vector<double> x, double a) {
    if (x.size() != d_) throw DimensionMismatch(d_, x.size());
    push(WeightedPoint{std::move(x), a, 1.0});
    ++live_;
  }

  /// Records a removal. The caller guarantees the point is present.
  void erase(std::vector<double> x, double a) {
    if (x.size() != d_) throw DimensionMismatch(d_, x.size());
    push(WeightedPoint{std::move(x), a, -1.0});
    --live_;
    ++anti_;
  }

  /// Replaces the whole content with the given live points.
  void rebuild(std::vector<WeightedPoint> pts) {
    blocks_.clear();
    live_ = pts.size();
    anti_ = 0;
    if (pts.empty()) return;
    std::size_t level = 0;
    while ((std::size_t{1} << level) < pts.size()) ++level;
    blocks_.resize(level + 1);
    blocks_[level].emplace(d_, std::move(pts));
  }

  [[nodiscard]] bool needs_compaction() const { return anti_ > live_; }

  [[nodiscard]] Moments query(const Rectangle& r) const {
    if (r.dims() != d_) throw DimensionMismatch(d_, r.dims());
    Moments out;
    for (const auto& b : blocks_)
      if (b) out += b->query(r);
    return out;
  }

  [[nodiscard]] std::size_t count(const Rectangle& r) const { return query(r).n(); }

private:
  void push(WeightedPoint p) {
    std::vector<WeightedPoint> carry{std::move(p)};
    std::size_t level = 0;
    while (level < blocks_.size() && blocks_[level]) {
      const auto& b = *blocks_[level];
      for (std::size_t i = 0; i < b.size(); ++i) carry.push_back(b.point(i));
      blocks_[level].reset();
      ++level;
    }
    if (level == blocks_.size()) blocks_.emplace_back();
    blocks_[level].emplace(d_, std::move(carry));
  }

  std::size_t d_;
  std::size_t live_ = 0;
  std::size_t anti_ = 0;
  std::vector<std::optional<StaticRangeTree>> blocks_;
};

}  // namespace dpt
