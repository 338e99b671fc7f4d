#pragma once

// Approximate "largest-variance sub-query inside R" over a dynamic sample set.
//
// Variances here are the raw in-bucket brackets with n = |R ∩ S|:
//   COUNT  n*c - c^2                        (c = |q ∩ S|)
//   SUM    n*Σ_q a^2 - (Σ_q a)^2
//   AVG    (n*Σ_q a^2 - (Σ_q a)^2) / (n*c^2), only for c >= min_query_samples
// in_bucket_error() turns them into comparable squared CI lengths.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "dpt/core.hpp"
#include "dpt/range_tree.hpp"

namespace dpt {

struct MaxVarResult {
  Rectangle witness;
  double variance = 0.0;
  double gamma = 1.0;
  std::size_t witness_count = 0;
  std::size_t population = 0;  // |R ∩ S|
};

inline double count_bracket(double n, double c) { return std::max(0.0, n * c - c * c); }

inline double sum_bracket(double n, const Moments& q) {
  return std::max(0.0, n * q.sumsq - q.sum * q.sum);
}

inline double avg_variance(double n, const Moments& q) {
  if (q.count <= 0.0) return 0.0;
  return sum_bracket(n, q) / (n * q.count * q.count);
}

/// Squared CI length of the worst query inside a bucket of n samples, up to
/// a factor shared by all buckets of one sample.
inline double in_bucket_error(AggregateKind kind, double variance, std::size_t n) {
  if (n == 0) return 0.0;
  if (kind == AggregateKind::Avg) return variance;
  return variance / static_cast<double>(n);
}

class MaxVarIndex {
public:
  MaxVarIndex(std::size_t dims, std::size_t min_query_samples)
    : d_(dims), dm_(std::max<std::size_t>(1, min_query_samples)), tree_(dims), sorted_(dims) {}

  [[nodiscard]] std::size_t dims() const { return d_; }
  [[nodiscard]] std::size_t size() const { return points_.size(); }
  [[nodiscard]] std::size_t min_query_samples() const { return dm_; }

  void insert_sample(const Tuple& t) {
    if (t.dims() != d_) throw DimensionMismatch(d_, t.dims());
    if (!points_.emplace(t.id, Pt{t.coords, t.value}).second)
      throw std::invalid_argument("sample " + std::to_string(t.id) + " already indexed");
    tree_.insert(t.coords, t.value);
    for (std::size_t j = 0; j < d_; ++j) {
      auto& v = sorted_[j];
      v.insert(std::upper_bound(v.begin(), v.end(), t.coords[j]), t.coords[j]);
    }
    dirty_ = true;
  }

  void delete_sample(TupleId id) {
    auto it = points_.find(id);
    if (it == points_.end())
      throw std::invalid_argument("sample " + std::to_string(id) + " not indexed");
    tree_.erase(it->second.x, it->second.a);
    for (std::size_t j = 0; j < d_; ++j) {
      auto& v = sorted_[j];
      v.erase(std::lower_bound(v.begin(), v.end(), it->second.x[j]));
    }
    points_.erase(it);
    if (tree_.needs_compaction()) compact();
    dirty_ = true;
  }

  void rebuild(std::span<const Tuple> samples) {
    points_.clear();
    for (auto& v : sorted_) v.clear();
    for (const auto& t : samples) {
      if (t.dims() != d_) throw DimensionMismatch(d_, t.dims());
      if (!points_.emplace(t.id, Pt{t.coords, t.value}).second)
        throw std::invalid_argument("duplicate sample " + std::to_string(t.id));
      for (std::size_t j = 0; j < d_; ++j) sorted_[j].push_back(t.coords[j]);
    }
    for (auto& v : sorted_) std::sort(v.begin(), v.end());
    compact();
    dirty_ = true;
  }

  [[nodiscard]] Moments moments(const Rectangle& r) const { return tree_.query(r); }
  [[nodiscard]] std::size_t count(const Rectangle& r) const { return tree_.count(r); }

  /// The coordinate on `dim` of the rank-th (0-based) sample of R in sorted
  /// order along that dimension.
  [[nodiscard]] double select(const Rectangle& r, std::size_t dim, std::size_t rank) const {
    const auto& v = sorted_[dim];
    auto lo = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), r.lo[dim]) - v.begin());
    auto hi = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), r.hi[dim]) - v.begin());
    if (lo >= hi) throw std::out_of_range("select on an empty rectangle");
    Rectangle probe = r;
    // smallest i with count(R ∩ {x_dim <= v[i]}) > rank
    std::size_t a = lo, b = hi - 1;
    probe.hi[dim] = r.hi[dim];
    if (count(probe) <= rank) throw std::out_of_range("select rank beyond population");
    while (a < b) {
      const std::size_t mid = a + (b - a) / 2;
      probe.hi[dim] = std::nextafter(v[mid], kInf);
      if (count(probe) > rank) b = mid;
      else a = mid + 1;
    }
    return v[a];
  }

  MaxVarResult maxvar_count(const Rectangle& r) const {
    const std::size_t n = count(r);
    if (n < 2) throw std::invalid_argument("max-variance COUNT needs at least 2 samples");
    const double nd = static_cast<double>(n);
    const std::size_t target = n / 2;
    MaxVarResult best{r, 0.0, 1.0, n, n};
    for (std::size_t j = 0; j < d_; ++j) {
      const double cuts[2] = {select(r, j, target), std::nextafter(select(r, j, target - 1), kInf)};
      for (double cut : cuts) {
        auto [left, right] = split(r, j, cut);
        const std::size_t cl = count(left);
        const std::size_t c = std::min(cl, n - cl);
        const double var = count_bracket(nd, static_cast<double>(c));
        if (var > best.variance) best = {cl <= n - cl ? left : right, var, 1.0, c, n};
      }
    }
    return best;
  }

  MaxVarResult maxvar_sum(const Rectangle& r) const {
    const std::size_t n = count(r);
    if (n < 2) throw std::invalid_argument("max-variance SUM needs at least 2 samples");
    const double nd = static_cast<double>(n);
    const Moments whole = moments(r);
    MaxVarResult best{r, sum_bracket(nd, whole), 4.0, n, n};
    bool improved = false;
    const auto j = widest_dim(r, n);
    if (j) {
      std::vector<double> cuts{select(r, *j, n / 2)};
      if (n % 2 == 1) cuts.push_back(select(r, *j, n / 2 + 1));
      for (double cut : cuts) {
        auto [left, right] = split(r, *j, cut);
        for (const Rectangle* half : {&left, &right}) {
          const Moments m = moments(*half);
          const double var = sum_bracket(nd, m);
          if (!improved || var > best.variance) {
            best = {*half, var, 4.0, m.n(), n};
            improved = true;
          }
        }
      }
    }
    return best;
  }

  MaxVarResult maxvar_avg(const Rectangle& r) const {
    const std::size_t n = count(r);
    if (n < dm_)
      throw std::invalid_argument("max-variance AVG needs at least min_query_samples samples");
    const double nd = static_cast<double>(n);
    const double g = avg_gamma();
    MaxVarResult best{r, avg_variance(nd, moments(r)), g, n, n};
    auto consider = [&](const Rectangle& q) {
      const Moments m = moments(q);
      if (m.n() < dm_) return;
      const double var = avg_variance(nd, m);
      if (var > best.variance) best = {q, var, g, m.n(), n};
    };
    refresh();
    if (d_ == 1) {
      if (n <= 2 * dm_) {
        // Too few samples for the window bound; enumerate every interval.
        if (auto q = best_small_interval(r, nd)) consider(*q);
      }
      if (auto w = best_window(r)) consider(*w);
    } else if (auto q = store_.best_inside(r)) {
      consider(expand(*q, r));
    }
    return best;
  }

  MaxVarResult maxvar(AggregateKind kind, const Rectangle& r) const {
    switch (kind) {
      case AggregateKind::Count: return maxvar_count(r);
      case AggregateKind::Avg: return maxvar_avg(r);
      default: return maxvar_sum(r);
    }
  }

  /// Like maxvar, but a rectangle too small for the oracle has error 0.
  [[nodiscard]] double error(AggregateKind kind, const Rectangle& r) const {
    const std::size_t n = count(r);
    if (n < 2 || (kind == AggregateKind::Avg && n < dm_)) return 0.0;
    return in_bucket_error(kind, maxvar(kind, r).variance, n);
  }

  [[nodiscard]] double avg_gamma() const {
    if (d_ == 1) return 4.0;
    const double l = std::log2(std::max<double>(2.0, static_cast<double>(points_.size())));
    return 4.0 * std::pow(l, static_cast<double>(d_ + 1));
  }

  struct StoredRect {
    Rectangle box;  // half-open bounding box of the node's samples
    double weight;  // Σ a^2 of the node's samples
    std::size_t count;
  };

  /// Contents of the weighted-rectangle store (d >= 2), rebuilt if stale.
  [[nodiscard]] const std::vector<StoredRect>& stored_rects() const {
    refresh();
    return store_.rects;
  }

  [[nodiscard]] std::vector<Tuple> samples() const {
    std::vector<Tuple> out;
    out.reserve(points_.size());
    for (const auto& [id, p] : points_) out.push_back(Tuple{id, p.x, p.a});
    std::sort(out.begin(), out.end(), [](const Tuple& a, const Tuple& b) { return a.id < b.id; });
    return out;
  }

private:
  struct Pt {
    std::vector<double> x;
    double a;
  };

  static std::pair<Rectangle, Rectangle> split(const Rectangle& r, std::size_t dim, double cut) {
    Rectangle left = r, right = r;
    left.hi[dim] = std::clamp(cut, r.lo[dim], r.hi[dim]);
    right.lo[dim] = left.hi[dim];
    return {left, right};
  }

  // Dimension with the largest sample spread inside R relative to the global
  // spread; nullopt when every dimension is degenerate.
  std::optional<std::size_t> widest_dim(const Rectangle& r, std::size_t n) const {
    std::optional<std::size_t> best;
    double best_spread = 0.0;
    for (std::size_t j = 0; j < d_; ++j) {
      const double global = sorted_[j].back() - sorted_[j].front();
      if (!(global > 0.0)) continue;
      const double spread = (select(r, j, n - 1) - select(r, j, 0)) / global;
      if (spread > best_spread) {
        best_spread = spread;
        best = j;
      }
    }
    return best;
  }

  // Samples in id order, so the derived structures depend only on the
  // sample set and not on the update history.
  std::vector<WeightedPoint> weighted_points() const {
    std::vector<std::pair<TupleId, const Pt*>> byid;
    byid.reserve(points_.size());
    for (const auto& [id, p] : points_) byid.emplace_back(id, &p);
    std::sort(byid.begin(), byid.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<WeightedPoint> pts;
    pts.reserve(byid.size());
    for (const auto& [id, p] : byid) pts.push_back(WeightedPoint{p->x, p->a, 1.0});
    return pts;
  }

  void compact() {
    tree_.rebuild(weighted_points());
  }

  // Grows q inside R until it holds at least min_query_samples samples:
  // dimensions in order, upper side before lower side, each by binary search
  // over the sample coordinates.
  Rectangle expand(Rectangle q, const Rectangle& r) const {
    for (std::size_t j = 0; j < d_ && count(q) < dm_; ++j) {
      const auto& v = sorted_[j];
      {
        auto a = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), q.hi[j]) - v.begin());
        auto b = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), r.hi[j]) - v.begin());
        Rectangle probe = q;
        probe.hi[j] = r.hi[j];
        if (count(probe) < dm_) {
          q = probe;
        } else {
          while (a < b) {  // smallest v[mid] reaching the target
            const std::size_t mid = a + (b - a) / 2;
            probe.hi[j] = std::nextafter(v[mid], kInf);
            if (count(probe) >= dm_) b = mid;
            else a = mid + 1;
          }
          q.hi[j] = std::nextafter(v[a], kInf);
          break;
        }
      }
      {
        auto a = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), r.lo[j]) - v.begin());
        auto b = static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), q.lo[j]) - v.begin());
        Rectangle probe = q;
        probe.lo[j] = r.lo[j];
        if (count(probe) < dm_) {
          q = probe;
        } else {
          // largest v[mid] below q.lo reaching the target
          std::size_t lo = a, hi = b;  // search in [lo, hi)
          while (hi - lo > 1) {
            const std::size_t mid = lo + (hi - lo) / 2;
            probe.lo[j] = v[mid];
            if (count(probe) >= dm_) lo = mid;
            else hi = mid;
          }
          q.lo[j] = v[lo];
          break;
        }
      }
    }
    return q;
  }

  // d == 1: windows of exactly min_query_samples consecutive samples.
  std::optional<Rectangle> best_window(const Rectangle& r) const {
    const auto& xs = win_x_;
    const auto a = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), r.lo[0]) - xs.begin());
    const auto b = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), r.hi[0]) - xs.begin());
    if (b < a + dm_) return std::nullopt;
    const std::size_t i = sparse_argmax(a, b - dm_ + 1);
    return Rectangle({xs[i]}, {std::nextafter(xs[i + dm_ - 1], kInf)});
  }

  std::optional<Rectangle> best_small_interval(const Rectangle& r, double n) const {
    const auto& xs = win_x_;
    const auto a = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), r.lo[0]) - xs.begin());
    const auto b = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), r.hi[0]) - xs.begin());
    std::optional<Rectangle> best;
    double best_var = -1.0;
    for (std::size_t i = a; i < b; ++i) {
      Moments m;
      for (std::size_t j = i; j < b; ++j) {
        m.add(win_a_[j]);
        if (j + 1 - i < dm_) continue;
        const double var = avg_variance(n, m);
        if (var > best_var) {
          best_var = var;
          best = Rectangle({xs[i]}, {std::nextafter(xs[j], kInf)});
        }
      }
    }
    return best;
  }

  std::size_t sparse_argmax(std::size_t lo, std::size_t hi) const {
    const std::size_t len = hi - lo;
    std::size_t k = 0;
    while ((std::size_t{2} << k) <= len) ++k;
    const std::size_t p = table_[k][lo];
    const std::size_t q = table_[k][hi - (std::size_t{1} << k)];
    return win_w_[q] > win_w_[p] ? q : p;
  }

  void refresh() const {
    if (!dirty_) return;
    dirty_ = false;
    if (d_ == 1) build_windows();
    else build_store();
  }

  void build_windows() const {
    std::vector<std::pair<double, double>> xa;
    xa.reserve(points_.size());
    for (const auto& [id, p] : points_) xa.emplace_back(p.x[0], p.a);
    std::sort(xa.begin(), xa.end());
    win_x_.resize(xa.size());
    win_a_.resize(xa.size());
    for (std::size_t i = 0; i < xa.size(); ++i) {
      win_x_[i] = xa[i].first;
      win_a_[i] = xa[i].second;
    }
    table_.clear();
    win_w_.clear();
    if (xa.size() < dm_) return;
    const std::size_t w = xa.size() - dm_ + 1;
    win_w_.resize(w);
    KahanSum acc;
    for (std::size_t i = 0; i < dm_; ++i) acc += xa[i].second * xa[i].second;
    // Recompute each window from scratch every dm_ steps to bound drift.
    for (std::size_t i = 0; i < w; ++i) {
      if (i > 0) {
        if (i % dm_ == 0) {
          acc = KahanSum();
          for (std::size_t t = i; t < i + dm_; ++t) acc += xa[t].second * xa[t].second;
        } else {
          acc -= xa[i - 1].second * xa[i - 1].second;
          acc += xa[i + dm_ - 1].second * xa[i + dm_ - 1].second;
        }
      }
      win_w_[i] = acc.value();
    }
    table_.emplace_back(w);
    std::iota(table_[0].begin(), table_[0].end(), std::size_t{0});
    for (std::size_t k = 1; (std::size_t{1} << k) <= w; ++k) {
      const std::size_t half = std::size_t{1} << (k - 1);
      const std::size_t rows = w - (std::size_t{1} << k) + 1;
      table_.emplace_back(rows);
      for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t p = table_[k - 1][i], q = table_[k - 1][i + half];
        table_[k][i] = win_w_[q] > win_w_[p] ? q : p;
      }
    }
  }

  // Weighted-rectangle store: every last-level node of a fresh static range
  // tree holding at most min_query_samples samples. Nodes with up to twice
  // that many are represented by their two halves, which are such nodes.
  // Each rectangle is a 2d-dimensional point (lower corner, upper corner)
  // in a k-d tree augmented with subtree maximum weight.
  struct Store {
    std::size_t d = 2;
    std::vector<StoredRect> rects;
    std::vector<std::size_t> order;  // k-d layout over rects
    std::vector<double> max_w;       // per k-d node
    std::vector<double> box;         // per k-d node: min then max of the 2d key
    std::size_t width() const { return 4 * d; }

    double key(std::size_t i, std::size_t c) const {
      const auto& r = rects[i].box;
      return c < d ? r.lo[c] : r.hi[c - d];
    }

    void build(std::size_t dims, std::vector<StoredRect> rs) {
      d = dims;
      rects = std::move(rs);
      order.resize(rects.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      max_w.assign(rects.size(), 0.0);
      box.assign(rects.size() * width(), 0.0);
      if (!rects.empty()) build_node(0, rects.size(), 0);
    }

    void build_node(std::size_t lo, std::size_t hi, std::size_t depth) {
      const std::size_t mid = lo + (hi - lo) / 2;
      const std::size_t c = depth % (2 * d);
      std::nth_element(order.begin() + static_cast<std::ptrdiff_t>(lo),
                       order.begin() + static_cast<std::ptrdiff_t>(mid),
                       order.begin() + static_cast<std::ptrdiff_t>(hi),
                       [&](std::size_t p, std::size_t q) { return key(p, c) < key(q, c); });
      if (lo < mid) build_node(lo, mid, depth + 1);
      if (mid + 1 < hi) build_node(mid + 1, hi, depth + 1);
      double* bx = &box[mid * width()];
      double w = rects[order[mid]].weight;
      for (std::size_t t = 0; t < 2 * d; ++t) bx[t] = bx[2 * d + t] = key(order[mid], t);
      for (std::size_t child : {lo < mid ? lo + (mid - lo) / 2 : hi, mid + 1 < hi ? mid + 1 + (hi - mid - 1) / 2 : hi}) {
        if (child >= hi) continue;
        const double* cb = &box[child * width()];
        for (std::size_t t = 0; t < 2 * d; ++t) {
          bx[t] = std::min(bx[t], cb[t]);
          bx[2 * d + t] = std::max(bx[2 * d + t], cb[2 * d + t]);
        }
        w = std::max(w, max_w[child]);
      }
      max_w[mid] = w;
    }

    // Stored box fully inside r: lo corner >= r.lo and upper edge <= r.hi.
    bool fits(std::size_t i, const Rectangle& r) const {
      const auto& b = rects[i].box;
      for (std::size_t j = 0; j < d; ++j)
        if (b.lo[j] < r.lo[j] || b.hi[j] > r.hi[j]) return false;
      return true;
    }

    bool may_fit(std::size_t node, const Rectangle& r) const {
      const double* bx = &box[node * width()];
      for (std::size_t j = 0; j < d; ++j) {
        if (bx[2 * d + j] < r.lo[j]) return false;  // every lower corner left of R
        if (bx[d + j] > r.hi[j]) return false;      // every upper edge beyond R
      }
      return true;
    }

    void search(std::size_t lo, std::size_t hi, const Rectangle& r, std::optional<std::size_t>& best,
                double& best_w) const {
      if (lo >= hi) return;
      const std::size_t mid = lo + (hi - lo) / 2;
      if (best && max_w[mid] <= best_w) return;
      if (!may_fit(mid, r)) return;
      const std::size_t i = order[mid];
      if (fits(i, r) && (!best || rects[i].weight > best_w)) {
        best = i;
        best_w = rects[i].weight;
      }
      search(lo, mid, r, best, best_w);
      search(mid + 1, hi, r, best, best_w);
    }

    std::optional<Rectangle> best_inside(const Rectangle& r) const {
      std::optional<std::size_t> best;
      double w = 0.0;
      search(0, rects.size(), r, best, w);
      if (!best) return std::nullopt;
      return rects[*best].box;
    }
  };

  void build_store() const {
    const StaticRangeTree fresh(d_, weighted_points());
    std::vector<StoredRect> rects;
    fresh.for_each_last_level_node([&](const StaticRangeTree::NodeView& node) {
      if (node.items.size() > dm_) return true;
      std::vector<double> lo(d_, kInf), hi(d_, -kInf);
      for (auto i : node.items) {
        const double* x = fresh.coords(i);
        for (std::size_t j = 0; j < d_; ++j) {
          lo[j] = std::min(lo[j], x[j]);
          hi[j] = std::max(hi[j], x[j]);
        }
      }
      for (auto& h : hi) h = std::nextafter(h, kInf);
      rects.push_back(StoredRect{Rectangle(std::move(lo), std::move(hi)), node.moments.sumsq,
                                 node.items.size()});
      return true;
    });
    store_.build(d_, std::move(rects));
  }

  std::size_t d_;
  std::size_t dm_;
  std::unordered_map<TupleId, Pt> points_;
  DynamicRangeTree tree_;
  std::vector<std::vector<double>> sorted_;

  mutable bool dirty_ = true;
  mutable Store store_;
  mutable std::vector<double> win_x_;
  mutable std::vector<double> win_a_;
  mutable std::vector<double> win_w_;
  mutable std::vector<std::vector<std::size_t>> table_;
};

}  // namespace dpt
