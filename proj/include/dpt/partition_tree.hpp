#pragma once

// The synopsis tree: rectangles with incrementally maintained statistics.
//
// Every node belongs to an epoch, the (re)build that created it. An epoch
// remembers the archive population N0 at its snapshot; node estimates scale
// the epoch's samples to N0 and then add the exact deltas routed since.

#include <algorithm>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpt/core.hpp"
#include "dpt/plan.hpp"

namespace dpt {

/// The cap largest (or smallest) values seen, kept sorted best-first.
class BoundedExtremes {
public:
  BoundedExtremes(std::size_t cap, bool largest) : cap_(cap), largest_(largest) {}

  void push(double x) {
    auto pos = std::lower_bound(v_.begin(), v_.end(), x, [&](double a, double b) { return better(a, b); });
    v_.insert(pos, x);
    if (v_.size() > cap_) {
      v_.pop_back();
      evicted_ = true;
    }
  }

  /// Removes one copy of x. A miss is silent. Once values have been
  /// evicted, any removal means the kept set may no longer be the true top.
  bool erase(double x) {
    auto it = std::find(v_.begin(), v_.end(), x);
    if (it == v_.end()) {
      if (evicted_) degraded_ = true;
      return false;
    }
    v_.erase(it);
    if (evicted_) degraded_ = true;
    return true;
  }

  [[nodiscard]] bool empty() const { return v_.empty(); }
  [[nodiscard]] double best() const { return v_.front(); }
  [[nodiscard]] const std::vector<double>& values() const { return v_; }
  [[nodiscard]] bool degraded() const { return degraded_; }
  [[nodiscard]] std::size_t cap() const { return cap_; }

private:
  bool better(double a, double b) const { return largest_ ? a > b : a < b; }

  std::size_t cap_;
  bool largest_;
  std::vector<double> v_;
  bool evicted_ = false;
  bool degraded_ = false;
};

struct NodeStats {
  // exact deltas since the node's epoch began
  double ins_count = 0.0;
  double del_count = 0.0;
  KahanSum ins_sum, del_sum;
  // catch-up draws from the epoch snapshot
  double h = 0.0;
  KahanSum h_sum, h_sumsq;
  // pool at the blocking step of the epoch
  double seed_n = 0.0;
  KahanSum seed_sum, seed_sumsq;
  // post-build arrivals
  BoundedExtremes top{32, true};
  BoundedExtremes bot{32, false};
  // extrema of snapshot samples (seed and catch-up)
  double sample_min = kInf;
  double sample_max = -kInf;

  std::size_t epoch = 0;

  NodeStats() = default;
  NodeStats(std::size_t heap_k, std::size_t ep) : top(heap_k, true), bot(heap_k, false), epoch(ep) {}
};

struct Epoch {
  Version snapshot = 0;
  double n0 = 0.0;           // live archive size at the snapshot
  double seed_total = 0.0;   // pool size used to seed node statistics
  double h_total = 0.0;      // catch-up draws absorbed so far
  double target = 0.0;       // catch-up draws wanted
  bool active = true;        // still absorbing

  /// Catch-up enumerated the whole snapshot, so its statistics are exact.
  [[nodiscard]] bool complete() const { return h_total >= n0; }
  [[nodiscard]] bool done() const { return !active || h_total >= target || complete(); }
};

class PartitionTree {
public:
  struct Node {
    Rectangle rect;
    int parent = -1;
    int left = -1;
    int right = -1;
    std::size_t split_dim = 0;
    double split_value = 0.0;
    std::size_t depth = 0;
    int leaf = -1;  // index into leaves(), -1 for internal nodes
    NodeStats stats;

    [[nodiscard]] bool is_leaf() const { return left < 0; }
  };

  PartitionTree() = default;

  PartitionTree(const PartitionPlan& plan, std::size_t heap_k) : heap_k_(heap_k) {
    if (plan.nodes.empty()) throw std::invalid_argument("empty partition plan");
    d_ = plan.d;
    nodes_.reserve(plan.nodes.size());
    copy_plan(plan, 0, -1, 0, 0);
    reindex();
  }

  [[nodiscard]] std::size_t dims() const { return d_; }
  [[nodiscard]] std::size_t heap_k() const { return heap_k_; }
  [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }
  [[nodiscard]] const Node& node(std::size_t i) const { return nodes_[i]; }
  [[nodiscard]] const std::vector<std::size_t>& leaves() const { return leaves_; }
  [[nodiscard]] std::size_t leaf_count() const { return leaves_.size(); }
  [[nodiscard]] const std::vector<Epoch>& epochs() const { return epochs_; }
  [[nodiscard]] const Epoch& epoch_of(std::size_t node) const { return epochs_[nodes_[node].stats.epoch]; }
  [[nodiscard]] std::size_t current_epoch() const { return epochs_.empty() ? 0 : epochs_.size() - 1; }

  [[nodiscard]] std::vector<Rectangle> leaf_rects() const {
    std::vector<Rectangle> out;
    for (auto l : leaves_) out.push_back(nodes_[l].rect);
    return out;
  }

  /// Leaf index (position in leaves()) of point x.
  [[nodiscard]] std::size_t locate(const double* x) const {
    std::size_t n = 0;
    while (!nodes_[n].is_leaf()) n = child_for(n, x);
    return static_cast<std::size_t>(nodes_[n].leaf);
  }

  /// Root-to-leaf node ids for point x.
  [[nodiscard]] std::vector<std::size_t> path(const double* x) const {
    std::vector<std::size_t> out{0};
    while (!nodes_[out.back()].is_leaf()) out.push_back(child_for(out.back(), x));
    return out;
  }

  /// Starts a new epoch for `members` (all nodes when empty), resetting
  /// their statistics and seeding them from the pool. Returns the epoch id.
  std::size_t begin_epoch(Version snapshot, std::size_t n0, double target,
                          std::span<const Tuple> pool, std::vector<std::size_t> members = {}) {
    if (members.empty()) {
      members.resize(nodes_.size());
      for (std::size_t i = 0; i < nodes_.size(); ++i) members[i] = i;
    }
    for (auto& e : epochs_) e.active = false;
    const std::size_t id = epochs_.size();
    epochs_.push_back(Epoch{snapshot, static_cast<double>(n0), static_cast<double>(pool.size()), 0.0,
                            target, true});
    for (auto n : members) nodes_[n].stats = NodeStats(heap_k_, id);
    for (const auto& t : pool) {
      walk(t.coords.data(), [&](NodeStats& s) {
        if (s.epoch != id) return;
        s.seed_n += 1.0;
        s.seed_sum += t.value;
        s.seed_sumsq += t.value * t.value;
        s.sample_min = std::min(s.sample_min, t.value);
        s.sample_max = std::max(s.sample_max, t.value);
      });
    }
    return id;
  }

  void route_insert(const Tuple& t) {
    walk(t.coords.data(), [&](NodeStats& s) {
      s.ins_count += 1.0;
      s.ins_sum += t.value;
      s.top.push(t.value);
      s.bot.push(t.value);
    });
  }

  void route_delete(const Tuple& t) {
    walk(t.coords.data(), [&](NodeStats& s) {
      s.del_count += 1.0;
      s.del_sum += t.value;
      s.top.erase(t.value);
      s.bot.erase(t.value);
    });
  }

  /// Adds one catch-up draw of the active epoch. Nodes of older epochs are
  /// left alone: their snapshot population differs.
  void absorb_catchup(const Tuple& t) {
    if (epochs_.empty()) return;
    const std::size_t id = epochs_.size() - 1;
    epochs_[id].h_total += 1.0;
    walk(t.coords.data(), [&](NodeStats& s) {
      if (s.epoch != id) return;
      s.h += 1.0;
      s.h_sum += t.value;
      s.h_sumsq += t.value * t.value;
      s.sample_min = std::min(s.sample_min, t.value);
      s.sample_max = std::max(s.sample_max, t.value);
    });
  }

  void close_epoch() {
    if (!epochs_.empty()) epochs_.back().active = false;
  }

  struct Frontier {
    std::vector<std::size_t> covered;  // node ids fully inside q
    std::vector<std::size_t> partial;  // leaf node ids cut by q
  };

  [[nodiscard]] Frontier frontier(const Rectangle& q) const {
    if (q.dims() != d_) throw DimensionMismatch(d_, q.dims());
    Frontier f;
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
      const std::size_t n = stack.back();
      stack.pop_back();
      const Relation rel = relation(nodes_[n].rect, q);
      if (rel == Relation::Disjoint) continue;
      if (rel == Relation::ContainedInQ) {
        f.covered.push_back(n);
      } else if (nodes_[n].is_leaf()) {
        f.partial.push_back(n);
      } else {
        stack.push_back(static_cast<std::size_t>(nodes_[n].right));
        stack.push_back(static_cast<std::size_t>(nodes_[n].left));
      }
    }
    return f;
  }

  /// Ancestor `levels` above leaf node `leaf_node` (the root if too far).
  [[nodiscard]] std::size_t ancestor(std::size_t leaf_node, std::size_t levels) const {
    std::size_t n = leaf_node;
    for (std::size_t i = 0; i < levels && nodes_[n].parent >= 0; ++i)
      n = static_cast<std::size_t>(nodes_[n].parent);
    return n;
  }

  [[nodiscard]] std::size_t leaves_under(std::size_t n) const {
    if (nodes_[n].is_leaf()) return 1;
    return leaves_under(static_cast<std::size_t>(nodes_[n].left)) +
           leaves_under(static_cast<std::size_t>(nodes_[n].right));
  }

  /// Replaces the descendants of node u by the plan's tree (whose root
  /// rectangle must equal u's). Every other node keeps its statistics.
  /// Returns the ids of the new nodes.
  std::vector<std::size_t> replace_subtree(std::size_t u, const PartitionPlan& sub) {
    if (!(sub.nodes[0].rect == nodes_[u].rect))
      throw std::invalid_argument("sub-plan root does not match the replaced node");
    std::vector<Node> old = std::move(nodes_);
    nodes_.clear();
    std::vector<std::size_t> fresh;
    rebuild_from(old, 0, -1, u, sub, fresh);
    reindex();
    return fresh;
  }

  /// The plan this tree was built from, without statistics.
  [[nodiscard]] PartitionPlan plan() const {
    PartitionPlan p;
    p.d = d_;
    for (const auto& n : nodes_)
      p.nodes.push_back(PlanNode{n.rect, n.parent, n.left, n.right, n.split_dim, n.split_value});
    p.leaves = leaves_;
    p.leaf_error.assign(leaves_.size(), 0.0);
    return p;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& n : nodes_) {
      const auto& s = n.stats;
      nlohmann::json j{{"rect", n.rect},
                       {"parent", n.parent},
                       {"left", n.left},
                       {"right", n.right},
                       {"depth", n.depth},
                       {"epoch", s.epoch},
                       {"ins_count", s.ins_count},
                       {"ins_sum", s.ins_sum.value()},
                       {"del_count", s.del_count},
                       {"del_sum", s.del_sum.value()},
                       {"h", s.h},
                       {"h_sum", s.h_sum.value()},
                       {"h_sumsq", s.h_sumsq.value()},
                       {"seed_n", s.seed_n},
                       {"seed_sum", s.seed_sum.value()},
                       {"seed_sumsq", s.seed_sumsq.value()},
                       {"topk", s.top.values()},
                       {"botk", s.bot.values()}};
      if (!n.is_leaf()) {
        j["split_dim"] = n.split_dim;
        j["split_value"] = n.split_value;
      }
      arr.push_back(std::move(j));
    }
    auto eps = nlohmann::json::array();
    for (const auto& e : epochs_)
      eps.push_back({{"snapshot", e.snapshot}, {"n0", e.n0}, {"seed_total", e.seed_total},
                     {"h_total", e.h_total}, {"target", e.target}, {"active", e.active}});
    return {{"d", d_}, {"heap_k", heap_k_}, {"nodes", arr}, {"epochs", eps}};
  }

private:
  std::size_t child_for(std::size_t n, const double* x) const {
    const Node& nd = nodes_[n];
    return static_cast<std::size_t>(x[nd.split_dim] < nd.split_value ? nd.left : nd.right);
  }

  template <class F>
  void walk(const double* x, F&& f) {
    std::size_t n = 0;
    for (;;) {
      f(nodes_[n].stats);
      if (nodes_[n].is_leaf()) return;
      n = child_for(n, x);
    }
  }

  int copy_plan(const PartitionPlan& plan, std::size_t pn, int parent, std::size_t depth,
                std::size_t epoch) {
    const auto me = static_cast<int>(nodes_.size());
    const PlanNode& src = plan.nodes[pn];
    nodes_.push_back(Node{src.rect, parent, -1, -1, src.split_dim, src.split_value, depth, -1,
                          NodeStats(heap_k_, epoch)});
    if (!src.is_leaf()) {
      const int l = copy_plan(plan, static_cast<std::size_t>(src.left), me, depth + 1, epoch);
      const int r = copy_plan(plan, static_cast<std::size_t>(src.right), me, depth + 1, epoch);
      nodes_[static_cast<std::size_t>(me)].left = l;
      nodes_[static_cast<std::size_t>(me)].right = r;
    }
    return me;
  }

  int rebuild_from(std::vector<Node>& old, std::size_t on, int parent, std::size_t u,
                   const PartitionPlan& sub, std::vector<std::size_t>& fresh) {
    const auto me = static_cast<int>(nodes_.size());
    Node copy = std::move(old[on]);
    copy.parent = parent;
    const int ol = copy.left, orr = copy.right;
    if (on == u) {
      copy.left = copy.right = -1;
      copy.split_dim = sub.nodes[0].split_dim;
      copy.split_value = sub.nodes[0].split_value;
      const std::size_t depth = copy.depth;
      nodes_.push_back(std::move(copy));
      if (!sub.nodes[0].is_leaf()) {
        const std::size_t before = nodes_.size();
        const int l = copy_plan(sub, static_cast<std::size_t>(sub.nodes[0].left), me, depth + 1, 0);
        const int r = copy_plan(sub, static_cast<std::size_t>(sub.nodes[0].right), me, depth + 1, 0);
        nodes_[static_cast<std::size_t>(me)].left = l;
        nodes_[static_cast<std::size_t>(me)].right = r;
        for (std::size_t i = before; i < nodes_.size(); ++i) fresh.push_back(i);
      }
      return me;
    }
    nodes_.push_back(std::move(copy));
    if (ol >= 0) {
      const int l = rebuild_from(old, static_cast<std::size_t>(ol), me, u, sub, fresh);
      const int r = rebuild_from(old, static_cast<std::size_t>(orr), me, u, sub, fresh);
      nodes_[static_cast<std::size_t>(me)].left = l;
      nodes_[static_cast<std::size_t>(me)].right = r;
    }
    return me;
  }

  void reindex() {
    leaves_.clear();
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
      const std::size_t n = stack.back();
      stack.pop_back();
      if (nodes_[n].is_leaf()) {
        nodes_[n].leaf = static_cast<int>(leaves_.size());
        leaves_.push_back(n);
        continue;
      }
      nodes_[n].leaf = -1;
      stack.push_back(static_cast<std::size_t>(nodes_[n].right));
      stack.push_back(static_cast<std::size_t>(nodes_[n].left));
    }
  }

  std::size_t d_ = 1;
  std::size_t heap_k_ = 32;
  std::vector<Node> nodes_;
  std::vector<std::size_t> leaves_;
  std::vector<Epoch> epochs_;
};

}  // namespace dpt
