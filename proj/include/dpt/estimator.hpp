#pragma once

// Query answering from the synopsis alone: node statistics for the nodes a
// query covers, stratum samples for the leaves it cuts. Nothing here can
// reach the archive.

#include <cmath>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpt/core.hpp"
#include "dpt/partition_tree.hpp"
#include "dpt/reservoir.hpp"

namespace dpt {

// Closed forms of w^2 * var(phi(X)) / |X| for the transforms used below.

/// Partial leaf, SUM/COUNT: phi(t) = pred * n_hat * a over a stratum of m.
inline double sample_variance_sum(double n_hat, double m, double sum_q, double sumsq_q) {
  if (m <= 0.0) return 0.0;
  return std::max(0.0, n_hat * n_hat / (m * m * m) * (m * sumsq_q - sum_q * sum_q));
}

/// Covered nodes, SUM/COUNT: phi(t) = n0 * a * [t in nodes] over all h
/// snapshot draws of the epoch.
inline double catchup_variance_sum(double n0, double h, double sum_in, double sumsq_in) {
  if (h <= 0.0) return 0.0;
  return std::max(0.0, n0 * n0 / (h * h * h) * (h * sumsq_in - sum_in * sum_in));
}

/// Partial leaf, AVG: phi(t) = pred * (m / c) * a, weighted by w.
inline double sample_variance_avg(double w, double m, double c, double sum_q, double sumsq_q) {
  if (m <= 0.0 || c <= 0.0) return 0.0;
  return std::max(0.0, w * w / (m * c * c) * (m * sumsq_q - sum_q * sum_q));
}

/// Covered node, AVG: phi(t) = a over the node's own h_i draws, weighted by w.
inline double catchup_variance_avg(double w, double h_i, double sum_i, double sumsq_i) {
  if (h_i <= 0.0) return 0.0;
  return std::max(0.0, w * w / (h_i * h_i * h_i) * (h_i * sumsq_i - sum_i * sum_i));
}

enum class AnswerStatus { Ok, Unanswerable };

struct Contribution {
  std::size_t node = 0;
  bool covered = false;
  double population = 0.0;  // estimated tuples of the node inside q
  double sum = 0.0;         // estimated sum of the node inside q
  std::size_t samples = 0;  // stratum samples (partial) or snapshot draws (covered)
};

struct QueryAnswer {
  double estimate = 0.0;
  double ci_half_width = 0.0;
  double nu_c = 0.0;
  double nu_s = 0.0;
  bool exact = false;
  AnswerStatus status = AnswerStatus::Ok;
  std::size_t empty_strata = 0;  // partial leaves with no samples
  std::vector<Contribution> diagnostics;
};

inline void to_json(nlohmann::json& j, const QueryAnswer& a) {
  j = nlohmann::json{{"estimate", a.estimate}, {"ci", a.ci_half_width}, {"nu_c", a.nu_c},
                     {"nu_s", a.nu_s},         {"exact", a.exact}};
  if (a.status == AnswerStatus::Unanswerable) j["unanswerable"] = true;
}

/// Population and sum estimates of a node: snapshot statistics scaled to the
/// epoch population plus exact deltas.
struct NodeEstimate {
  double count = 0.0;
  double sum = 0.0;
  double draws = 0.0;      // snapshot samples behind the estimate
  double draws_total = 0.0;
  double draw_sum = 0.0;
  double draw_sumsq = 0.0;
  bool exact = false;      // no sampling error in count/sum
};

inline NodeEstimate estimate_node(const PartitionTree& tree, std::size_t n) {
  const NodeStats& s = tree.node(n).stats;
  const Epoch& e = tree.epochs().at(s.epoch);
  NodeEstimate out;
  if (e.n0 > 0.0) {
    if (e.complete()) {
      out.draws = s.h;
      out.draws_total = e.h_total;
      out.draw_sum = s.h_sum.value();
      out.draw_sumsq = s.h_sumsq.value();
      out.exact = true;
    } else {
      // The seed pool and the catch-up draws are both uniform over the
      // snapshot, so pooling them keeps the ratio unbiased.
      out.draws = s.seed_n + s.h;
      out.draws_total = e.seed_total + e.h_total;
      out.draw_sum = s.seed_sum.value() + s.h_sum.value();
      out.draw_sumsq = s.seed_sumsq.value() + s.h_sumsq.value();
    }
    if (out.draws_total > 0.0) {
      out.count = e.n0 * out.draws / out.draws_total;
      out.sum = e.n0 * out.draw_sum / out.draws_total;
    }
  } else {
    out.exact = true;
  }
  out.count += s.ins_count - s.del_count;
  out.sum += s.ins_sum.value() - s.del_sum.value();
  return out;
}

/// Variance of an estimated node population n0 * draws / draws_total.
inline double population_variance(const PartitionTree& tree, const NodeEstimate& ne,
                                  std::size_t n) {
  if (ne.exact) return 0.0;
  const double n0 = tree.epoch_of(n).n0;
  return catchup_variance_sum(n0, ne.draws_total, ne.draws, ne.draws);
}

namespace detail {

struct StratumMoments {
  double m = 0.0;
  double c = 0.0;
  double sum = 0.0;
  double sumsq = 0.0;
  double lo = kInf;
  double hi = -kInf;
};

inline StratumMoments stratum_moments(const Reservoir& pool, std::size_t leaf, const Rectangle& q) {
  StratumMoments out;
  const auto slots = pool.stratum(leaf);
  out.m = static_cast<double>(slots.size());
  KahanSum s, s2;
  for (std::size_t slot : slots) {
    const Tuple& t = pool.at(slot);
    if (!q.contains_unchecked(t.coords.data())) continue;
    out.c += 1.0;
    s += t.value;
    s2 += t.value * t.value;
    out.lo = std::min(out.lo, t.value);
    out.hi = std::max(out.hi, t.value);
  }
  out.sum = s.value();
  out.sumsq = s2.value();
  return out;
}

inline QueryAnswer answer_extreme(const Query& q, const PartitionTree& tree, const Reservoir& pool,
                                  const PartitionTree::Frontier& f) {
  const bool want_max = q.kind == AggregateKind::Max;
  QueryAnswer a;
  double best = want_max ? -kInf : kInf;
  auto take = [&](double v) { best = want_max ? std::max(best, v) : std::min(best, v); };
  bool exact = f.partial.empty();
  for (auto n : f.covered) {
    const NodeStats& s = tree.node(n).stats;
    const auto& heap = want_max ? s.top : s.bot;
    if (!heap.empty()) take(heap.best());
    if (heap.degraded()) exact = false;
    const Epoch& e = tree.epoch_of(n);
    if (e.n0 > 0.0) {
      take(want_max ? s.sample_max : s.sample_min);
      if (!e.complete() || s.del_count > 0.0) exact = false;
    }
  }
  for (auto n : f.partial) {
    const auto sm = stratum_moments(pool, static_cast<std::size_t>(tree.node(n).leaf), q.predicate);
    if (sm.c > 0.0) take(want_max ? sm.hi : sm.lo);
  }
  if (std::isinf(best)) {
    a.status = AnswerStatus::Unanswerable;
    return a;
  }
  a.estimate = best;
  a.exact = exact;
  return a;
}

}  // namespace detail

/// Answers q from the tree and the pooled strata. The pool's strata must be
/// keyed by the tree's leaves.
inline QueryAnswer answer(const Query& q, const PartitionTree& tree, const Reservoir& pool) {
  const auto f = tree.frontier(q.predicate);
  if (q.kind == AggregateKind::Min || q.kind == AggregateKind::Max)
    return detail::answer_extreme(q, tree, pool, f);

  const bool is_count = q.kind == AggregateKind::Count;
  QueryAnswer a;
  a.exact = f.partial.empty();

  // Covered nodes of one epoch share their draws, so their catch-up error is
  // one transform over the union of the nodes.
  struct Group {
    double n0 = 0.0, h = 0.0, sum = 0.0, sumsq = 0.0;
  };
  std::map<std::size_t, Group> groups;
  std::vector<std::pair<std::size_t, NodeEstimate>> covered;
  for (auto n : f.covered) {
    const NodeEstimate ne = estimate_node(tree, n);
    covered.emplace_back(n, ne);
    if (!ne.exact) {
      a.exact = false;
      auto& g = groups[tree.node(n).stats.epoch];
      g.n0 = tree.epoch_of(n).n0;
      g.h = ne.draws_total;
      g.sum += is_count ? ne.draws : ne.draw_sum;
      g.sumsq += is_count ? ne.draws : ne.draw_sumsq;
    }
    a.diagnostics.push_back(
        Contribution{n, true, ne.count, ne.sum, static_cast<std::size_t>(ne.draws)});
  }

  struct PartialLeaf {
    std::size_t node;
    NodeEstimate ne;
    detail::StratumMoments sm;
  };
  std::vector<PartialLeaf> partial;
  for (auto n : f.partial) {
    const auto leaf = static_cast<std::size_t>(tree.node(n).leaf);
    PartialLeaf p{n, estimate_node(tree, n), detail::stratum_moments(pool, leaf, q.predicate)};
    if (p.sm.m == 0.0) ++a.empty_strata;
    const double pop = p.sm.m > 0.0 ? p.ne.count * p.sm.c / p.sm.m : 0.0;
    const double sum = p.sm.m > 0.0 ? p.ne.count * p.sm.sum / p.sm.m : 0.0;
    a.diagnostics.push_back(Contribution{n, false, pop, sum, static_cast<std::size_t>(p.sm.m)});
    partial.push_back(p);
  }

  if (q.kind != AggregateKind::Avg) {
    double est = 0.0;
    for (const auto& [n, ne] : covered) est += is_count ? ne.count : ne.sum;
    for (const auto& [n0, g] : groups) a.nu_c += catchup_variance_sum(g.n0, g.h, g.sum, g.sumsq);
    for (const auto& p : partial) {
      if (p.sm.m == 0.0) continue;
      const double y = is_count ? p.sm.c : p.sm.sum;
      const double y2 = is_count ? p.sm.c : p.sm.sumsq;
      est += p.ne.count * y / p.sm.m;
      a.nu_s += sample_variance_sum(p.ne.count, p.sm.m, y, y2);
      // The leaf population is itself estimated.
      const double mean = y / p.sm.m;
      a.nu_c += mean * mean * population_variance(tree, p.ne, p.node);
    }
    a.estimate = est;
  } else {
    double total_pop = 0.0, total_sum = 0.0;
    for (const auto& c : a.diagnostics) {
      total_pop += c.population;
      total_sum += c.sum;
    }
    if (!(total_pop > 0.0)) {
      a.status = AnswerStatus::Unanswerable;
      a.exact = false;
      return a;
    }
    a.estimate = total_sum / total_pop;
    for (const auto& [n, ne] : covered) {
      if (ne.exact) continue;
      const double w = ne.count / total_pop;
      a.nu_c += catchup_variance_avg(w, ne.draws, ne.draw_sum, ne.draw_sumsq);
    }
    for (const auto& p : partial) {
      if (p.sm.c == 0.0) continue;
      const double w = p.ne.count * p.sm.c / p.sm.m / total_pop;
      a.nu_s += sample_variance_avg(w, p.sm.m, p.sm.c, p.sm.sum, p.sm.sumsq);
    }
  }

  if (a.exact) {
    a.nu_c = a.nu_s = 0.0;
  }
  a.ci_half_width = z_for_confidence(q.confidence) * std::sqrt(a.nu_c + a.nu_s);
  return a;
}

}  // namespace dpt
