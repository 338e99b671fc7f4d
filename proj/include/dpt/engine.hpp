#pragma once

// The synopsis life cycle: build from a pooled sample, seed node statistics
// (the blocking step), absorb snapshot draws, watch leaf variances and
// re-partition when they drift.
//
// The engine reads the archive but never writes it. Callers apply an event
// to the archive first and then hand it to the engine.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpt/archive.hpp"
#include "dpt/core.hpp"
#include "dpt/estimator.hpp"
#include "dpt/maxvar.hpp"
#include "dpt/partition_tree.hpp"
#include "dpt/partitioner.hpp"
#include "dpt/plan.hpp"
#include "dpt/reservoir.hpp"

namespace dpt {

enum class Phase { Idle, Optimizing, Blocking, CatchingUp, Done };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Idle: return "idle";
    case Phase::Optimizing: return "optimizing";
    case Phase::Blocking: return "blocking";
    case Phase::CatchingUp: return "catching_up";
    case Phase::Done: return "done";
  }
  return "?";
}

enum class TriggerResult { NoAction, CandidateRepartition };

struct RebuildEvent {
  std::uint64_t at_update = 0;  // updates seen by the engine when adopted
  bool partial = false;
  std::size_t psi = 0;
  double old_max = 0.0;
  double new_max = 0.0;
  std::string reason;
};

inline void to_json(nlohmann::json& j, const RebuildEvent& e) {
  j = nlohmann::json{{"at_update", e.at_update}, {"partial", e.partial}, {"psi", e.psi},
                     {"old_max", e.old_max},     {"new_max", e.new_max}, {"reason", e.reason}};
}

struct EngineStatus {
  Phase phase = Phase::Idle;
  double h = 0.0;
  double target = 0.0;
  double max_error = 0.0;
  std::size_t rebuilds = 0;
  std::size_t candidates = 0;
  std::size_t leaves = 0;
  std::size_t pool = 0;
  std::uint64_t updates = 0;
};

inline void to_json(nlohmann::json& j, const EngineStatus& s) {
  j = nlohmann::json{{"phase", std::string(to_string(s.phase))},
                     {"h", s.h},
                     {"target", s.target},
                     {"max_error", s.max_error},
                     {"rebuilds", s.rebuilds},
                     {"candidates", s.candidates},
                     {"leaves", s.leaves},
                     {"pool", s.pool},
                     {"updates", s.updates}};
}

/// Everything a candidate plan needs, copied out so it can be computed
/// without touching the engine.
struct RebuildJob {
  std::size_t generation = 0;  // engine rebuild count when prepared
  std::size_t d = 1;
  std::size_t min_query_samples = 1;
  double beta = 10.0;
  double floor_trigger_factor = 4.0;
  PartitionOptions opt;
  RepartitionMode mode = RepartitionMode::Full;
  std::optional<std::size_t> psi;
  std::size_t trigger_leaf = 0;
  bool force = false;
  bool floor_violated = false;
  std::string reason;
  std::vector<Tuple> samples;
  PartitionPlan current;
};

struct RebuildDecision {
  bool adopt = false;
  bool partial = false;
  std::size_t subtree_root = 0;  // node id in the job's current plan
  std::size_t psi = 0;
  double old_max = 0.0;
  double new_max = 0.0;
  PartitionPlan plan;
};

namespace detail {

inline std::vector<std::size_t> plan_leaves_under(const PartitionPlan& p, std::size_t u) {
  std::vector<std::size_t> out, stack{u};
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    if (p.nodes[n].is_leaf()) {
      out.push_back(n);
      continue;
    }
    stack.push_back(static_cast<std::size_t>(p.nodes[n].right));
    stack.push_back(static_cast<std::size_t>(p.nodes[n].left));
  }
  return out;
}

inline std::size_t plan_depth(const PartitionPlan& p, std::size_t n) {
  std::size_t depth = 0;
  while (p.nodes[n].parent >= 0) {
    n = static_cast<std::size_t>(p.nodes[n].parent);
    ++depth;
  }
  return depth;
}

inline std::size_t plan_ancestor(const PartitionPlan& p, std::size_t n, std::size_t levels) {
  for (std::size_t i = 0; i < levels && p.nodes[n].parent >= 0; ++i)
    n = static_cast<std::size_t>(p.nodes[n].parent);
  return n;
}

/// Plan over `root` with opt.k leaves.
inline PartitionPlan build_plan(std::size_t d, const MaxVarIndex& index,
                                std::span<const Tuple> samples, const PartitionOptions& opt,
                                const Rectangle& root, std::size_t first_dim = 0) {
  if (d == 1) {
    std::vector<Tuple> inside;
    for (const auto& t : samples)
      if (root.contains_unchecked(t.coords.data())) inside.push_back(t);
    return partition_1d(std::span<const Tuple>(inside), index, opt, root);
  }
  return partition_kd(d, index, opt, root, first_dim);
}

inline bool plan_keeps_floor(const PartitionPlan& p, const MaxVarIndex& index,
                             std::size_t floor, double factor) {
  for (auto l : p.leaves)
    if (static_cast<double>(index.count(p.nodes[l].rect)) * factor < static_cast<double>(floor))
      return false;
  return true;
}

}  // namespace detail

/// Candidate computation. Pure: depends only on the job.
inline RebuildDecision compute_rebuild(const RebuildJob& job) {
  MaxVarIndex index(job.d, job.min_query_samples);
  index.rebuild(job.samples);
  RebuildDecision dec;
  const AggregateKind kind = job.opt.kind;

  auto max_over = [&](const std::vector<std::size_t>& plan_leaves) {
    double mx = 0.0;
    for (auto l : plan_leaves) mx = std::max(mx, index.error(kind, job.current.nodes[l].rect));
    return mx;
  };
  auto accept = [&](const PartitionPlan& cand, double old_max) {
    if (job.force) return true;
    if (cand.max_error < old_max / job.beta) return true;
    return job.floor_violated &&
           detail::plan_keeps_floor(cand, index, job.opt.floor, job.floor_trigger_factor);
  };
  auto full = [&]() {
    dec.old_max = max_over(job.current.leaves);
    dec.plan = detail::build_plan(job.d, index, job.samples, job.opt, Rectangle::universe(job.d));
    dec.new_max = dec.plan.max_error;
    dec.partial = false;
    dec.subtree_root = 0;
    dec.adopt = accept(dec.plan, dec.old_max);
  };

  if (job.mode == RepartitionMode::Full) {
    full();
    return dec;
  }

  const std::size_t leaf_node = job.current.leaves.at(job.trigger_leaf);
  const std::size_t depth = detail::plan_depth(job.current, leaf_node);
  std::vector<std::size_t> tries;
  if (job.psi) {
    tries.push_back(std::min(*job.psi, depth));
  } else {
    // Double psi until the rebuilt subtree is good enough or reaches the root.
    for (std::size_t p = 1; p < depth; p *= 2) tries.push_back(p);
    tries.push_back(depth);
  }
  for (std::size_t psi : tries) {
    if (psi == 0 || job.current.leaves.size() <= 1) continue;
    if (psi >= depth) {
      full();
      dec.psi = depth;
      return dec;
    }
    const std::size_t u = detail::plan_ancestor(job.current, leaf_node, psi);
    const auto under = detail::plan_leaves_under(job.current, u);
    if (under.size() <= 1) continue;  // a single leaf would not change
    PartitionOptions opt = job.opt;
    opt.k = under.size();
    const Rectangle& rect = job.current.nodes[u].rect;
    if (index.count(rect) < opt.k) continue;
    PartitionPlan sub = detail::build_plan(job.d, index, job.samples, opt, rect,
                                           detail::plan_depth(job.current, u) % job.d);
    const double old_max = max_over(under);
    dec = RebuildDecision{accept(sub, old_max), true, u, psi, old_max, sub.max_error, std::move(sub)};
    if (dec.adopt) return dec;
  }
  return dec;
}

class DptEngine {
public:
  /// Notified with each candidate job when rebuilds run elsewhere; the
  /// engine then waits for complete_rebuild().
  using JobSink = std::function<void(RebuildJob)>;

  DptEngine(EngineConfig config, const Archive& archive)
    : cfg_(std::move(config)),
      archive_(archive),
      rng_(cfg_.seed),
      pool_(cfg_.m, cfg_.seed ^ 0x9e3779b97f4a7c15ULL),
      index_(cfg_.d, cfg_.min_query_samples()) {
    cfg_.validate();
  }
  DptEngine(const DptEngine&) = delete;
  DptEngine& operator=(const DptEngine&) = delete;

  [[nodiscard]] const EngineConfig& config() const { return cfg_; }
  [[nodiscard]] Phase phase() const { return phase_; }
  [[nodiscard]] const std::vector<Phase>& phase_log() const { return phase_log_; }
  [[nodiscard]] bool initialized() const { return phase_ != Phase::Idle; }
  [[nodiscard]] const PartitionTree& tree() const { return tree_; }
  [[nodiscard]] const Reservoir& pool() const { return pool_; }
  [[nodiscard]] const MaxVarIndex& index() const { return index_; }
  [[nodiscard]] const std::vector<RebuildEvent>& rebuilds() const { return rebuild_log_; }
  [[nodiscard]] std::size_t rebuild_count() const { return rebuild_log_.size(); }
  [[nodiscard]] std::size_t candidate_count() const { return candidates_; }
  [[nodiscard]] std::uint64_t updates() const { return updates_; }
  [[nodiscard]] std::uint64_t routed_events() const { return routed_; }
  [[nodiscard]] const std::vector<double>& baselines() const { return baseline_; }
  [[nodiscard]] const std::vector<std::string>& warnings() const { return warnings_; }

  /// Leave catch-up to an external driver calling advance_catchup().
  void set_background_catchup(bool on) { background_catchup_ = on; }
  /// Hand candidate jobs to `sink` instead of computing them inline.
  void set_job_sink(JobSink sink) { sink_ = std::move(sink); }

  void initialize() {
    if (phase_ != Phase::Idle) throw std::logic_error("engine already initialized");
    const std::size_t n = archive_.size();
    if (n < cfg_.k)
      throw std::invalid_argument("archive holds " + std::to_string(n) + " tuples, fewer than k=" +
                                  std::to_string(cfg_.k));
    if (archive_.dims() != cfg_.d) throw DimensionMismatch(cfg_.d, archive_.dims());
    enter(Phase::Optimizing);
    pool_.refill(n, source());
    index_.rebuild(pool_.pool());
    RebuildJob job = make_job("initial build", true);
    job.mode = RepartitionMode::Full;
    RebuildDecision dec = compute_rebuild(job);
    install(dec, /*resample=*/false);
  }

  /// Call after the archive applied the insert.
  void on_insert(const Tuple& t) {
    if (phase_ == Phase::Idle) return;
    ++updates_;
    ++routed_;
    tree_.route_insert(t);
    const auto out = pool_.on_insert(t, archive_.size());
    if (out.kind == Reservoir::InsertKind::Kept) {
      index_.insert_sample(t);
      std::vector<std::size_t> touched{tree_.locate(t.coords.data())};
      if (out.replaced) {
        index_.delete_sample(out.replaced->id);
        touched.push_back(tree_.locate(out.replaced->coords.data()));
      }
      after_pool_change(touched);
    }
    after_update();
  }

  /// Call after the archive applied the delete; `removed` is the deleted tuple.
  void on_delete(const Tuple& removed) {
    if (phase_ == Phase::Idle) return;
    ++updates_;
    ++routed_;
    tree_.route_delete(removed);
    const auto out = pool_.on_delete(removed.id, archive_.size(), source());
    if (out == Reservoir::DeleteOutcome::Removed) {
      index_.delete_sample(removed.id);
      after_pool_change({tree_.locate(removed.coords.data())});
    } else if (out == Reservoir::DeleteOutcome::RefillTriggered) {
      index_.rebuild(pool_.pool());
      std::vector<std::size_t> all(tree_.leaf_count());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      after_pool_change(all);
    }
    after_update();
  }

  [[nodiscard]] QueryAnswer answer(const Query& q) const {
    if (phase_ == Phase::Idle || phase_ == Phase::Blocking) {
      QueryAnswer a;
      a.status = AnswerStatus::Unanswerable;
      return a;
    }
    if (q.predicate.dims() != cfg_.d) throw DimensionMismatch(cfg_.d, q.predicate.dims());
    return dpt::answer(q, tree_, pool_);
  }

  /// Absorbs up to n snapshot draws into the active epoch. Returns how many.
  std::size_t advance_catchup(std::size_t n) {
    if (phase_ != Phase::CatchingUp || !sampler_) return 0;
    std::size_t got = 0;
    const Epoch& e = tree_.epochs().back();
    while (got < n && !e.done()) {
      auto t = sampler_->next();
      if (!t) break;
      tree_.absorb_catchup(*t);
      ++got;
    }
    if (e.done() || sampler_->exhausted()) finish_catchup();
    return got;
  }

  [[nodiscard]] bool catchup_done() const { return phase_ == Phase::Done; }

  /// Floor and drift test for one leaf against its baseline.
  [[nodiscard]] TriggerResult evaluate_trigger(std::size_t leaf) const {
    const std::size_t floor = cfg_.leaf_floor(pool_.size());
    if (static_cast<double>(pool_.stratum_size(leaf)) * cfg_.floor_trigger_factor <
        static_cast<double>(floor))
      return TriggerResult::CandidateRepartition;
    const double base = baseline_.at(leaf);
    const double now = leaf_error(leaf);
    if (now > cfg_.beta * base || now * cfg_.beta < base) return TriggerResult::CandidateRepartition;
    return TriggerResult::NoAction;
  }

  [[nodiscard]] double leaf_error(std::size_t leaf) const {
    return index_.error(cfg_.focus, tree_.node(tree_.leaves()[leaf]).rect);
  }

  [[nodiscard]] double max_error() const {
    double mx = 0.0;
    for (std::size_t i = 0; i < tree_.leaf_count(); ++i) mx = std::max(mx, leaf_error(i));
    return mx;
  }

  /// Computes a full candidate and adopts it under the drift rule (or
  /// unconditionally with force). Returns whether a rebuild happened.
  bool maybe_repartition(bool force = false, std::string reason = "requested") {
    if (phase_ == Phase::Idle) return false;
    RebuildJob job = make_job(std::move(reason), force);
    job.mode = RepartitionMode::Full;
    return run_job(std::move(job));
  }

  /// Rebuilds the subtree psi levels above `leaf` (automatic search when
  /// psi is unset). Returns whether a rebuild happened.
  bool partial_repartition(std::size_t leaf, std::optional<std::size_t> psi, bool force = false) {
    if (phase_ == Phase::Idle) return false;
    RebuildJob job = make_job("partial", false);
    job.mode = RepartitionMode::Partial;
    job.psi = psi;
    job.trigger_leaf = leaf;
    job.force = force;
    return run_job(std::move(job));
  }

  /// Installs a decision computed from `job` elsewhere. Stale jobs (a
  /// rebuild happened since) are dropped.
  bool complete_rebuild(const RebuildJob& job, RebuildDecision dec) {
    job_in_flight_ = false;
    if (job.generation != generation_) return false;
    if (!dec.adopt) return false;
    dec_reason_ = job.reason;
    install(dec, cfg_.resample_after_rebuild);
    return true;
  }

  [[nodiscard]] EngineStatus status() const {
    EngineStatus s;
    s.phase = phase_;
    if (!tree_.epochs().empty()) {
      s.h = tree_.epochs().back().h_total;
      s.target = tree_.epochs().back().target;
    }
    if (phase_ != Phase::Idle) {
      s.max_error = max_error();
      s.leaves = tree_.leaf_count();
    }
    s.rebuilds = rebuild_count();
    s.candidates = candidates_;
    s.pool = pool_.size();
    s.updates = updates_;
    return s;
  }

  [[nodiscard]] nlohmann::json plan_json() const {
    nlohmann::json j = tree_.plan();
    auto errs = nlohmann::json::array();
    for (std::size_t i = 0; i < tree_.leaf_count(); ++i) errs.push_back(leaf_error(i));
    j["leaf_error"] = errs;
    j["max_error"] = max_error();
    j["baseline"] = baseline_;
    return j;
  }

private:
  Reservoir::RefillSource source() {
    return [this](std::size_t n) {
      const std::size_t pop = archive_.size();
      const SampleMode mode = n * 4 <= pop ? SampleMode::Singleton : SampleMode::Sequential;
      return archive_.sample_uniform(n, mode, rng_);
    };
  }

  void enter(Phase p) {
    phase_ = p;
    phase_log_.push_back(p);
  }

  PartitionOptions options() const {
    PartitionOptions opt;
    opt.kind = cfg_.focus;
    if (opt.kind == AggregateKind::Min || opt.kind == AggregateKind::Max) opt.kind = AggregateKind::Sum;
    opt.k = cfg_.k;
    opt.floor = cfg_.leaf_floor(pool_.size());
    opt.rho = cfg_.rho;
    opt.value_lo = cfg_.value_lo;
    opt.value_hi = cfg_.value_hi;
    opt.order = cfg_.dimension_order;
    return opt;
  }

  RebuildJob make_job(std::string reason, bool force) const {
    RebuildJob job;
    job.generation = generation_;
    job.d = cfg_.d;
    job.min_query_samples = cfg_.min_query_samples();
    job.beta = cfg_.beta;
    job.floor_trigger_factor = cfg_.floor_trigger_factor;
    job.opt = options();
    job.mode = cfg_.repartition_mode;
    job.psi = cfg_.psi;
    job.force = force;
    job.reason = std::move(reason);
    job.samples = pool_.pool();
    if (phase_ == Phase::Idle || tree_.nodes().empty()) {
      job.current = PartitionPlan::single(Rectangle::universe(cfg_.d), job.opt.kind);
    } else {
      job.current = tree_.plan();
    }
    return job;
  }

  bool run_job(RebuildJob job) {
    ++candidates_;
    last_candidate_at_ = pool_updates_;
    pending_ = false;
    if (sink_) {
      if (job_in_flight_) return false;  // one rebuild in flight at a time
      job_in_flight_ = true;
      sink_(std::move(job));
      return false;
    }
    RebuildDecision dec = compute_rebuild(job);
    if (!dec.adopt) return false;
    dec_reason_ = job.reason;
    install(dec, cfg_.resample_after_rebuild);
    return true;
  }

  // The blocking step and everything after it.
  void install(const RebuildDecision& dec, bool resample) {
    const bool first = phase_ == Phase::Optimizing && tree_.nodes().empty();
    if (!first) enter(Phase::Optimizing);
    enter(Phase::Blocking);
    for (const auto& w : dec.plan.warnings) warnings_.push_back(w);
    if (resample) {
      pool_.refill(archive_.size(), source());
      index_.rebuild(pool_.pool());
    }
    std::vector<std::size_t> members;
    if (dec.partial && !first) {
      members = tree_.replace_subtree(dec.subtree_root, dec.plan);
      if (members.empty()) members.push_back(dec.subtree_root);
    } else {
      tree_ = PartitionTree(dec.plan, cfg_.heap_k);
    }
    pool_.reindex(tree_.leaf_rects(), [this](const double* x) { return tree_.locate(x); });
    const Version snap = archive_.version();
    const std::size_t n0 = archive_.size();
    const double target = std::ceil(cfg_.catchup_ratio * static_cast<double>(n0));
    tree_.begin_epoch(snap, n0, target, pool_.pool(), members);
    baseline_.assign(tree_.leaf_count(), 0.0);
    for (std::size_t i = 0; i < tree_.leaf_count(); ++i) baseline_[i] = leaf_error(i);
    sampler_.emplace(archive_, snap, rng_());
    ++generation_;
    updates_since_build_ = 0;
    if (!first) {
      rebuild_log_.push_back(RebuildEvent{updates_, dec.partial, dec.psi, dec.old_max, dec.new_max,
                                          dec_reason_});
    }
    enter(Phase::CatchingUp);
    if (!background_catchup_ && cfg_.catchup_per_event == 0)
      advance_catchup(static_cast<std::size_t>(target));
    if (tree_.epochs().back().done()) finish_catchup();
  }

  void finish_catchup() {
    if (phase_ != Phase::CatchingUp) return;
    tree_.close_epoch();
    enter(Phase::Done);
  }

  void after_pool_change(const std::vector<std::size_t>& leaves) {
    ++pool_updates_;
    if (!cfg_.repartition) return;
    for (auto leaf : leaves) {
      if (evaluate_trigger(leaf) == TriggerResult::CandidateRepartition) {
        pending_ = true;
        pending_leaf_ = leaf;
      }
    }
  }

  void after_update() {
    ++updates_since_build_;
    if (!background_catchup_ && cfg_.catchup_per_event > 0) advance_catchup(cfg_.catchup_per_event);
    if (!cfg_.repartition) return;
    if (cfg_.tau && updates_since_build_ >= *cfg_.tau) {
      maybe_repartition(true, "period");
      return;
    }
    if (!pending_) return;
    const std::size_t cooldown = cfg_.trigger_cooldown == 0 ? cfg_.m : cfg_.trigger_cooldown;
    if (candidates_ > 0 && pool_updates_ - last_candidate_at_ < cooldown) return;
    // Re-check: the drift may have reverted while cooling down.
    if (pending_leaf_ >= tree_.leaf_count() ||
        evaluate_trigger(pending_leaf_) == TriggerResult::NoAction) {
      bool any = false;
      for (std::size_t i = 0; i < tree_.leaf_count() && !any; ++i)
        if (evaluate_trigger(i) == TriggerResult::CandidateRepartition) {
          pending_leaf_ = i;
          any = true;
        }
      if (!any) {
        pending_ = false;
        return;
      }
    }
    RebuildJob job = make_job("drift", false);
    job.trigger_leaf = pending_leaf_;
    const std::size_t floor = cfg_.leaf_floor(pool_.size());
    job.floor_violated = static_cast<double>(pool_.stratum_size(pending_leaf_)) *
                             cfg_.floor_trigger_factor <
                         static_cast<double>(floor);
    if (job.floor_violated) job.reason = "floor";
    run_job(std::move(job));
  }

  EngineConfig cfg_;
  const Archive& archive_;
  std::mt19937_64 rng_;
  Reservoir pool_;
  MaxVarIndex index_;
  PartitionTree tree_;
  std::optional<Archive::SnapshotSampler> sampler_;
  std::vector<double> baseline_;

  Phase phase_ = Phase::Idle;
  std::vector<Phase> phase_log_{Phase::Idle};
  bool background_catchup_ = false;
  JobSink sink_;
  bool job_in_flight_ = false;

  std::uint64_t updates_ = 0;
  std::uint64_t routed_ = 0;
  std::uint64_t updates_since_build_ = 0;
  std::uint64_t pool_updates_ = 0;
  std::uint64_t last_candidate_at_ = 0;
  std::size_t candidates_ = 0;
  std::size_t generation_ = 0;
  bool pending_ = false;
  std::size_t pending_leaf_ = 0;
  std::string dec_reason_;
  std::vector<RebuildEvent> rebuild_log_;
  std::vector<std::string> warnings_;
};

}  // namespace dpt
