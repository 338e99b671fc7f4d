#pragma once

// Pooled uniform sample of the live archive, kept between m and 2m tuples,
// with per-leaf virtual strata.

#include <functional>
#include <optional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "dpt/core.hpp"

namespace dpt {

class Reservoir {
public:
  /// Maps a point to its leaf index.
  using Locator = std::function<std::size_t(const double*)>;

  enum class InsertKind { Kept, Skipped };
  struct InsertOutcome {
    InsertKind kind = InsertKind::Skipped;
    std::optional<Tuple> replaced;  // the evicted pool member, if any
  };
  enum class DeleteOutcome { Untouched, Removed, RefillTriggered };

  Reservoir(std::size_t m, std::uint64_t seed) : m_(m), rng_(seed) {
    if (m == 0) throw std::invalid_argument("reservoir needs m >= 1");
  }

  [[nodiscard]] std::size_t m() const { return m_; }
  [[nodiscard]] std::size_t cap() const { return 2 * m_; }
  [[nodiscard]] std::size_t size() const { return pool_.size(); }
  [[nodiscard]] const std::vector<Tuple>& pool() const { return pool_; }
  [[nodiscard]] bool contains(TupleId id) const { return pos_.contains(id); }
  [[nodiscard]] std::mt19937_64& rng() { return rng_; }

  /// Supplies n uniform draws without replacement from the live set.
  using RefillSource = std::function<std::vector<Tuple>(std::size_t n)>;

  /// Replaces the pool with min(2m, n_live) fresh draws.
  void refill(std::size_t n_live, const RefillSource& source) {
    auto fresh = source(std::min(cap(), n_live));
    assign(std::move(fresh));
  }

  /// Installs an explicit pool (used by tests and by engines sharing a draw).
  void assign(std::vector<Tuple> tuples) {
    pool_ = std::move(tuples);
    pos_.clear();
    for (std::size_t i = 0; i < pool_.size(); ++i) pos_[pool_[i].id] = i;
    rebuild_strata();
  }

  /// Call after the archive has applied the insert; n_live counts t.
  InsertOutcome on_insert(const Tuple& t, std::size_t n_live) {
    const std::size_t s = pool_.size();
    if (s + 1 >= n_live && s < cap()) {
      // The pool still holds the whole live set.
      push(t);
      return {InsertKind::Kept, std::nullopt};
    }
    if (s == 0) return {InsertKind::Skipped, std::nullopt};
    std::uniform_int_distribution<std::size_t> draw(0, n_live - 1);
    if (draw(rng_) >= s) return {InsertKind::Skipped, std::nullopt};
    std::uniform_int_distribution<std::size_t> victim(0, s - 1);
    const std::size_t v = victim(rng_);
    Tuple old = pool_[v];
    remove_at(v);
    push(t);
    return {InsertKind::Kept, std::move(old)};
  }

  /// Call after the archive has applied the delete; n_live no longer
  /// counts the deleted tuple.
  DeleteOutcome on_delete(TupleId id, std::size_t n_live, const RefillSource& source) {
    auto it = pos_.find(id);
    if (it == pos_.end()) return DeleteOutcome::Untouched;
    if (pool_.size() > m_ || pool_.size() > n_live) {
      remove_at(it->second);
      return DeleteOutcome::Removed;
    }
    refill(n_live, source);
    return DeleteOutcome::RefillTriggered;
  }

  /// Re-keys strata by a new leaf assignment.
  void reindex(std::vector<Rectangle> leaf_rects, Locator locate) {
    leaf_rects_ = std::move(leaf_rects);
    locate_ = std::move(locate);
    rebuild_strata();
  }

  [[nodiscard]] std::size_t leaf_count() const { return strata_.size(); }
  [[nodiscard]] std::span<const std::size_t> stratum(std::size_t leaf) const {
    return strata_.at(leaf);
  }
  [[nodiscard]] std::size_t stratum_size(std::size_t leaf) const { return strata_.at(leaf).size(); }
  [[nodiscard]] const Tuple& at(std::size_t slot) const { return pool_[slot]; }
  [[nodiscard]] std::size_t leaf_of_slot(std::size_t slot) const { return leaf_of_[slot]; }

  /// Pool members inside r, via the strata of leaves touching r.
  [[nodiscard]] std::vector<Tuple> stratum(const Rectangle& r) const {
    std::vector<Tuple> out;
    if (strata_.empty()) {
      for (const auto& t : pool_)
        if (r.contains(t.coords)) out.push_back(t);
      return out;
    }
    for (std::size_t leaf = 0; leaf < strata_.size(); ++leaf) {
      const Relation rel = relation(leaf_rects_[leaf], r);
      if (rel == Relation::Disjoint) continue;
      for (std::size_t slot : strata_[leaf]) {
        if (rel == Relation::ContainedInQ || r.contains_unchecked(pool_[slot].coords.data()))
          out.push_back(pool_[slot]);
      }
    }
    return out;
  }

private:
  void push(const Tuple& t) {
    const std::size_t slot = pool_.size();
    pool_.push_back(t);
    pos_[t.id] = slot;
    if (locate_) {
      const std::size_t leaf = locate_(t.coords.data());
      leaf_of_.push_back(leaf);
      in_leaf_pos_.push_back(strata_[leaf].size());
      strata_[leaf].push_back(slot);
    }
  }

  // Swap-remove keeps the pool dense; strata entries follow the moved slot.
  void remove_at(std::size_t slot) {
    const std::size_t last = pool_.size() - 1;
    if (locate_) {
      unlink(slot);
      if (slot != last) {
        const std::size_t leaf = leaf_of_[last];
        strata_[leaf][in_leaf_pos_[last]] = slot;
        leaf_of_[slot] = leaf;
        in_leaf_pos_[slot] = in_leaf_pos_[last];
      }
      leaf_of_.pop_back();
      in_leaf_pos_.pop_back();
    }
    pos_.erase(pool_[slot].id);
    if (slot != last) {
      pool_[slot] = std::move(pool_[last]);
      pos_[pool_[slot].id] = slot;
    }
    pool_.pop_back();
  }

  void unlink(std::size_t slot) {
    auto& vec = strata_[leaf_of_[slot]];
    const std::size_t p = in_leaf_pos_[slot];
    const std::size_t moved = vec.back();
    vec[p] = moved;
    in_leaf_pos_[moved] = p;
    vec.pop_back();
  }

  void rebuild_strata() {
    strata_.clear();
    leaf_of_.clear();
    in_leaf_pos_.clear();
    if (!locate_) return;
    strata_.assign(leaf_rects_.size(), {});
    leaf_of_.resize(pool_.size());
    in_leaf_pos_.resize(pool_.size());
    for (std::size_t i = 0; i < pool_.size(); ++i) {
      const std::size_t leaf = locate_(pool_[i].coords.data());
      leaf_of_[i] = leaf;
      in_leaf_pos_[i] = strata_[leaf].size();
      strata_[leaf].push_back(i);
    }
  }

  std::size_t m_;
  std::mt19937_64 rng_;
  std::vector<Tuple> pool_;
  std::unordered_map<TupleId, std::size_t> pos_;

  std::vector<Rectangle> leaf_rects_;
  Locator locate_;
  std::vector<std::vector<std::size_t>> strata_;
  std::vector<std::size_t> leaf_of_;
  std::vector<std::size_t> in_leaf_pos_;
};

}  // namespace dpt
