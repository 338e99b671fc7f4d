#pragma once

// The authoritative dataset: an append-only record log with tombstones, so
// any past version can be sampled while new events keep arriving.

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dpt/core.hpp"
#include "dpt/events.hpp"

namespace dpt {

enum class SampleMode { Sequential, Singleton };

class Archive {
public:
  static constexpr Version kNever = std::numeric_limits<Version>::max();

  struct Record {
    Tuple tuple;
    Version inserted_at = 0;  // version produced by the insert
    Version deleted_at = kNever;

    [[nodiscard]] bool live_at(Version v) const noexcept {
      return inserted_at <= v && v < deleted_at;
    }
  };

  Archive() { n_at_.push_back(0); }
  Archive(const Archive&) = delete;
  Archive& operator=(const Archive&) = delete;

  /// Applies one event. Returns the new version. For deletes, the removed
  /// tuple is written to *removed when given.
  Version insert(const Tuple& t) {
    std::unique_lock lock(mu_);
    if (dims_ == 0) dims_ = t.dims();
    if (t.dims() != dims_) throw DimensionMismatch(dims_, t.dims());
    if (index_.contains(t.id))
      throw std::invalid_argument("duplicate insert of live id " + std::to_string(t.id));
    const Version v = ++version_;
    const std::size_t rec = records_.size();
    records_.push_back(Record{t, v, kNever});
    index_.emplace(t.id, Slot{rec, live_.size()});
    live_.push_back(rec);
    n_at_.push_back(live_.size());
    return v;
  }

  Version erase(TupleId id, Tuple* removed = nullptr) {
    std::unique_lock lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end())
      throw std::invalid_argument("delete of non-live id " + std::to_string(id));
    const Version v = ++version_;
    const Slot s = it->second;
    records_[s.record].deleted_at = v;
    if (removed) *removed = records_[s.record].tuple;
    const std::size_t last = live_.back();
    live_[s.live_pos] = last;
    index_[records_[last].tuple.id].live_pos = s.live_pos;
    live_.pop_back();
    index_.erase(it);
    n_at_.push_back(live_.size());
    return v;
  }

  /// Queries are recorded only by the driver; the archive ignores them.
  Version apply(const Event& e, Tuple* removed = nullptr) {
    if (const auto* ins = std::get_if<InsertEvent>(&e)) return insert(ins->tuple);
    if (const auto* del = std::get_if<DeleteEvent>(&e)) return erase(del->id, removed);
    return version();
  }

  [[nodiscard]] Version version() const {
    std::shared_lock lock(mu_);
    return version_;
  }
  [[nodiscard]] Version snapshot() const { return version(); }

  [[nodiscard]] std::size_t size() const {
    std::shared_lock lock(mu_);
    return live_.size();
  }
  [[nodiscard]] std::size_t size_at(Version v) const {
    std::shared_lock lock(mu_);
    return n_at_.at(v);
  }
  [[nodiscard]] std::size_t dims() const {
    std::shared_lock lock(mu_);
    return dims_;
  }

  [[nodiscard]] bool is_live(TupleId id) const {
    std::shared_lock lock(mu_);
    return index_.contains(id);
  }

  [[nodiscard]] std::optional<Tuple> find(TupleId id) const {
    std::shared_lock lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return records_[it->second.record].tuple;
  }

  /// Live tuples in unspecified order.
  [[nodiscard]] std::vector<Tuple> live_tuples() const {
    std::shared_lock lock(mu_);
    std::vector<Tuple> out;
    out.reserve(live_.size());
    for (std::size_t r : live_) out.push_back(records_[r].tuple);
    return out;
  }

  /// n tuples uniformly without replacement from the live set at version
  /// `at` (default: now).
  template <class Rng>
  std::vector<Tuple> sample_uniform(std::size_t n, SampleMode mode, Rng& rng,
                                    std::optional<Version> at = std::nullopt) const {
    std::shared_lock lock(mu_);
    const Version v = at.value_or(version_);
    if (v > version_) throw std::invalid_argument("snapshot version from the future");
    const std::size_t pop = n_at_[v];
    if (n > pop)
      throw std::invalid_argument("sample of " + std::to_string(n) + " exceeds population " +
                                  std::to_string(pop));
    std::vector<Tuple> out;
    out.reserve(n);
    if (n == 0) return out;
    const std::size_t span = records_prefix(v);
    if (mode == SampleMode::Sequential) {
      // Selection sampling over the log: keep each live record with
      // probability needed/remaining.
      std::size_t needed = n, remaining = pop;
      for (std::size_t r = 0; r < span && needed > 0; ++r) {
        if (!records_[r].live_at(v)) continue;
        std::uniform_int_distribution<std::size_t> pick(0, remaining - 1);
        if (pick(rng) < needed) {
          out.push_back(records_[r].tuple);
          --needed;
        }
        --remaining;
      }
    } else {
      std::unordered_set<std::size_t> seen;
      std::uniform_int_distribution<std::size_t> probe(0, span - 1);
      while (out.size() < n) {
        const std::size_t r = probe(rng);
        if (!records_[r].live_at(v)) continue;
        if (!seen.insert(r).second) continue;
        out.push_back(records_[r].tuple);
      }
    }
    return out;
  }

  /// Exact aggregate over the live set. Only harnesses and tests call this.
  [[nodiscard]] double ground_truth(const Query& q) const {
    std::shared_lock lock(mu_);
    if (dims_ != 0 && q.predicate.dims() != dims_) throw DimensionMismatch(dims_, q.predicate.dims());
    KahanSum sum;
    std::size_t count = 0;
    double lo = kInf, hi = -kInf;
    for (std::size_t r : live_) {
      const Tuple& t = records_[r].tuple;
      if (!q.predicate.contains_unchecked(t.coords.data())) continue;
      ++count;
      sum += t.value;
      lo = std::min(lo, t.value);
      hi = std::max(hi, t.value);
    }
    switch (q.kind) {
      case AggregateKind::Count: return static_cast<double>(count);
      case AggregateKind::Sum: return sum.value();
      case AggregateKind::Avg:
        if (count == 0) throw std::domain_error("AVG over an empty selection");
        return sum.value() / static_cast<double>(count);
      case AggregateKind::Min:
        if (count == 0) throw std::domain_error("MIN over an empty selection");
        return lo;
      case AggregateKind::Max:
        if (count == 0) throw std::domain_error("MAX over an empty selection");
        return hi;
    }
    return 0.0;
  }

  /// The applied insert/delete events in order, reconstructed from the log.
  [[nodiscard]] std::vector<Event> events() const {
    std::shared_lock lock(mu_);
    std::vector<std::pair<Version, Event>> tagged;
    for (const auto& rec : records_) {
      tagged.emplace_back(rec.inserted_at, InsertEvent{rec.tuple});
      if (rec.deleted_at != kNever) tagged.emplace_back(rec.deleted_at, DeleteEvent{rec.tuple.id});
    }
    std::sort(tagged.begin(), tagged.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Event> out;
    out.reserve(tagged.size());
    for (auto& [v, e] : tagged) out.push_back(std::move(e));
    return out;
  }

  /// Draws the live-at-snapshot population in uniformly random order without
  /// replacement. Records deleted after the snapshot still count, so the
  /// draws describe the population frozen at that version.
  class SnapshotSampler {
  public:
    SnapshotSampler(const Archive& a, Version v, std::uint64_t seed)
      : archive_(&a), version_(v), rng_(seed) {
      std::shared_lock lock(a.mu_);
      span_ = a.records_prefix(v);
      population_ = a.n_at_[v];
    }

    [[nodiscard]] Version version() const { return version_; }
    [[nodiscard]] std::size_t population() const { return population_; }
    [[nodiscard]] std::size_t drawn() const { return drawn_; }
    [[nodiscard]] bool exhausted() const { return drawn_ >= population_; }

    std::optional<Tuple> next() {
      if (exhausted()) return std::nullopt;
      std::shared_lock lock(archive_->mu_);
      while (cursor_ < span_) {
        // Lazy Fisher-Yates: only displaced positions are stored.
        std::uniform_int_distribution<std::size_t> pick(cursor_, span_ - 1);
        const std::size_t j = pick(rng_);
        const std::size_t at_j = slot(j);
        swap_out(j, slot(cursor_));
        ++cursor_;
        const Record& rec = archive_->records_[at_j];
        if (rec.live_at(version_)) {
          ++drawn_;
          return rec.tuple;
        }
      }
      return std::nullopt;
    }

  private:
    std::size_t slot(std::size_t i) const {
      auto it = moved_.find(i);
      return it == moved_.end() ? i : it->second;
    }
    void swap_out(std::size_t j, std::size_t value_at_cursor) {
      moved_[j] = value_at_cursor;
      moved_.erase(cursor_);
    }

    const Archive* archive_;
    Version version_;
    std::mt19937_64 rng_;
    std::size_t span_ = 0;
    std::size_t population_ = 0;
    std::size_t cursor_ = 0;
    std::size_t drawn_ = 0;
    std::unordered_map<std::size_t, std::size_t> moved_;
  };

private:
  struct Slot {
    std::size_t record;
    std::size_t live_pos;
  };

  // Records inserted at or before v form a prefix of the log.
  std::size_t records_prefix(Version v) const {
    auto it = std::upper_bound(records_.begin(), records_.end(), v,
                               [](Version x, const Record& r) { return x < r.inserted_at; });
    return static_cast<std::size_t>(it - records_.begin());
  }

  mutable std::shared_mutex mu_;
  std::size_t dims_ = 0;
  Version version_ = 0;
  std::vector<Record> records_;
  std::unordered_map<TupleId, Slot> index_;
  std::vector<std::size_t> live_;
  std::vector<std::size_t> n_at_;  // live count after each version
};

}  // namespace dpt
