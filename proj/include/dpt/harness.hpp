#pragma once

// Replay driver, uniform/stratified sampling baselines, synthetic data and
// query generators, and accuracy reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpt/archive.hpp"
#include "dpt/core.hpp"
#include "dpt/engine.hpp"
#include "dpt/estimator.hpp"
#include "dpt/events.hpp"
#include "dpt/reservoir.hpp"

namespace dpt {

/// Common face of the compared engines.
class Synopsis {
public:
  virtual ~Synopsis() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  virtual void initialize() = 0;
  [[nodiscard]] virtual bool initialized() const = 0;
  virtual void on_insert(const Tuple& t) = 0;
  virtual void on_delete(const Tuple& removed) = 0;
  [[nodiscard]] virtual QueryAnswer answer(const Query& q) const = 0;
  [[nodiscard]] virtual std::size_t resident_samples() const = 0;
  [[nodiscard]] virtual nlohmann::json extra() const { return nlohmann::json::object(); }
  /// Current partition, for engines that have one.
  [[nodiscard]] virtual std::optional<nlohmann::json> plan() const { return std::nullopt; }
};

class DptSynopsis : public Synopsis {
public:
  DptSynopsis(const EngineConfig& cfg, const Archive& archive, std::string name = "dpt")
    : engine_(cfg, archive), name_(std::move(name)) {}

  [[nodiscard]] std::string name() const override { return name_; }
  void initialize() override { engine_.initialize(); }
  [[nodiscard]] bool initialized() const override { return engine_.initialized(); }
  void on_insert(const Tuple& t) override { engine_.on_insert(t); }
  void on_delete(const Tuple& removed) override { engine_.on_delete(removed); }
  [[nodiscard]] QueryAnswer answer(const Query& q) const override { return engine_.answer(q); }
  [[nodiscard]] std::size_t resident_samples() const override { return engine_.pool().size(); }
  [[nodiscard]] nlohmann::json extra() const override {
    return {{"status", engine_.status()}, {"rebuilds", engine_.rebuilds()},
            {"warnings", engine_.warnings()}};
  }
  [[nodiscard]] std::optional<nlohmann::json> plan() const override {
    if (!engine_.initialized()) return std::nullopt;
    return engine_.plan_json();
  }

  [[nodiscard]] DptEngine& engine() { return engine_; }
  [[nodiscard]] const DptEngine& engine() const { return engine_; }

private:
  DptEngine engine_;
  std::string name_;
};

namespace detail {

// Sample moments of the selection inside one sample set.
struct SelMoments {
  double s = 0.0;  // sample size
  double c = 0.0;
  double sum = 0.0;
  double sumsq = 0.0;
  double lo = kInf;
  double hi = -kInf;
};

template <class Range>
SelMoments select_moments(const Range& tuples, const Rectangle& q) {
  SelMoments m;
  KahanSum s, s2;
  for (const Tuple& t : tuples) {
    m.s += 1.0;
    if (!q.contains_unchecked(t.coords.data())) continue;
    m.c += 1.0;
    s += t.value;
    s2 += t.value * t.value;
    m.lo = std::min(m.lo, t.value);
    m.hi = std::max(m.hi, t.value);
  }
  m.sum = s.value();
  m.sumsq = s2.value();
  return m;
}

inline Reservoir::RefillSource archive_source(const Archive& a, std::mt19937_64& rng) {
  return [&a, &rng](std::size_t n) {
    const SampleMode mode = n * 4 <= a.size() ? SampleMode::Singleton : SampleMode::Sequential;
    return a.sample_uniform(n, mode, rng);
  };
}

}  // namespace detail

/// Plain uniform reservoir over the whole live set.
class UniformBaseline : public Synopsis {
public:
  /// budget: target resident sample count (the pool holds budget/2..budget).
  UniformBaseline(std::size_t budget, std::uint64_t seed, const Archive& archive)
    : archive_(archive), rng_(seed), pool_(std::max<std::size_t>(1, budget / 2), seed ^ 0x5bd1e995ULL) {}

  [[nodiscard]] std::string name() const override { return "rs"; }
  void initialize() override {
    pool_.refill(archive_.size(), detail::archive_source(archive_, rng_));
    ready_ = true;
  }
  [[nodiscard]] bool initialized() const override { return ready_; }
  void on_insert(const Tuple& t) override {
    if (ready_) pool_.on_insert(t, archive_.size());
  }
  void on_delete(const Tuple& removed) override {
    if (ready_) pool_.on_delete(removed.id, archive_.size(), detail::archive_source(archive_, rng_));
  }
  [[nodiscard]] std::size_t resident_samples() const override { return pool_.size(); }

  [[nodiscard]] QueryAnswer answer(const Query& q) const override {
    const auto m = detail::select_moments(pool_.pool(), q.predicate);
    const double n = static_cast<double>(archive_.size());
    QueryAnswer a;
    if (m.s == 0.0) {
      a.status = AnswerStatus::Unanswerable;
      return a;
    }
    const double z = z_for_confidence(q.confidence);
    switch (q.kind) {
      case AggregateKind::Count:
        a.estimate = n * m.c / m.s;
        a.nu_s = sample_variance_sum(n, m.s, m.c, m.c);
        break;
      case AggregateKind::Sum:
        a.estimate = n * m.sum / m.s;
        a.nu_s = sample_variance_sum(n, m.s, m.sum, m.sumsq);
        break;
      case AggregateKind::Avg:
        if (m.c == 0.0) {
          a.status = AnswerStatus::Unanswerable;
          return a;
        }
        a.estimate = m.sum / m.c;
        a.nu_s = sample_variance_avg(1.0, m.c, m.c, m.sum, m.sumsq);
        break;
      case AggregateKind::Min:
      case AggregateKind::Max:
        if (m.c == 0.0) {
          a.status = AnswerStatus::Unanswerable;
          return a;
        }
        a.estimate = q.kind == AggregateKind::Min ? m.lo : m.hi;
        return a;
    }
    a.ci_half_width = z * std::sqrt(a.nu_s);
    return a;
  }

private:
  const Archive& archive_;
  std::mt19937_64 rng_;
  Reservoir pool_;
  bool ready_ = false;
};

/// Equal-depth strata on the first coordinate, one reservoir per stratum,
/// exact stratum populations.
class StratifiedBaseline : public Synopsis {
public:
  StratifiedBaseline(std::size_t budget, std::size_t strata, std::uint64_t seed,
                     const Archive& archive)
    : archive_(archive), rng_(seed), k_(std::max<std::size_t>(1, strata)), budget_(budget) {}

  [[nodiscard]] std::string name() const override { return "srs"; }

  void initialize() override {
    auto live = archive_.live_tuples();
    std::vector<double> xs;
    xs.reserve(live.size());
    for (const auto& t : live) xs.push_back(t.coords[0]);
    std::sort(xs.begin(), xs.end());
    cuts_.clear();
    for (std::size_t b = 1; b < k_; ++b) {
      const double c = xs[xs.size() * b / k_];
      if (cuts_.empty() || c > cuts_.back()) cuts_.push_back(c);
    }
    const std::size_t per = std::max<std::size_t>(1, budget_ / (2 * (cuts_.size() + 1)));
    strata_.clear();
    population_.assign(cuts_.size() + 1, 0);
    for (std::size_t h = 0; h <= cuts_.size(); ++h) strata_.emplace_back(per, rng_());
    std::vector<std::vector<Tuple>> by(strata_.size());
    for (const auto& t : live) {
      const auto h = stratum_of(t);
      ++population_[h];
      by[h].push_back(std::move(t));
    }
    for (std::size_t h = 0; h < strata_.size(); ++h) {
      std::shuffle(by[h].begin(), by[h].end(), rng_);
      by[h].resize(std::min(by[h].size(), strata_[h].cap()));
      strata_[h].assign(std::move(by[h]));
    }
    ready_ = true;
  }

  [[nodiscard]] bool initialized() const override { return ready_; }

  void on_insert(const Tuple& t) override {
    if (!ready_) return;
    const auto h = stratum_of(t);
    ++population_[h];
    strata_[h].on_insert(t, population_[h]);
  }

  void on_delete(const Tuple& removed) override {
    if (!ready_) return;
    const auto h = stratum_of(removed);
    --population_[h];
    strata_[h].on_delete(removed.id, population_[h], [&](std::size_t n) {
      // Uniform draw from the live members of this stratum.
      std::vector<Tuple> members;
      for (auto& t : archive_.live_tuples())
        if (stratum_of(t) == h) members.push_back(std::move(t));
      std::shuffle(members.begin(), members.end(), rng_);
      members.resize(std::min(n, members.size()));
      return members;
    });
  }

  [[nodiscard]] std::size_t resident_samples() const override {
    std::size_t s = 0;
    for (const auto& r : strata_) s += r.size();
    return s;
  }

  [[nodiscard]] QueryAnswer answer(const Query& q) const override {
    QueryAnswer a;
    double est_c = 0.0, est_sum = 0.0, var_c = 0.0, var_sum = 0.0;
    double lo = kInf, hi = -kInf;
    std::vector<std::pair<double, detail::SelMoments>> parts;
    for (std::size_t h = 0; h < strata_.size(); ++h) {
      const auto m = detail::select_moments(strata_[h].pool(), q.predicate);
      if (m.s == 0.0) continue;
      const double n = static_cast<double>(population_[h]);
      est_c += n * m.c / m.s;
      est_sum += n * m.sum / m.s;
      var_c += sample_variance_sum(n, m.s, m.c, m.c);
      var_sum += sample_variance_sum(n, m.s, m.sum, m.sumsq);
      lo = std::min(lo, m.lo);
      hi = std::max(hi, m.hi);
      parts.emplace_back(n, m);
    }
    const double z = z_for_confidence(q.confidence);
    switch (q.kind) {
      case AggregateKind::Count:
        a.estimate = est_c;
        a.nu_s = var_c;
        break;
      case AggregateKind::Sum:
        a.estimate = est_sum;
        a.nu_s = var_sum;
        break;
      case AggregateKind::Avg: {
        if (!(est_c > 0.0)) {
          a.status = AnswerStatus::Unanswerable;
          return a;
        }
        a.estimate = est_sum / est_c;
        for (const auto& [n, m] : parts) {
          if (m.c == 0.0) continue;
          const double w = n * m.c / m.s / est_c;
          a.nu_s += sample_variance_avg(w, m.s, m.c, m.sum, m.sumsq);
        }
        break;
      }
      case AggregateKind::Min:
      case AggregateKind::Max:
        if (std::isinf(lo)) {
          a.status = AnswerStatus::Unanswerable;
          return a;
        }
        a.estimate = q.kind == AggregateKind::Min ? lo : hi;
        return a;
    }
    a.ci_half_width = z * std::sqrt(a.nu_s);
    return a;
  }

private:
  std::size_t stratum_of(const Tuple& t) const {
    return static_cast<std::size_t>(std::upper_bound(cuts_.begin(), cuts_.end(), t.coords[0]) -
                                    cuts_.begin());
  }

  const Archive& archive_;
  mutable std::mt19937_64 rng_;
  std::size_t k_;
  std::size_t budget_;
  bool ready_ = false;
  std::vector<double> cuts_;
  std::vector<Reservoir> strata_;
  std::vector<std::size_t> population_;
};

// ---------------------------------------------------------------- data

enum class DataProfile { Uniform, Skewed, SortedArrival };

inline DataProfile parse_profile(std::string_view s) {
  if (s == "uniform") return DataProfile::Uniform;
  if (s == "skewed") return DataProfile::Skewed;
  if (s == "sorted" || s == "sorted_arrival" || s == "sorted-arrival") return DataProfile::SortedArrival;
  throw std::invalid_argument("unknown data profile: " + std::string(s));
}

struct DatasetOptions {
  /// After each insert, delete a random live tuple with this probability.
  double delete_fraction = 0.0;
  TupleId first_id = 1;
};

/// One synthetic tuple. Uniform and SortedArrival: coordinates and values
/// uniform on [0,1) and [1,10). Skewed: first coordinate concentrated near 0, lognormal
/// values whose scale grows along it.
template <class Rng>
Tuple synthetic_tuple(DataProfile profile, std::size_t d, TupleId id, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tuple t{id, std::vector<double>(d), 0.0};
  if (profile == DataProfile::Uniform || profile == DataProfile::SortedArrival) {
    for (auto& x : t.coords) x = u(rng);
    t.value = 1.0 + 9.0 * u(rng);
    return t;
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double r = u(rng);
    t.coords[j] = j == 0 ? r * r : r;
  }
  std::normal_distribution<double> z(0.0, 1.0);
  t.value = std::exp(0.5 + 3.0 * t.coords[0] + 1.25 * z(rng));
  return t;
}

/// Insert stream of n tuples (plus interleaved deletes when requested).
/// SortedArrival uses uniform tuples inserted in order of the first
/// coordinate, so the skew is in where arrivals land, not in the values.
inline std::vector<Event> generate_dataset(std::uint64_t seed, DataProfile profile, std::size_t n,
                                           std::size_t d, DatasetOptions opt = {}) {
  if (d < 1) throw std::invalid_argument("d must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Tuple> tuples;
  tuples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) tuples.push_back(synthetic_tuple(profile, d, opt.first_id + i, rng));
  if (profile == DataProfile::SortedArrival) {
    std::stable_sort(tuples.begin(), tuples.end(),
                     [](const Tuple& a, const Tuple& b) { return a.coords < b.coords; });
    for (std::size_t i = 0; i < n; ++i) tuples[i].id = opt.first_id + i;
  }
  std::vector<Event> out;
  out.reserve(n);
  std::vector<TupleId> live;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& t : tuples) {
    live.push_back(t.id);
    out.emplace_back(InsertEvent{std::move(t)});
    if (opt.delete_fraction > 0.0 && live.size() > 1 && u(rng) < opt.delete_fraction) {
      std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
      const std::size_t i = pick(rng);
      out.emplace_back(DeleteEvent{live[i]});
      live[i] = live.back();
      live.pop_back();
    }
  }
  return out;
}

/// n_queries rectangles with corners uniform over `domain`; kinds cycle
/// COUNT, SUM, AVG.
inline std::vector<Query> generate_workload(std::uint64_t seed, const Rectangle& domain,
                                            std::size_t n_queries, double confidence = 0.95) {
  std::mt19937_64 rng(seed);
  const AggregateKind kinds[3] = {AggregateKind::Count, AggregateKind::Sum, AggregateKind::Avg};
  std::vector<Query> out;
  out.reserve(n_queries);
  const std::size_t d = domain.dims();
  for (std::size_t i = 0; i < n_queries; ++i) {
    std::vector<double> lo(d), hi(d);
    for (std::size_t j = 0; j < d; ++j) {
      std::uniform_real_distribution<double> u(domain.lo[j], domain.hi[j]);
      double a = u(rng), b = u(rng);
      if (a > b) std::swap(a, b);
      lo[j] = a;
      hi[j] = b;
    }
    out.push_back(Query{kinds[i % 3], Rectangle(std::move(lo), std::move(hi)), confidence});
  }
  return out;
}

/// Bounding box of the live tuples, closed on the upper side.
inline Rectangle data_domain(const Archive& archive) {
  const auto live = archive.live_tuples();
  if (live.empty()) throw std::invalid_argument("empty archive has no domain");
  const std::size_t d = live.front().dims();
  std::vector<double> lo(d, kInf), hi(d, -kInf);
  for (const auto& t : live)
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], t.coords[j]);
      hi[j] = std::max(hi[j], t.coords[j]);
    }
  for (auto& h : hi) h = std::nextafter(h, kInf);
  return {lo, hi};
}

/// The generated workload, for the archive state after `stream`.
inline std::vector<Query> generate_workload(std::uint64_t seed, const std::vector<Event>& stream,
                                            std::size_t n_queries, double confidence = 0.95) {
  Archive a;
  for (const auto& e : stream) a.apply(e);
  return generate_workload(seed, data_domain(a), n_queries, confidence);
}

// ---------------------------------------------------------------- reports

/// Nearest-rank percentile of an unsorted sample; q in [0,1].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct QueryRecord {
  std::size_t index = 0;       // position among the stream's queries
  AggregateKind kind = AggregateKind::Sum;
  std::optional<double> truth; // unset when the aggregate is undefined (empty AVG)
  std::optional<double> estimate;
  double ci = 0.0;
  bool exact = false;
  std::optional<double> relative_error;
  bool covered = false;
  double latency_us = 0.0;
};

struct ErrorSummary {
  std::size_t count = 0;
  double median = 0.0;
  double p95 = 0.0;
  double mean = 0.0;
};

inline ErrorSummary summarize(const std::vector<double>& errs) {
  ErrorSummary s;
  s.count = errs.size();
  if (errs.empty()) return s;
  s.median = median(errs);
  s.p95 = percentile(errs, 0.95);
  double t = 0.0;
  for (double e : errs) t += e;
  s.mean = t / static_cast<double>(errs.size());
  return s;
}

inline void to_json(nlohmann::json& j, const ErrorSummary& s) {
  j = nlohmann::json{{"count", s.count}, {"median", s.median}, {"p95", s.p95}, {"mean", s.mean}};
}

struct EngineReport {
  std::string engine;
  std::size_t queries = 0;
  std::size_t answered = 0;
  std::size_t unanswerable = 0;
  std::size_t zero_truth = 0;       // truth == 0: no relative error
  std::size_t undefined_truth = 0;  // empty selection for AVG/MIN/MAX
  ErrorSummary overall;
  std::map<std::string, ErrorSummary> by_kind;
  double coverage = 0.0;  // over answered queries with defined truth
  std::size_t resident_samples = 0;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<QueryRecord> records;
  std::optional<double> latency_mean_us;
  std::optional<double> latency_p95_us;
  std::optional<double> update_events_per_sec;
  std::optional<nlohmann::json> plan;  // final partition, when asked for
};

struct RunOptions {
  bool timing = false;
  bool per_query = false;  // include the per-query records in JSON
  bool plan = false;       // keep each engine's final partition
};

inline nlohmann::json report_to_json(const EngineReport& r, const RunOptions& opt) {
  nlohmann::json by_kind = nlohmann::json::object();
  for (const auto& [k, s] : r.by_kind) by_kind[k] = s;
  nlohmann::json j{{"engine", r.engine},
                   {"queries", r.queries},
                   {"answered", r.answered},
                   {"unanswerable", r.unanswerable},
                   {"zero_truth", r.zero_truth},
                   {"undefined_truth", r.undefined_truth},
                   {"relative_error", r.overall},
                   {"relative_error_by_kind", by_kind},
                   {"ci_coverage", r.coverage},
                   {"resident_samples", r.resident_samples},
                   {"engine_state", r.extra}};
  if (opt.timing) {
    j["timing"] = {{"latency_mean_us", r.latency_mean_us.value_or(0.0)},
                   {"latency_p95_us", r.latency_p95_us.value_or(0.0)},
                   {"update_events_per_sec", r.update_events_per_sec.value_or(0.0)}};
  }
  if (opt.per_query) {
    auto arr = nlohmann::json::array();
    for (const auto& q : r.records) {
      nlohmann::json e{{"index", q.index},
                       {"kind", std::string(to_string(q.kind))},
                       {"truth", q.truth ? nlohmann::json(*q.truth) : nlohmann::json(nullptr)},
                       {"estimate", q.estimate ? nlohmann::json(*q.estimate) : nlohmann::json(nullptr)},
                       {"ci", q.ci},
                       {"exact", q.exact},
                       {"relative_error", q.relative_error ? nlohmann::json(*q.relative_error)
                                                           : nlohmann::json(nullptr)},
                       {"covered", q.covered}};
      if (opt.timing) e["latency_us"] = q.latency_us;
      arr.push_back(std::move(e));
    }
    j["per_query"] = std::move(arr);
  }
  return j;
}

enum class EngineKind { Dpt, Rs, Srs, DptFrozen };

inline EngineKind parse_engine(std::string_view s) {
  if (s == "dpt") return EngineKind::Dpt;
  if (s == "rs") return EngineKind::Rs;
  if (s == "srs") return EngineKind::Srs;
  if (s == "dpt-frozen" || s == "frozen") return EngineKind::DptFrozen;
  throw std::invalid_argument("unknown engine: " + std::string(s));
}

/// Engines get the same sample budget: the DPT pool capacity 2m.
inline std::unique_ptr<Synopsis> make_synopsis(EngineKind kind, const EngineConfig& cfg,
                                               const Archive& archive) {
  switch (kind) {
    case EngineKind::Dpt: return std::make_unique<DptSynopsis>(cfg, archive);
    case EngineKind::DptFrozen: {
      EngineConfig frozen = cfg;
      frozen.repartition = false;
      return std::make_unique<DptSynopsis>(frozen, archive, "dpt-frozen");
    }
    case EngineKind::Rs: return std::make_unique<UniformBaseline>(2 * cfg.m, cfg.seed + 101, archive);
    case EngineKind::Srs:
      return std::make_unique<StratifiedBaseline>(2 * cfg.m, cfg.k, cfg.seed + 202, archive);
  }
  throw std::invalid_argument("unknown engine kind");
}

namespace detail {

inline void finish_report(EngineReport& r) {
  std::vector<double> all;
  std::map<std::string, std::vector<double>> per;
  std::size_t cov = 0, cov_n = 0;
  std::vector<double> lat;
  for (const auto& q : r.records) {
    lat.push_back(q.latency_us);
    if (!q.estimate) continue;
    if (!q.truth) continue;
    ++cov_n;
    if (q.covered) ++cov;
    if (q.relative_error) {
      all.push_back(*q.relative_error);
      per[std::string(to_string(q.kind))].push_back(*q.relative_error);
    }
  }
  r.overall = summarize(all);
  for (auto& [k, v] : per) r.by_kind[k] = summarize(v);
  r.coverage = cov_n ? static_cast<double>(cov) / static_cast<double>(cov_n) : 0.0;
  if (!lat.empty()) {
    double t = 0.0;
    for (double x : lat) t += x;
    r.latency_mean_us = t / static_cast<double>(lat.size());
    r.latency_p95_us = percentile(lat, 0.95);
  }
}

}  // namespace detail

/// Replays `stream` once through the archive and every engine. Engines are
/// initialized just before the first query.
inline std::vector<EngineReport> run(const std::vector<Event>& stream, const EngineConfig& cfg,
                                     const std::vector<EngineKind>& engines, RunOptions opt = {}) {
  using Clock = std::chrono::steady_clock;
  Archive archive;
  std::vector<std::unique_ptr<Synopsis>> syn;
  for (auto k : engines) syn.push_back(make_synopsis(k, cfg, archive));
  std::vector<EngineReport> reports(syn.size());
  std::vector<double> update_seconds(syn.size(), 0.0);
  std::vector<std::size_t> update_events(syn.size(), 0);
  for (std::size_t i = 0; i < syn.size(); ++i) reports[i].engine = syn[i]->name();

  std::size_t query_index = 0;
  for (const auto& e : stream) {
    if (const auto* qe = std::get_if<QueryEvent>(&e)) {
      const Query& q = qe->query;
      if (!syn.empty() && !syn.front()->initialized())
        for (auto& s : syn) s->initialize();
      std::optional<double> truth;
      try {
        truth = archive.ground_truth(q);
      } catch (const std::domain_error&) {
      }
      for (std::size_t i = 0; i < syn.size(); ++i) {
        QueryRecord rec;
        rec.index = query_index;
        rec.kind = q.kind;
        rec.truth = truth;
        const auto t0 = Clock::now();
        const QueryAnswer a = syn[i]->answer(q);
        rec.latency_us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
        auto& rep = reports[i];
        ++rep.queries;
        if (!truth) ++rep.undefined_truth;
        if (a.status == AnswerStatus::Unanswerable) {
          ++rep.unanswerable;
        } else {
          ++rep.answered;
          rec.estimate = a.estimate;
          rec.ci = a.ci_half_width;
          rec.exact = a.exact;
          if (truth) {
            const double err = std::abs(*truth - a.estimate);
            rec.covered = err <= a.ci_half_width + 1e-9 * std::max(1.0, std::abs(*truth));
            if (*truth != 0.0) rec.relative_error = err / std::abs(*truth);
            else ++rep.zero_truth;
          }
        }
        rep.records.push_back(std::move(rec));
      }
      ++query_index;
      continue;
    }
    Tuple removed;
    const bool is_delete = std::holds_alternative<DeleteEvent>(e);
    archive.apply(e, is_delete ? &removed : nullptr);
    for (std::size_t i = 0; i < syn.size(); ++i) {
      if (!syn[i]->initialized()) continue;
      const auto t0 = Clock::now();
      if (is_delete) syn[i]->on_delete(removed);
      else syn[i]->on_insert(std::get<InsertEvent>(e).tuple);
      update_seconds[i] += std::chrono::duration<double>(Clock::now() - t0).count();
      ++update_events[i];
    }
  }
  for (std::size_t i = 0; i < syn.size(); ++i) {
    auto& r = reports[i];
    detail::finish_report(r);
    r.resident_samples = syn[i]->resident_samples();
    r.extra = syn[i]->extra();
    if (opt.plan) r.plan = syn[i]->plan();
    if (opt.timing && update_seconds[i] > 0.0)
      r.update_events_per_sec = static_cast<double>(update_events[i]) / update_seconds[i];
    if (!opt.timing) {
      r.latency_mean_us.reset();
      r.latency_p95_us.reset();
      for (auto& q : r.records) q.latency_us = 0.0;
    }
  }
  return reports;
}

inline nlohmann::json reports_to_json(const std::vector<EngineReport>& reports, const EngineConfig& cfg,
                                      const RunOptions& opt) {
  auto arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r, opt));
  return {{"schema_version", 1}, {"config", cfg}, {"engines", arr}};
}

}  // namespace dpt
