#pragma once

// Shared vocabulary: tuples, rectangles, queries, aggregate kinds and the
// engine configuration.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

namespace dpt {

using TupleId = std::uint64_t;
using Version = std::uint64_t;  // archive state counter, one step per applied event

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Tuple {
  TupleId id = 0;
  std::vector<double> coords;
  double value = 0.0;

  [[nodiscard]] std::size_t dims() const { return coords.size(); }
  friend bool operator==(const Tuple&, const Tuple&) = default;
};

class DimensionMismatch : public std::invalid_argument {
public:
  DimensionMismatch(std::size_t expected, std::size_t got)
    : std::invalid_argument("dimension mismatch: expected " +
                            std::to_string(expected) + ", got " +
                            std::to_string(got)) {}
};

/// Axis-aligned box with half-open sides: a point p is inside iff
/// lo[j] <= p[j] < hi[j] for every j. Infinite bounds are allowed.
struct Rectangle {
  std::vector<double> lo;
  std::vector<double> hi;

  Rectangle() = default;
  Rectangle(std::vector<double> l, std::vector<double> h)
    : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw DimensionMismatch(lo.size(), hi.size());
    for (std::size_t j = 0; j < lo.size(); ++j) {
      if (!(lo[j] <= hi[j]))
        throw std::invalid_argument("rectangle has lo > hi on dimension " +
                                    std::to_string(j));
    }
  }

  static Rectangle universe(std::size_t d) {
    return {std::vector<double>(d, -kInf), std::vector<double>(d, kInf)};
  }

  /// The smallest half-open box holding exactly the single point p.
  static Rectangle point(std::span<const double> p) {
    std::vector<double> l(p.begin(), p.end());
    std::vector<double> h(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) h[j] = std::nextafter(p[j], kInf);
    return {std::move(l), std::move(h)};
  }

  [[nodiscard]] std::size_t dims() const { return lo.size(); }

  [[nodiscard]] bool empty() const {
    for (std::size_t j = 0; j < lo.size(); ++j)
      if (!(lo[j] < hi[j])) return true;
    return false;
  }

  [[nodiscard]] bool contains(std::span<const double> p) const {
    if (p.size() != lo.size()) throw DimensionMismatch(lo.size(), p.size());
    for (std::size_t j = 0; j < p.size(); ++j)
      if (!(lo[j] <= p[j] && p[j] < hi[j])) return false;
    return true;
  }

  /// Unchecked variant for hot loops where dimensions are already known.
  [[nodiscard]] bool contains_unchecked(const double* p) const noexcept {
    for (std::size_t j = 0; j < lo.size(); ++j)
      if (!(lo[j] <= p[j] && p[j] < hi[j])) return false;
    return true;
  }

  [[nodiscard]] bool inside(const Rectangle& outer) const {
    for (std::size_t j = 0; j < lo.size(); ++j)
      if (lo[j] < outer.lo[j] || hi[j] > outer.hi[j]) return false;
    return true;
  }

  [[nodiscard]] Rectangle intersect(const Rectangle& o) const {
    Rectangle r;
    r.lo.resize(dims());
    r.hi.resize(dims());
    for (std::size_t j = 0; j < dims(); ++j) {
      r.lo[j] = std::max(lo[j], o.lo[j]);
      r.hi[j] = std::max(r.lo[j], std::min(hi[j], o.hi[j]));
    }
    return r;
  }

  friend bool operator==(const Rectangle&, const Rectangle&) = default;
};

inline bool contains(const Rectangle& r, const Tuple& t) {
  return r.contains(t.coords);
}

enum class Relation { Disjoint, ContainedInQ, PartialOverlap };

/// Classifies r against query rectangle q.
inline Relation relation(const Rectangle& r, const Rectangle& q) {
  if (r.dims() != q.dims()) throw DimensionMismatch(q.dims(), r.dims());
  if (r.empty()) return Relation::Disjoint;
  bool contained = true;
  for (std::size_t j = 0; j < r.dims(); ++j) {
    if (r.hi[j] <= q.lo[j] || q.hi[j] <= r.lo[j]) return Relation::Disjoint;
    if (r.lo[j] < q.lo[j] || r.hi[j] > q.hi[j]) contained = false;
  }
  return contained ? Relation::ContainedInQ : Relation::PartialOverlap;
}

enum class AggregateKind { Count, Sum, Avg, Min, Max };

inline std::string_view to_string(AggregateKind k) {
  switch (k) {
    case AggregateKind::Count: return "count";
    case AggregateKind::Sum: return "sum";
    case AggregateKind::Avg: return "avg";
    case AggregateKind::Min: return "min";
    case AggregateKind::Max: return "max";
  }
  return "?";
}

inline AggregateKind parse_kind(std::string_view s) {
  if (s == "count" || s == "COUNT") return AggregateKind::Count;
  if (s == "sum" || s == "SUM") return AggregateKind::Sum;
  if (s == "avg" || s == "AVG") return AggregateKind::Avg;
  if (s == "min" || s == "MIN") return AggregateKind::Min;
  if (s == "max" || s == "MAX") return AggregateKind::Max;
  throw std::invalid_argument("unknown aggregate kind: " + std::string(s));
}

struct Query {
  AggregateKind kind = AggregateKind::Sum;
  Rectangle predicate;
  double confidence = 0.95;
};

/// Two-sided normal critical value for the given confidence level.
inline double z_for_confidence(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0))
    throw std::invalid_argument("confidence must lie in (0,1)");
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 0.5 + confidence / 2.0);
}

/// Neumaier-compensated accumulator.
class KahanSum {
public:
  KahanSum() = default;
  explicit KahanSum(double v) : sum_(v) {}

  KahanSum& operator+=(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
    return *this;
  }
  KahanSum& operator-=(double x) noexcept { return *this += -x; }
  KahanSum& operator+=(const KahanSum& o) noexcept {
    *this += o.sum_;
    *this += o.comp_;
    return *this;
  }

  [[nodiscard]] double value() const noexcept { return sum_ + comp_; }
  friend bool operator==(const KahanSum&, const KahanSum&) = default;

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Count, sum and sum of squares of a multiset of aggregate values.
struct Moments {
  double count = 0.0;
  double sum = 0.0;
  double sumsq = 0.0;

  void add(double a, double sign = 1.0) noexcept {
    count += sign;
    sum += sign * a;
    sumsq += sign * a * a;
  }
  Moments& operator+=(const Moments& o) noexcept {
    count += o.count;
    sum += o.sum;
    sumsq += o.sumsq;
    return *this;
  }
  Moments& operator-=(const Moments& o) noexcept {
    count -= o.count;
    sum -= o.sum;
    sumsq -= o.sumsq;
    return *this;
  }
  friend Moments operator-(Moments a, const Moments& b) { return a -= b; }
  friend Moments operator+(Moments a, const Moments& b) { return a += b; }

  [[nodiscard]] std::size_t n() const noexcept {
    return count <= 0.0 ? 0 : static_cast<std::size_t>(std::llround(count));
  }
};

enum class DimensionOrder { RoundRobin, LongestSide };
enum class RepartitionMode { Full, Partial };

struct EngineConfig {
  std::size_t d = 1;
  std::size_t k = 16;         // leaf count
  std::size_t m = 500;        // reservoir half-capacity, pool target is 2m
  double alpha = 0.01;        // sampling rate of the pooled sample
  double catchup_ratio = 0.1; // fraction of |D| absorbed during catch-up
  double beta = 10.0;
  double rho = 2.0;
  double delta = 0.01;
  double confidence = 0.95;
  std::size_t heap_k = 32;
  std::optional<double> value_lo;  // smallest nonzero |a|; derived from pool when unset
  std::optional<double> value_hi;  // largest |a|; derived from pool when unset
  std::optional<std::uint64_t> tau; // manual re-partition period in updates

  AggregateKind focus = AggregateKind::Sum;
  DimensionOrder dimension_order = DimensionOrder::RoundRobin;
  RepartitionMode repartition_mode = RepartitionMode::Full;
  std::optional<std::size_t> psi;  // unset means automatic search
  bool repartition = true;
  bool resample_after_rebuild = true;
  double floor_const = 1.0;        // c in the per-leaf sample floor
  double floor_trigger_factor = 4.0;
  std::size_t catchup_per_event = 0; // 0 absorbs the whole catch-up at build
  std::size_t trigger_cooldown = 0;  // 0 means m pool updates
  std::uint64_t seed = 1;

  [[nodiscard]] double z() const { return z_for_confidence(confidence); }

  /// delta*m expressed as an integer sample count (at least one).
  [[nodiscard]] std::size_t min_query_samples() const {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(delta * static_cast<double>(2 * m))));
  }

  /// Minimum samples per leaf: c * (1/alpha) * ln(pool), clamped so that a
  /// k-leaf plan always fits in half the pool.
  [[nodiscard]] std::size_t leaf_floor(std::size_t pool_size) const {
    const double raw =
        floor_const / alpha * std::log(std::max<double>(2.0, static_cast<double>(pool_size)));
    const std::size_t cap = std::max<std::size_t>(1, pool_size / (2 * std::max<std::size_t>(1, k)));
    const auto f = static_cast<std::size_t>(std::ceil(raw));
    return std::clamp<std::size_t>(f, 1, cap);
  }

  void validate() const {
    auto fail = [](const std::string& what) {
      throw std::invalid_argument("invalid engine config: " + what);
    };
    if (d < 1) fail("d must be >= 1");
    if (k < 1) fail("k must be >= 1");
    if (m < k) fail("m must be >= k");
    if (!(alpha > 0.0 && alpha <= 1.0)) fail("alpha must lie in (0,1]");
    if (!(beta > 1.0)) fail("beta must be > 1");
    if (!(rho > 1.0)) fail("rho must be > 1");
    if (!(delta > 0.0 && delta < 0.5)) fail("delta must lie in (0,1/2)");
    if (!(catchup_ratio > 0.0 && catchup_ratio <= 1.0))
      fail("catchup_ratio must lie in (0,1]");
    if (!(confidence > 0.0 && confidence < 1.0)) fail("confidence must lie in (0,1)");
    if (heap_k < 1) fail("heap_k must be >= 1");
    if (value_lo && value_hi && *value_lo > *value_hi) fail("value_lo > value_hi");
    if (floor_const < 0.0) fail("floor_const must be >= 0");
    if (!(floor_trigger_factor >= 1.0)) fail("floor_trigger_factor must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const EngineConfig& c) {
  j = nlohmann::json{{"d", c.d},
                     {"k", c.k},
                     {"m", c.m},
                     {"alpha", c.alpha},
                     {"catchup_ratio", c.catchup_ratio},
                     {"beta", c.beta},
                     {"rho", c.rho},
                     {"delta", c.delta},
                     {"confidence", c.confidence},
                     {"heap_k", c.heap_k},
                     {"focus", std::string(to_string(c.focus))},
                     {"dimension_order", c.dimension_order == DimensionOrder::RoundRobin
                                             ? "round_robin"
                                             : "longest_side"},
                     {"repartition_mode",
                      c.repartition_mode == RepartitionMode::Full ? "full" : "partial"},
                     {"repartition", c.repartition},
                     {"resample_after_rebuild", c.resample_after_rebuild},
                     {"floor_const", c.floor_const},
                     {"floor_trigger_factor", c.floor_trigger_factor},
                     {"catchup_per_event", c.catchup_per_event},
                     {"trigger_cooldown", c.trigger_cooldown},
                     {"seed", c.seed}};
  if (c.value_lo) j["value_lo"] = *c.value_lo;
  if (c.value_hi) j["value_hi"] = *c.value_hi;
  if (c.tau) j["tau"] = *c.tau;
  if (c.psi) j["psi"] = *c.psi;
}

inline void from_json(const nlohmann::json& j, EngineConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("d", c.d);
  get("k", c.k);
  get("m", c.m);
  get("alpha", c.alpha);
  get("catchup_ratio", c.catchup_ratio);
  get("beta", c.beta);
  get("rho", c.rho);
  get("delta", c.delta);
  get("confidence", c.confidence);
  get("heap_k", c.heap_k);
  get("repartition", c.repartition);
  get("resample_after_rebuild", c.resample_after_rebuild);
  get("floor_const", c.floor_const);
  get("floor_trigger_factor", c.floor_trigger_factor);
  get("catchup_per_event", c.catchup_per_event);
  get("trigger_cooldown", c.trigger_cooldown);
  get("seed", c.seed);
  if (j.contains("value_lo")) c.value_lo = j.at("value_lo").get<double>();
  if (j.contains("value_hi")) c.value_hi = j.at("value_hi").get<double>();
  if (j.contains("tau")) c.tau = j.at("tau").get<std::uint64_t>();
  if (j.contains("psi")) c.psi = j.at("psi").get<std::size_t>();
  if (j.contains("focus")) c.focus = parse_kind(j.at("focus").get<std::string>());
  if (j.contains("dimension_order")) {
    const auto s = j.at("dimension_order").get<std::string>();
    if (s == "round_robin") c.dimension_order = DimensionOrder::RoundRobin;
    else if (s == "longest_side") c.dimension_order = DimensionOrder::LongestSide;
    else throw std::invalid_argument("unknown dimension_order: " + s);
  }
  if (j.contains("repartition_mode")) {
    const auto s = j.at("repartition_mode").get<std::string>();
    if (s == "full") c.repartition_mode = RepartitionMode::Full;
    else if (s == "partial") c.repartition_mode = RepartitionMode::Partial;
    else throw std::invalid_argument("unknown repartition_mode: " + s);
  }
}

/// JSON cannot carry infinities; unbounded sides serialize as null.
inline nlohmann::json bound_to_json(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

inline double bound_from_json(const nlohmann::json& j, double if_null) {
  return j.is_null() ? if_null : j.get<double>();
}

inline void to_json(nlohmann::json& j, const Rectangle& r) {
  auto lo = nlohmann::json::array();
  auto hi = nlohmann::json::array();
  for (double v : r.lo) lo.push_back(bound_to_json(v));
  for (double v : r.hi) hi.push_back(bound_to_json(v));
  j = nlohmann::json{{"lo", lo}, {"hi", hi}};
}

inline void from_json(const nlohmann::json& j, Rectangle& r) {
  std::vector<double> lo, hi;
  for (const auto& v : j.at("lo")) lo.push_back(bound_from_json(v, -kInf));
  for (const auto& v : j.at("hi")) hi.push_back(bound_from_json(v, kInf));
  r = Rectangle(std::move(lo), std::move(hi));
}

}  // namespace dpt
