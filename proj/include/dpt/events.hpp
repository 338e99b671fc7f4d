#pragma once

// Stream events and their JSONL encoding.

#include <istream>
#include <ostream>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "dpt/core.hpp"

namespace dpt {

struct InsertEvent {
  Tuple tuple;
};
struct DeleteEvent {
  TupleId id = 0;
};
struct QueryEvent {
  Query query;
};

using Event = std::variant<InsertEvent, DeleteEvent, QueryEvent>;

class ParseError : public std::runtime_error {
public:
  ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

inline std::vector<double> json_coords(const nlohmann::json& arr, double null_as) {
  if (!arr.is_array()) throw std::invalid_argument("expected an array of numbers");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) out.push_back(bound_from_json(v, null_as));
  return out;
}

inline Event event_from_json(const nlohmann::json& j) {
  const auto op = j.at("op").get<std::string>();
  if (op == "insert") {
    InsertEvent e;
    e.tuple.id = j.at("id").get<TupleId>();
    e.tuple.coords = json_coords(j.at("coords"), 0.0);
    e.tuple.value = j.at("value").get<double>();
    if (e.tuple.coords.empty()) throw std::invalid_argument("insert needs at least one coordinate");
    return e;
  }
  if (op == "delete") return DeleteEvent{j.at("id").get<TupleId>()};
  if (op == "query") {
    QueryEvent e;
    e.query.kind = parse_kind(j.at("kind").get<std::string>());
    e.query.predicate = Rectangle(json_coords(j.at("lo"), -kInf), json_coords(j.at("hi"), kInf));
    if (j.contains("confidence")) e.query.confidence = j.at("confidence").get<double>();
    return e;
  }
  throw std::invalid_argument("unknown op: " + op);
}

inline nlohmann::json event_to_json(const Event& ev) {
  return std::visit(
      [](const auto& e) -> nlohmann::json {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, InsertEvent>) {
          return {{"op", "insert"}, {"id", e.tuple.id}, {"coords", e.tuple.coords},
                  {"value", e.tuple.value}};
        } else if constexpr (std::is_same_v<T, DeleteEvent>) {
          return {{"op", "delete"}, {"id", e.id}};
        } else {
          nlohmann::json r = e.query.predicate;
          return {{"op", "query"},
                  {"kind", std::string(to_string(e.query.kind))},
                  {"lo", r["lo"]},
                  {"hi", r["hi"]},
                  {"confidence", e.query.confidence}};
        }
      },
      ev);
}

inline Event parse_event_line(const std::string& line, std::size_t line_no) {
  try {
    return event_from_json(nlohmann::json::parse(line));
  } catch (const std::exception& ex) {
    throw ParseError(line_no, ex.what());
  }
}

/// Reads a whole JSONL stream. Blank lines are skipped; anything else that
/// fails to parse aborts with the offending line number.
inline std::vector<Event> read_events(std::istream& in) {
  std::vector<Event> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_event_line(line, no));
  }
  return out;
}

inline void write_events(std::ostream& out, const std::vector<Event>& events) {
  for (const auto& e : events) out << event_to_json(e).dump() << '\n';
}

}  // namespace dpt
