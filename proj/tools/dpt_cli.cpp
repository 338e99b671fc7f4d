// Command-line front end: replay streams, generate data and workloads,
// convert CSV files to event streams, inspect engine state.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dpt/dpt.hpp"

using namespace dpt;

namespace {

std::vector<Event> load_stream(const std::string& path) {
  if (path == "-") return read_events(std::cin);
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stream " + path);
  return read_events(in);
}

EngineConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  EngineConfig cfg = nlohmann::json::parse(in).get<EngineConfig>();
  cfg.validate();
  return cfg;
}

// Writes to `path`, or stdout for "-" / empty.
template <class F>
void with_output(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write(out);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

std::size_t stream_dims(const std::vector<Event>& es) {
  for (const auto& e : es)
    if (const auto* ins = std::get_if<InsertEvent>(&e)) return ins->tuple.dims();
  throw std::invalid_argument("stream has no inserts");
}

std::string status_line(const std::string& name, const nlohmann::json& st) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: phase=%s h=%.0f/%.0f max_error=%.6g rebuilds=%zu leaves=%zu pool=%zu",
                name.c_str(), st.at("phase").get<std::string>().c_str(), st.at("h").get<double>(),
                st.at("target").get<double>(), st.at("max_error").get<double>(),
                st.at("rebuilds").get<std::size_t>(), st.at("leaves").get<std::size_t>(),
                st.at("pool").get<std::size_t>());
  return buf;
}

// One CSV record; double quotes group, "" escapes a quote.
std::vector<std::string> csv_fields(const std::string& line, char delim) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

double parse_number(const std::string& s, std::size_t line, const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (s.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, "column " + col + ": not a number: '" + s + "'");
  }
}

// ------------------------------------------------------------------ run

struct RunArgs {
  std::string stream, config, engines = "dpt,rs,srs", out, dump_plan;
  bool timing = false, per_query = false, quiet = false;
};

int cmd_run(const RunArgs& a) {
  const auto stream = load_stream(a.stream);
  EngineConfig cfg = load_config(a.config);
  cfg.d = stream_dims(stream);
  std::vector<EngineKind> kinds;
  for (const auto& e : split(a.engines, ',')) kinds.push_back(parse_engine(e));
  if (kinds.empty()) throw std::invalid_argument("no engines given");
  RunOptions opt;
  opt.timing = a.timing;
  opt.per_query = a.per_query;
  opt.plan = !a.dump_plan.empty();
  const auto reports = run(stream, cfg, kinds, opt);
  const auto json = reports_to_json(reports, cfg, opt);
  with_output(a.out, [&](std::ostream& o) { o << json.dump(2) << '\n'; });
  if (opt.plan) {
    nlohmann::json plans = nlohmann::json::object();
    for (const auto& r : reports)
      if (r.plan) plans[r.engine] = *r.plan;
    with_output(a.dump_plan, [&](std::ostream& o) { o << plans.dump(2) << '\n'; });
  }
  if (!a.quiet) {
    for (const auto& r : reports) {
      std::fprintf(stderr, "%s: %zu queries, median %.4g, p95 %.4g, coverage %.3f\n", r.engine.c_str(),
                   r.queries, r.overall.median, r.overall.p95, r.coverage);
      if (r.extra.contains("status")) std::fprintf(stderr, "  %s\n", status_line(r.engine, r.extra["status"]).c_str());
    }
  }
  return 0;
}

// --------------------------------------------------------------- status

struct StatusArgs {
  std::string stream, config;
  std::size_t init_after = 0;
  bool json = false;
};

// Replays the updates of a stream into one engine and reports its state.
int cmd_status(const StatusArgs& a) {
  const auto stream = load_stream(a.stream);
  EngineConfig cfg = load_config(a.config);
  cfg.d = stream_dims(stream);
  Archive archive;
  DptEngine engine(cfg, archive);
  std::size_t applied = 0;
  for (const auto& e : stream) {
    if (std::holds_alternative<QueryEvent>(e)) continue;
    Tuple removed;
    const bool del = std::holds_alternative<DeleteEvent>(e);
    archive.apply(e, del ? &removed : nullptr);
    ++applied;
    if (!engine.initialized()) {
      if (a.init_after > 0 && applied >= a.init_after && archive.size() >= cfg.k) engine.initialize();
      continue;
    }
    if (del) engine.on_delete(removed);
    else engine.on_insert(std::get<InsertEvent>(e).tuple);
  }
  if (!engine.initialized()) engine.initialize();
  const nlohmann::json st = engine.status();
  if (a.json) {
    nlohmann::json j{{"status", st}, {"rebuilds", engine.rebuilds()}, {"archive_size", archive.size()}};
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << status_line("dpt", st) << '\n';
  }
  return 0;
}

// ------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string profile = "uniform", out;
  std::size_t n = 10000, d = 1;
  std::uint64_t seed = 1;
  double delete_fraction = 0.0;
};

int cmd_gen_data(const GenDataArgs& a) {
  DatasetOptions opt;
  opt.delete_fraction = a.delete_fraction;
  const auto events = generate_dataset(a.seed, parse_profile(a.profile), a.n, a.d, opt);
  with_output(a.out, [&](std::ostream& o) { write_events(o, events); });
  return 0;
}

// ---------------------------------------------------------- gen-queries

struct GenQueriesArgs {
  std::string stream, out;
  std::size_t n = 2000, d = 1;
  std::uint64_t seed = 1;
  double confidence = 0.95;
};

// Queries over the data's bounding box when a stream is given, else over
// the unit cube.
int cmd_gen_queries(const GenQueriesArgs& a) {
  std::vector<Query> qs;
  if (!a.stream.empty()) {
    qs = generate_workload(a.seed, load_stream(a.stream), a.n, a.confidence);
  } else {
    const Rectangle unit(std::vector<double>(a.d, 0.0), std::vector<double>(a.d, 1.0));
    qs = generate_workload(a.seed, unit, a.n, a.confidence);
  }
  std::vector<Event> events;
  events.reserve(qs.size());
  for (auto& q : qs) events.emplace_back(QueryEvent{std::move(q)});
  with_output(a.out, [&](std::ostream& o) { write_events(o, events); });
  return 0;
}

// ---------------------------------------------------------- convert-csv

struct CsvArgs {
  std::string in = "-", out, agg_col, pred_cols, id_col;
  std::string delimiter = ",";
  TupleId first_id = 1;
};

int cmd_convert_csv(const CsvArgs& a) {
  if (a.delimiter.size() != 1) throw std::invalid_argument("delimiter must be one character");
  const char delim = a.delimiter[0];
  std::ifstream file;
  if (a.in != "-") {
    file.open(a.in);
    if (!file) throw std::runtime_error("cannot open " + a.in);
  }
  std::istream& in = a.in == "-" ? std::cin : file;
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty CSV input");
  const auto header = csv_fields(line, delim);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument("no column named '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t agg = column(a.agg_col);
  std::vector<std::size_t> preds;
  const auto pred_names = split(a.pred_cols, ',');
  if (pred_names.empty()) throw std::invalid_argument("--pred-cols needs at least one column");
  for (const auto& p : pred_names) preds.push_back(column(p));
  const std::optional<std::size_t> id_col = a.id_col.empty() ? std::nullopt : std::optional(column(a.id_col));

  with_output(a.out, [&](std::ostream& o) {
    std::size_t no = 1;
    TupleId next = a.first_id;
    while (std::getline(in, line)) {
      ++no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto f = csv_fields(line, delim);
      if (f.size() != header.size())
        throw ParseError(no, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
      Tuple t;
      t.id = id_col ? static_cast<TupleId>(parse_number(f[*id_col], no, a.id_col)) : next++;
      for (std::size_t j = 0; j < preds.size(); ++j) t.coords.push_back(parse_number(f[preds[j]], no, pred_names[j]));
      t.value = parse_number(f[agg], no, a.agg_col);
      o << event_to_json(InsertEvent{std::move(t)}).dump() << '\n';
    }
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic partition-tree synopsis for approximate range aggregates"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run_cmd = app.add_subcommand("run", "replay a stream through the engines and report accuracy");
  run_cmd->add_option("--stream", ra.stream, "JSONL event stream ('-' for stdin)")->required();
  run_cmd->add_option("--config", ra.config, "engine config JSON");
  run_cmd->add_option("--engines", ra.engines, "comma list of dpt, rs, srs, dpt-frozen")->capture_default_str();
  run_cmd->add_option("--out", ra.out, "report file (stdout when omitted)");
  run_cmd->add_option("--dump-plan", ra.dump_plan, "write each engine's final partition to this file");
  run_cmd->add_flag("--timing", ra.timing, "include latency and throughput");
  run_cmd->add_flag("--per-query", ra.per_query, "include per-query records");
  run_cmd->add_flag("--quiet", ra.quiet, "no summary on stderr");

  StatusArgs sa;
  auto* status_cmd = app.add_subcommand("status", "replay the updates of a stream and print engine state");
  status_cmd->add_option("--stream", sa.stream, "JSONL event stream")->required();
  status_cmd->add_option("--config", sa.config, "engine config JSON");
  status_cmd->add_option("--init-after", sa.init_after, "build after this many updates (default: at the end)");
  status_cmd->add_flag("--json", sa.json, "print JSON");

  GenDataArgs ga;
  auto* gen_data = app.add_subcommand("gen-data", "write a synthetic insert stream");
  gen_data->add_option("--profile", ga.profile, "uniform, skewed or sorted")->capture_default_str();
  gen_data->add_option("--n", ga.n, "tuples")->capture_default_str();
  gen_data->add_option("--d", ga.d, "predicate dimensions")->capture_default_str();
  gen_data->add_option("--seed", ga.seed)->capture_default_str();
  gen_data->add_option("--delete-fraction", ga.delete_fraction, "chance of a random delete after each insert")
      ->check(CLI::Range(0.0, 1.0));
  gen_data->add_option("--out", ga.out, "output file (stdout when omitted)");

  GenQueriesArgs qa;
  auto* gen_queries = app.add_subcommand("gen-queries", "write a random range-query workload");
  gen_queries->add_option("--n", qa.n, "queries")->capture_default_str();
  gen_queries->add_option("--seed", qa.seed)->capture_default_str();
  gen_queries->add_option("--d", qa.d, "dimensions when no stream is given")->capture_default_str();
  gen_queries->add_option("--stream", qa.stream, "take the domain from this stream's data");
  gen_queries->add_option("--confidence", qa.confidence)->capture_default_str();
  gen_queries->add_option("--out", qa.out, "output file (stdout when omitted)");

  CsvArgs ca;
  auto* csv = app.add_subcommand("convert-csv", "turn a CSV file with a header row into an insert stream");
  csv->add_option("--in", ca.in, "CSV file ('-' for stdin)")->capture_default_str();
  csv->add_option("--agg-col", ca.agg_col, "column holding the aggregated value")->required();
  csv->add_option("--pred-cols", ca.pred_cols, "comma list of predicate columns")->required();
  csv->add_option("--id-col", ca.id_col, "column holding tuple ids (row numbers otherwise)");
  csv->add_option("--first-id", ca.first_id, "first generated id")->capture_default_str();
  csv->add_option("--delimiter", ca.delimiter)->capture_default_str();
  csv->add_option("--out", ca.out, "output file (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run_cmd) return cmd_run(ra);
    if (*status_cmd) return cmd_status(sa);
    if (*gen_data) return cmd_gen_data(ga);
    if (*gen_queries) return cmd_gen_queries(qa);
    if (*csv) return cmd_convert_csv(ca);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
