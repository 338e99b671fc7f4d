// Builds a synopsis over a small synthetic archive, streams more updates
// through it and answers a few range queries.

#include <iostream>

#include "dpt/dpt.hpp"

int main() {
  using namespace dpt;

  Archive archive;
  for (const auto& e : generate_dataset(7, DataProfile::Skewed, 5000, 1))
    archive.apply(e);

  EngineConfig cfg;
  cfg.d = 1;
  cfg.k = 8;
  cfg.m = 200;
  cfg.catchup_ratio = 0.2;
  DptEngine engine(cfg, archive);
  engine.initialize();

  // More arrivals: apply to the archive first, then tell the engine.
  for (const auto& e : generate_dataset(8, DataProfile::Skewed, 2000, 1, {0.2, 100000})) {
    Tuple removed;
    const bool del = std::holds_alternative<DeleteEvent>(e);
    archive.apply(e, del ? &removed : nullptr);
    if (del) engine.on_delete(removed);
    else engine.on_insert(std::get<InsertEvent>(e).tuple);
  }

  for (auto kind : {AggregateKind::Count, AggregateKind::Sum, AggregateKind::Avg}) {
    Query q{kind, Rectangle({0.1}, {0.6}), 0.95};
    const auto a = engine.answer(q);
    std::cout << to_string(kind) << " over [0.1, 0.6): " << a.estimate << " +/- "
              << a.ci_half_width << "  (truth " << archive.ground_truth(q) << ")\n";
  }
  std::cout << nlohmann::json(engine.status()).dump() << "\n";
}
