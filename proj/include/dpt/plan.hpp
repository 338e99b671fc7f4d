#pragma once

// A partition plan: the shape of a partition tree before it carries
// statistics. Produced by the partitioners, consumed by PartitionTree.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpt/core.hpp"

namespace dpt {

struct PlanNode {
  Rectangle rect;
  int parent = -1;
  int left = -1;
  int right = -1;
  std::size_t split_dim = 0;
  double split_value = 0.0;  // left child holds x[split_dim] < split_value

  [[nodiscard]] bool is_leaf() const { return left < 0; }
};

struct PartitionPlan {
  std::size_t d = 1;
  AggregateKind kind = AggregateKind::Sum;
  std::vector<PlanNode> nodes;      // node 0 is the root
  std::vector<std::size_t> leaves;  // node ids, left-to-right
  std::vector<double> leaf_error;   // max-variance baseline per leaf
  double max_error = 0.0;           // max of leaf_error
  std::vector<std::string> warnings;

  static PartitionPlan single(const Rectangle& root, AggregateKind kind) {
    PartitionPlan p;
    p.d = root.dims();
    p.kind = kind;
    p.nodes.push_back(PlanNode{root});
    p.leaves = {0};
    p.leaf_error = {0.0};
    return p;
  }

  /// Splits leaf node `node` and returns the ids of its two children.
  std::pair<std::size_t, std::size_t> split(std::size_t node, std::size_t dim, double value) {
    PlanNode l{nodes[node].rect, static_cast<int>(node)};
    PlanNode r{nodes[node].rect, static_cast<int>(node)};
    l.rect.hi[dim] = value;
    r.rect.lo[dim] = value;
    const auto li = nodes.size();
    nodes.push_back(std::move(l));
    nodes.push_back(std::move(r));
    nodes[node].left = static_cast<int>(li);
    nodes[node].right = static_cast<int>(li + 1);
    nodes[node].split_dim = dim;
    nodes[node].split_value = value;
    return {li, li + 1};
  }

  /// Recomputes `leaves` in left-to-right order and resizes leaf_error.
  void collect_leaves() {
    std::vector<double> err(nodes.size(), 0.0);
    for (std::size_t i = 0; i < leaves.size() && i < leaf_error.size(); ++i)
      err[leaves[i]] = leaf_error[i];
    leaves.clear();
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
      const std::size_t n = stack.back();
      stack.pop_back();
      if (nodes[n].is_leaf()) {
        leaves.push_back(n);
        continue;
      }
      stack.push_back(static_cast<std::size_t>(nodes[n].right));
      stack.push_back(static_cast<std::size_t>(nodes[n].left));
    }
    leaf_error.clear();
    for (auto l : leaves) leaf_error.push_back(err[l]);
    max_error = 0.0;
    for (double e : leaf_error) max_error = std::max(max_error, e);
  }

  [[nodiscard]] std::vector<Rectangle> leaf_rects() const {
    std::vector<Rectangle> out;
    out.reserve(leaves.size());
    for (auto l : leaves) out.push_back(nodes[l].rect);
    return out;
  }

  /// Index into `leaves` of the leaf holding point x.
  [[nodiscard]] std::size_t locate(const double* x) const {
    std::size_t n = 0;
    while (!nodes[n].is_leaf())
      n = static_cast<std::size_t>(x[nodes[n].split_dim] < nodes[n].split_value ? nodes[n].left
                                                                                  : nodes[n].right);
    return static_cast<std::size_t>(std::find(leaves.begin(), leaves.end(), n) - leaves.begin());
  }
};

inline void to_json(nlohmann::json& j, const PlanNode& n) {
  j = nlohmann::json{{"rect", n.rect}, {"parent", n.parent}, {"left", n.left}, {"right", n.right}};
  if (!n.is_leaf()) {
    j["split_dim"] = n.split_dim;
    j["split_value"] = n.split_value;
  }
}

inline void from_json(const nlohmann::json& j, PlanNode& n) {
  n.rect = j.at("rect").get<Rectangle>();
  n.parent = j.at("parent").get<int>();
  n.left = j.at("left").get<int>();
  n.right = j.at("right").get<int>();
  if (j.contains("split_dim")) {
    n.split_dim = j.at("split_dim").get<std::size_t>();
    n.split_value = j.at("split_value").get<double>();
  }
}

inline void to_json(nlohmann::json& j, const PartitionPlan& p) {
  j = nlohmann::json{{"d", p.d},
                     {"kind", std::string(to_string(p.kind))},
                     {"nodes", p.nodes},
                     {"leaves", p.leaves},
                     {"leaf_error", p.leaf_error},
                     {"max_error", p.max_error},
                     {"warnings", p.warnings}};
}

inline void from_json(const nlohmann::json& j, PartitionPlan& p) {
  p.d = j.at("d").get<std::size_t>();
  p.kind = parse_kind(j.at("kind").get<std::string>());
  p.nodes = j.at("nodes").get<std::vector<PlanNode>>();
  p.leaves = j.at("leaves").get<std::vector<std::size_t>>();
  p.leaf_error = j.at("leaf_error").get<std::vector<double>>();
  p.max_error = j.at("max_error").get<double>();
  p.warnings = j.value("warnings", std::vector<std::string>{});
}

}  // namespace dpt
