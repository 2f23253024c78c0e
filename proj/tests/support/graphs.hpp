#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "debflow/workflow.hpp"

namespace debflow::testing {

inline OperatorSpec io_node(const std::string& id, const std::string& model = "m") {
  OperatorSpec n;
  n.id = id;
  n.kind = OperatorKind::IO;
  n.model_ref = model;
  n.prompt_template = "{input}";
  n.input_bindings = {{"input", "task.input"}};
  n.output_name = "out_" + id;
  return n;
}

/// Nodes named by `ids`; every node reads the task input only.
inline WorkflowGraph graph_of(const std::vector<std::string>& ids, const std::vector<Edge>& edges,
                              const std::string& exit_id) {
  WorkflowGraph g;
  for (const auto& id : ids) g.nodes.push_back(io_node(id));
  g.edges = edges;
  std::set<std::string> has_pred;
  for (const auto& e : edges) has_pred.insert(e.to);
  for (const auto& id : ids) {
    if (!has_pred.count(id)) g.entry_ids.push_back(id);
  }
  if (g.entry_ids.empty() && !ids.empty()) g.entry_ids.push_back(ids.front());
  g.exit_id = exit_id;
  return g;
}

inline WorkflowGraph diamond() {
  return graph_of({"A", "B", "C", "D"}, {{"A", "B"}, {"A", "C"}, {"B", "D"}, {"C", "D"}}, "D");
}

/// Independent acyclicity check by depth-first search with colours.
inline bool is_acyclic(const WorkflowGraph& g) {
  std::map<std::string, int> colour;
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& e : g.edges) succ[e.from].push_back(e.to);
  std::function<bool(const std::string&)> visit = [&](const std::string& u) {
    colour[u] = 1;
    for (const auto& v : succ[u]) {
      if (colour[v] == 1) return false;
      if (colour[v] == 0 && !visit(v)) return false;
    }
    colour[u] = 2;
    return true;
  };
  for (const auto& n : g.nodes) {
    if (colour[n.id] == 0 && !visit(n.id)) return false;
  }
  return true;
}

inline bool respects_edges(const std::vector<std::string>& order, const WorkflowGraph& g) {
  std::map<std::string, size_t> pos;
  for (size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  for (const auto& e : g.edges) {
    if (pos.at(e.from) >= pos.at(e.to)) return false;
  }
  return true;
}

/// Brute force: the first permutation in lexicographic order that respects
/// every edge, or empty when none does.
inline std::vector<std::string> lexicographically_least_order(const WorkflowGraph& g) {
  std::vector<std::string> ids;
  for (const auto& n : g.nodes) ids.push_back(n.id);
  std::sort(ids.begin(), ids.end());
  do {
    if (respects_edges(ids, g)) return ids;
  } while (std::next_permutation(ids.begin(), ids.end()));
  return {};
}

/// Random valid DAG. Some nodes also read an upstream output over an edge.
inline WorkflowGraph random_dag(std::mt19937_64& rng, int max_nodes = 8) {
  std::uniform_int_distribution<int> count(1, max_nodes);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const int n = count(rng);
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("n" + std::to_string(i));
  std::shuffle(ids.begin(), ids.end(), rng);  // rank order differs from name order
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (coin(rng) < 0.35) edges.push_back({ids[i], ids[j]});
    }
  }
  auto g = graph_of(ids, edges, ids.back());
  for (const auto& e : edges) {
    if (coin(rng) < 0.5) {
      for (auto& node : g.nodes) {
        if (node.id != e.to) continue;
        const auto placeholder = "from_" + e.from;
        node.prompt_template += " {" + placeholder + "}";
        node.input_bindings[placeholder] = "out_" + e.from;
      }
    }
  }
  return g;
}

/// Adds an edge that closes a cycle through at least one existing path, or a
/// self-loop when the graph has no edges.
inline WorkflowGraph inject_cycle(WorkflowGraph g, std::mt19937_64& rng) {
  if (g.edges.empty()) {
    const auto& id = g.nodes[std::uniform_int_distribution<size_t>(0, g.nodes.size() - 1)(rng)].id;
    g.edges.push_back({id, id});
    return g;
  }
  const auto e = g.edges[std::uniform_int_distribution<size_t>(0, g.edges.size() - 1)(rng)];
  // Walk forward from e.to a random number of steps, then point back at e.from.
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& x : g.edges) succ[x.from].push_back(x.to);
  std::string tail = e.to;
  for (int steps = std::uniform_int_distribution<int>(0, 3)(rng); steps > 0 && !succ[tail].empty(); --steps) {
    tail = succ[tail][std::uniform_int_distribution<size_t>(0, succ[tail].size() - 1)(rng)];
  }
  g.edges.push_back({tail, e.from});
  return g;
}

}  // namespace debflow::testing
