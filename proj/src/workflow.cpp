#include "debflow/workflow.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <queue>
#include <sstream>

#include <openssl/evp.h>

namespace debflow {

namespace {

constexpr std::string_view kKnownTaskFields[] = {"input", "id", "domain_tag"};

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

Violation make_violation(ViolationKind kind, std::vector<std::string> subjects,
                         std::string message) {
  return Violation{kind, std::move(subjects), std::move(message)};
}

}  // namespace

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::IO: return "IO";
    case OperatorKind::Ensemble: return "Ensemble";
    case OperatorKind::ReviewAndRevise: return "ReviewAndRevise";
    case OperatorKind::Custom: return "Custom";
  }
  return "Custom";
}

std::optional<OperatorKind> parse_operator_kind(std::string_view text) {
  for (auto k : {OperatorKind::IO, OperatorKind::Ensemble, OperatorKind::ReviewAndRevise,
                 OperatorKind::Custom}) {
    if (text == to_string(k)) return k;
  }
  return std::nullopt;
}

const OperatorSpec* WorkflowGraph::find_node(std::string_view id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

std::set<OperatorKind> WorkflowGraph::operator_kinds() const {
  std::set<OperatorKind> kinds;
  for (const auto& n : nodes) kinds.insert(n.kind);
  return kinds;
}

WorkflowGraph make_io_workflow(const std::string& model_ref, const std::string& prompt_template) {
  OperatorSpec io;
  io.id = "io";
  io.kind = OperatorKind::IO;
  io.model_ref = model_ref;
  io.prompt_template = prompt_template;
  for (const auto& p : template_placeholders(prompt_template)) {
    io.input_bindings[p] = std::string(kTaskFieldPrefix) + "input";
  }
  io.output_name = "answer";
  WorkflowGraph g;
  g.nodes.push_back(std::move(io));
  g.entry_ids = {"io"};
  g.exit_id = "io";
  return g;
}

std::vector<std::string> template_placeholders(std::string_view templ) {
  std::vector<std::string> out;
  for (size_t i = 0; i < templ.size(); ++i) {
    if (templ[i] != '{' || i + 1 >= templ.size() || !is_ident_start(templ[i + 1])) continue;
    size_t j = i + 1;
    while (j < templ.size() && is_ident_char(templ[j])) ++j;
    if (j < templ.size() && templ[j] == '}') {
      std::string name(templ.substr(i + 1, j - i - 1));
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
      i = j;
    }
  }
  return out;
}

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::DuplicateNodeId: return "duplicate-node-id";
    case ViolationKind::DuplicateOutputName: return "duplicate-output-name";
    case ViolationKind::EmptyId: return "empty-id";
    case ViolationKind::DanglingEdge: return "dangling-edge";
    case ViolationKind::DuplicateEdge: return "duplicate-edge";
    case ViolationKind::Cycle: return "cycle";
    case ViolationKind::MissingExit: return "missing-exit";
    case ViolationKind::NoEntry: return "no-entry";
    case ViolationKind::UnknownEntry: return "unknown-entry";
    case ViolationKind::UnboundPlaceholder: return "unbound-placeholder";
    case ViolationKind::UnusedBinding: return "unused-binding";
    case ViolationKind::UnsatisfiedBinding: return "unsatisfied-binding";
    case ViolationKind::UnknownTaskField: return "unknown-task-field";
    case ViolationKind::UnknownModel: return "unknown-model";
  }
  return "unknown";
}

bool ValidationReport::has(ViolationKind kind) const {
  return std::any_of(violations.begin(), violations.end(),
                     [kind](const Violation& v) { return v.kind == kind; });
}

std::string ValidationReport::summary() const {
  if (ok) return "ok";
  std::ostringstream os;
  for (size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << to_string(violations[i].kind) << ": " << violations[i].message;
  }
  return os.str();
}

ValidationReport validate_graph(const WorkflowGraph& graph, const std::set<std::string>* models) {
  ValidationReport report;
  auto add = [&](ViolationKind kind, std::vector<std::string> subjects, std::string message) {
    report.violations.push_back(make_violation(kind, std::move(subjects), std::move(message)));
  };

  std::set<std::string> ids;
  std::map<std::string, std::string> producer_of;  // output_name -> node id
  for (const auto& n : graph.nodes) {
    if (n.id.empty()) add(ViolationKind::EmptyId, {}, "node with empty id");
    if (!ids.insert(n.id).second) {
      add(ViolationKind::DuplicateNodeId, {n.id}, "node id '" + n.id + "' appears more than once");
    }
    if (n.output_name.empty()) {
      add(ViolationKind::EmptyId, {n.id}, "node '" + n.id + "' has an empty output_name");
    } else if (auto [it, inserted] = producer_of.emplace(n.output_name, n.id); !inserted) {
      add(ViolationKind::DuplicateOutputName, {it->second, n.id},
          "output '" + n.output_name + "' produced by both '" + it->second + "' and '" + n.id + "'");
    }
    if (models != nullptr && !models->count(n.model_ref)) {
      add(ViolationKind::UnknownModel, {n.id},
          "node '" + n.id + "' uses unknown model '" + n.model_ref + "'");
    }
  }

  std::set<Edge> seen_edges;
  std::map<std::string, std::set<std::string>> preds;
  for (const auto& e : graph.edges) {
    bool ok = true;
    for (const auto* end : {&e.from, &e.to}) {
      if (!ids.count(*end)) {
        add(ViolationKind::DanglingEdge, {e.from, e.to},
            "edge " + e.from + "->" + e.to + " names missing node '" + *end + "'");
        ok = false;
        break;
      }
    }
    if (!seen_edges.insert(e).second) {
      add(ViolationKind::DuplicateEdge, {e.from, e.to}, "edge " + e.from + "->" + e.to + " repeated");
    }
    if (ok) preds[e.to].insert(e.from);
  }

  if (graph.exit_id.empty() || !ids.count(graph.exit_id)) {
    add(ViolationKind::MissingExit, {graph.exit_id},
        "exit node '" + graph.exit_id + "' does not exist");
  }
  if (graph.entry_ids.empty()) add(ViolationKind::NoEntry, {}, "no entry nodes");
  for (const auto& id : graph.entry_ids) {
    if (!ids.count(id)) add(ViolationKind::UnknownEntry, {id}, "entry node '" + id + "' does not exist");
  }

  for (const auto& n : graph.nodes) {
    auto placeholders = template_placeholders(n.prompt_template);
    for (const auto& p : placeholders) {
      if (!n.input_bindings.count(p)) {
        add(ViolationKind::UnboundPlaceholder, {n.id},
            "placeholder '{" + p + "}' of node '" + n.id + "' has no binding");
      }
    }
    for (const auto& [name, source] : n.input_bindings) {
      if (std::find(placeholders.begin(), placeholders.end(), name) == placeholders.end()) {
        add(ViolationKind::UnusedBinding, {n.id},
            "binding '" + name + "' of node '" + n.id + "' matches no placeholder");
      }
      if (source.rfind(kTaskFieldPrefix, 0) == 0) {
        auto field = std::string_view(source).substr(kTaskFieldPrefix.size());
        if (std::find(std::begin(kKnownTaskFields), std::end(kKnownTaskFields), field) ==
            std::end(kKnownTaskFields)) {
          add(ViolationKind::UnknownTaskField, {n.id},
              "binding '" + name + "' of node '" + n.id + "' reads unknown task field '" +
                  std::string(field) + "'");
        }
        continue;
      }
      auto producer = producer_of.find(source);
      const auto& incoming = preds[n.id];
      if (producer == producer_of.end() || !incoming.count(producer->second)) {
        add(ViolationKind::UnsatisfiedBinding, {n.id},
            "binding '" + name + "' of node '" + n.id + "' reads '" + source +
                "' which no incoming edge provides");
      }
    }
  }

  // Cycle detection: nodes left over after Kahn's algorithm lie on or behind a cycle;
  // report those that are on one (reachable from themselves).
  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& id : ids) indegree[id] = 0;
  for (const auto& e : seen_edges) {
    if (!ids.count(e.from) || !ids.count(e.to)) continue;
    succ[e.from].push_back(e.to);
    ++indegree[e.to];
  }
  std::vector<std::string> ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push_back(id);
  }
  size_t removed = 0;
  while (!ready.empty()) {
    auto id = ready.back();
    ready.pop_back();
    ++removed;
    for (const auto& s : succ[id]) {
      if (--indegree[s] == 0) ready.push_back(s);
    }
  }
  if (removed < ids.size()) {
    std::vector<std::string> on_cycle;
    for (const auto& [id, d] : indegree) {
      if (d <= 0) continue;
      std::set<std::string> visited;
      std::vector<std::string> stack(succ[id].begin(), succ[id].end());
      bool cyclic = false;
      while (!stack.empty() && !cyclic) {
        auto cur = stack.back();
        stack.pop_back();
        if (cur == id) cyclic = true;
        if (!visited.insert(cur).second) continue;
        for (const auto& s : succ[cur]) stack.push_back(s);
      }
      if (cyclic) on_cycle.push_back(id);
    }
    std::string names;
    for (const auto& id : on_cycle) names += (names.empty() ? "" : ", ") + id;
    add(ViolationKind::Cycle, on_cycle, "cycle through " + names);
  }

  report.ok = report.violations.empty();
  return report;
}

InvalidGraph::InvalidGraph(ValidationReport report)
    : std::runtime_error("invalid workflow graph: " + report.summary()), report_(std::move(report)) {}

std::vector<std::string> topological_order(const WorkflowGraph& graph) {
  auto report = validate_graph(graph);
  if (!report.ok) throw InvalidGraph(std::move(report));

  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& n : graph.nodes) indegree[n.id] = 0;
  for (const auto& e : graph.edges) {
    succ[e.from].push_back(e.to);
    ++indegree[e.to];
  }
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push(id);
  }
  std::vector<std::string> order;
  order.reserve(graph.nodes.size());
  while (!ready.empty()) {
    auto id = ready.top();
    ready.pop();
    order.push_back(id);
    for (const auto& s : succ[id]) {
      if (--indegree[s] == 0) ready.push(s);
    }
  }
  return order;
}

std::string edit_kind_name(const WorkflowEdit& e) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, edit::AddNode>) return "AddNode";
        else if constexpr (std::is_same_v<T, edit::RemoveNode>) return "RemoveNode";
        else if constexpr (std::is_same_v<T, edit::AddEdge>) return "AddEdge";
        else if constexpr (std::is_same_v<T, edit::RemoveEdge>) return "RemoveEdge";
        else if constexpr (std::is_same_v<T, edit::ReplacePrompt>) return "ReplacePrompt";
        else return "ReplaceModel";
      },
      e);
}

EditRejected::EditRejected(std::string what, ValidationReport report)
    : std::runtime_error(std::move(what)), report_(std::move(report)) {}

namespace {

OperatorSpec* find_mutable(WorkflowGraph& g, const std::string& id) {
  for (auto& n : g.nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

[[noreturn]] void reject_missing(const std::string& kind, const std::string& id) {
  ValidationReport r;
  r.ok = false;
  r.violations.push_back(make_violation(ViolationKind::DanglingEdge, {id},
                                        kind + " targets missing node '" + id + "'"));
  throw EditRejected(kind + " rejected: " + r.summary(), r);
}

}  // namespace

WorkflowGraph apply_edit(const WorkflowGraph& graph, const WorkflowEdit& e,
                         const std::set<std::string>* models) {
  WorkflowGraph out = graph;
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, edit::AddNode>) {
          out.nodes.push_back(x.node);
          for (const auto& from : x.inputs_from) out.edges.push_back({from, x.node.id});
          if (x.set_exit) out.exit_id = x.node.id;
        } else if constexpr (std::is_same_v<T, edit::RemoveNode>) {
          auto it = std::find_if(out.nodes.begin(), out.nodes.end(),
                                 [&](const OperatorSpec& n) { return n.id == x.node_id; });
          if (it == out.nodes.end()) reject_missing("RemoveNode", x.node_id);
          out.nodes.erase(it);
          std::erase_if(out.edges, [&](const Edge& ed) { return ed.from == x.node_id || ed.to == x.node_id; });
          std::erase(out.entry_ids, x.node_id);
        } else if constexpr (std::is_same_v<T, edit::AddEdge>) {
          out.edges.push_back({x.from, x.to});
        } else if constexpr (std::is_same_v<T, edit::RemoveEdge>) {
          auto before = out.edges.size();
          std::erase(out.edges, Edge{x.from, x.to});
          if (out.edges.size() == before) {
            ValidationReport r;
            r.ok = false;
            r.violations.push_back(make_violation(ViolationKind::DanglingEdge, {x.from, x.to},
                                                  "edge " + x.from + "->" + x.to + " does not exist"));
            throw EditRejected("RemoveEdge rejected: " + r.summary(), r);
          }
        } else if constexpr (std::is_same_v<T, edit::ReplacePrompt>) {
          auto* n = find_mutable(out, x.node_id);
          if (n == nullptr) reject_missing("ReplacePrompt", x.node_id);
          n->prompt_template = x.prompt_template;
          if (x.input_bindings) n->input_bindings = *x.input_bindings;
        } else {
          auto* n = find_mutable(out, x.node_id);
          if (n == nullptr) reject_missing("ReplaceModel", x.node_id);
          n->model_ref = x.model_ref;
        }
      },
      e);

  auto report = validate_graph(out, models);
  if (!report.ok) {
    auto message = edit_kind_name(e) + " rejected: " + report.summary();
    throw EditRejected(std::move(message), std::move(report));
  }
  return out;
}

WorkflowGraph canonicalize(const WorkflowGraph& graph) {
  WorkflowGraph c = graph;
  std::sort(c.nodes.begin(), c.nodes.end(),
            [](const OperatorSpec& a, const OperatorSpec& b) { return a.id < b.id; });
  std::sort(c.edges.begin(), c.edges.end());
  std::sort(c.entry_ids.begin(), c.entry_ids.end());
  return c;
}

std::string fingerprint(const WorkflowGraph& graph) {
  const std::string canonical = nlohmann::json(canonicalize(graph)).dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(canonical.data(), canonical.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const OperatorSpec& op) {
  j = nlohmann::json{{"id", op.id},
                     {"kind", to_string(op.kind)},
                     {"model_ref", op.model_ref},
                     {"prompt_template", op.prompt_template},
                     {"tool_refs", op.tool_refs},
                     {"input_bindings", op.input_bindings},
                     {"output_name", op.output_name}};
  if (op.temperature) j["temperature"] = *op.temperature;
}

void from_json(const nlohmann::json& j, OperatorSpec& op) {
  op.id = j.at("id").get<std::string>();
  auto kind_text = j.at("kind").get<std::string>();
  auto kind = parse_operator_kind(kind_text);
  if (!kind) throw std::invalid_argument("unknown operator kind '" + kind_text + "'");
  op.kind = *kind;
  op.model_ref = j.at("model_ref").get<std::string>();
  op.prompt_template = j.at("prompt_template").get<std::string>();
  op.tool_refs = j.value("tool_refs", std::vector<std::string>{});
  op.input_bindings = j.value("input_bindings", std::map<std::string, std::string>{});
  op.output_name = j.at("output_name").get<std::string>();
  if (j.contains("temperature") && !j["temperature"].is_null()) {
    op.temperature = j["temperature"].get<double>();
  } else {
    op.temperature.reset();
  }
}

void to_json(nlohmann::json& j, const WorkflowGraph& g) {
  auto edges = nlohmann::json::array();
  for (const auto& e : g.edges) edges.push_back(nlohmann::json::array({e.from, e.to}));
  j = nlohmann::json{{"nodes", g.nodes}, {"edges", edges}, {"entry_ids", g.entry_ids}, {"exit_id", g.exit_id}};
}

void from_json(const nlohmann::json& j, WorkflowGraph& g) {
  g.nodes = j.at("nodes").get<std::vector<OperatorSpec>>();
  g.edges.clear();
  for (const auto& e : j.at("edges")) {
    if (e.is_array() && e.size() == 2) {
      g.edges.push_back({e[0].get<std::string>(), e[1].get<std::string>()});
    } else if (e.is_object()) {
      g.edges.push_back({e.at("from").get<std::string>(), e.at("to").get<std::string>()});
    } else {
      throw std::invalid_argument("edge must be [from, to] or {\"from\", \"to\"}");
    }
  }
  g.entry_ids = j.at("entry_ids").get<std::vector<std::string>>();
  g.exit_id = j.at("exit_id").get<std::string>();
}

void to_json(nlohmann::json& j, const WorkflowEdit& e) {
  j = nlohmann::json{{"kind", edit_kind_name(e)}};
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, edit::AddNode>) {
          j["node"] = x.node;
          j["inputs_from"] = x.inputs_from;
          j["set_exit"] = x.set_exit;
        } else if constexpr (std::is_same_v<T, edit::RemoveNode>) {
          j["node_id"] = x.node_id;
        } else if constexpr (std::is_same_v<T, edit::AddEdge> || std::is_same_v<T, edit::RemoveEdge>) {
          j["from"] = x.from;
          j["to"] = x.to;
        } else if constexpr (std::is_same_v<T, edit::ReplacePrompt>) {
          j["node_id"] = x.node_id;
          j["prompt_template"] = x.prompt_template;
          if (x.input_bindings) j["input_bindings"] = *x.input_bindings;
        } else {
          j["node_id"] = x.node_id;
          j["model_ref"] = x.model_ref;
        }
      },
      e);
}

void from_json(const nlohmann::json& j, WorkflowEdit& e) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "AddNode") {
    edit::AddNode x;
    x.node = j.at("node").get<OperatorSpec>();
    x.inputs_from = j.value("inputs_from", std::vector<std::string>{});
    x.set_exit = j.value("set_exit", false);
    e = std::move(x);
  } else if (kind == "RemoveNode") {
    e = edit::RemoveNode{j.at("node_id").get<std::string>()};
  } else if (kind == "AddEdge") {
    e = edit::AddEdge{j.at("from").get<std::string>(), j.at("to").get<std::string>()};
  } else if (kind == "RemoveEdge") {
    e = edit::RemoveEdge{j.at("from").get<std::string>(), j.at("to").get<std::string>()};
  } else if (kind == "ReplacePrompt") {
    edit::ReplacePrompt x;
    x.node_id = j.at("node_id").get<std::string>();
    x.prompt_template = j.at("prompt_template").get<std::string>();
    if (j.contains("input_bindings")) {
      x.input_bindings = j["input_bindings"].get<std::map<std::string, std::string>>();
    }
    e = std::move(x);
  } else if (kind == "ReplaceModel") {
    e = edit::ReplaceModel{j.at("node_id").get<std::string>(), j.at("model_ref").get<std::string>()};
  } else {
    throw std::invalid_argument("unknown edit kind '" + kind + "'");
  }
}

WorkflowGraph load_workflow_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open workflow file " + path);
  return nlohmann::json::parse(in).get<WorkflowGraph>();
}

void save_workflow_file(const WorkflowGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write workflow file " + path);
  out << nlohmann::json(graph).dump(2) << '\n';
}

}  // namespace debflow
