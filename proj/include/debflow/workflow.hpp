#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace debflow {

enum class OperatorKind { IO, Ensemble, ReviewAndRevise, Custom };

std::string to_string(OperatorKind kind);
std::optional<OperatorKind> parse_operator_kind(std::string_view text);

/// Bindings whose source starts with this prefix read a task field
/// ("task.input", "task.id", "task.domain_tag") instead of an upstream output.
inline constexpr std::string_view kTaskFieldPrefix = "task.";

/// One LLM-invoking node: backbone, prompt and tools.
struct OperatorSpec {
  std::string id;
  OperatorKind kind = OperatorKind::IO;
  std::string model_ref;
  std::string prompt_template;
  std::vector<std::string> tool_refs;
  /// placeholder name -> upstream output_name or "task.<field>"
  std::map<std::string, std::string> input_bindings;
  std::string output_name;
  /// Per-operator sampling temperature; absent means the run default.
  std::optional<double> temperature;

  bool operator==(const OperatorSpec&) const = default;
};

struct Edge {
  std::string from;
  std::string to;

  auto operator<=>(const Edge&) const = default;
};

/// Directed acyclic graph of operators with a single exit node.
struct WorkflowGraph {
  std::vector<OperatorSpec> nodes;
  std::vector<Edge> edges;
  std::vector<std::string> entry_ids;
  std::string exit_id;

  const OperatorSpec* find_node(std::string_view id) const;
  std::set<OperatorKind> operator_kinds() const;

  bool operator==(const WorkflowGraph&) const = default;
};

/// The single-node input-output workflow every search starts from.
WorkflowGraph make_io_workflow(const std::string& model_ref,
                               const std::string& prompt_template = "{input}");

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind {
  DuplicateNodeId,
  DuplicateOutputName,
  EmptyId,
  DanglingEdge,
  DuplicateEdge,
  Cycle,
  MissingExit,
  NoEntry,
  UnknownEntry,
  UnboundPlaceholder,
  UnusedBinding,
  UnsatisfiedBinding,
  UnknownTaskField,
  UnknownModel,
};

std::string to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  /// Offending node ids, or the two endpoints of an offending edge.
  std::vector<std::string> subjects;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;

  bool has(ViolationKind kind) const;
  std::string summary() const;
};

/// Checks every structural invariant. When `models` is given, model_ref of
/// each node must be a member.
ValidationReport validate_graph(const WorkflowGraph& graph,
                                const std::set<std::string>* models = nullptr);

/// Placeholder names appearing as `{identifier}` in a template, in order of
/// first appearance.
std::vector<std::string> template_placeholders(std::string_view templ);

class InvalidGraph : public std::runtime_error {
 public:
  explicit InvalidGraph(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

/// Kahn's algorithm with lexicographically smallest ready node first.
/// Throws InvalidGraph for graphs that do not validate.
std::vector<std::string> topological_order(const WorkflowGraph& graph);

// ---------------------------------------------------------------------------
// Edits

namespace edit {

/// Adds a node. `inputs_from` adds edges from existing nodes into the new one
/// and `set_exit` makes it the exit, so a node that reads upstream outputs can
/// be inserted in a single valid step.
struct AddNode {
  OperatorSpec node;
  std::vector<std::string> inputs_from;
  bool set_exit = false;
  bool operator==(const AddNode&) const = default;
};
/// Removes a node with its incident edges and any entry reference.
struct RemoveNode {
  std::string node_id;
  bool operator==(const RemoveNode&) const = default;
};
struct AddEdge {
  std::string from;
  std::string to;
  bool operator==(const AddEdge&) const = default;
};
struct RemoveEdge {
  std::string from;
  std::string to;
  bool operator==(const RemoveEdge&) const = default;
};
/// Replaces a prompt; bindings are replaced too when given.
struct ReplacePrompt {
  std::string node_id;
  std::string prompt_template;
  std::optional<std::map<std::string, std::string>> input_bindings;
  bool operator==(const ReplacePrompt&) const = default;
};
struct ReplaceModel {
  std::string node_id;
  std::string model_ref;
  bool operator==(const ReplaceModel&) const = default;
};

}  // namespace edit

using WorkflowEdit = std::variant<edit::AddNode, edit::RemoveNode, edit::AddEdge,
                                  edit::RemoveEdge, edit::ReplacePrompt, edit::ReplaceModel>;

std::string edit_kind_name(const WorkflowEdit& e);

class EditRejected : public std::runtime_error {
 public:
  EditRejected(std::string what, ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

/// Returns the edited copy when it validates; throws EditRejected otherwise.
WorkflowGraph apply_edit(const WorkflowGraph& graph, const WorkflowEdit& e,
                         const std::set<std::string>* models = nullptr);

/// Sorted nodes, edges and entries; the form hashed by fingerprint().
WorkflowGraph canonicalize(const WorkflowGraph& graph);

/// Hex SHA-256 of the canonical JSON encoding (64 characters).
std::string fingerprint(const WorkflowGraph& graph);

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const OperatorSpec& op);
void from_json(const nlohmann::json& j, OperatorSpec& op);
void to_json(nlohmann::json& j, const WorkflowGraph& g);
void from_json(const nlohmann::json& j, WorkflowGraph& g);
void to_json(nlohmann::json& j, const WorkflowEdit& e);
void from_json(const nlohmann::json& j, WorkflowEdit& e);

WorkflowGraph load_workflow_file(const std::string& path);
void save_workflow_file(const WorkflowGraph& graph, const std::string& path);

}  // namespace debflow

// WorkflowEdit is a std::variant, so argument-dependent lookup cannot find the
// converters above.
template <>
struct nlohmann::adl_serializer<debflow::WorkflowEdit> {
  static void to_json(json& j, const debflow::WorkflowEdit& e) { debflow::to_json(j, e); }
  static void from_json(const json& j, debflow::WorkflowEdit& e) { debflow::from_json(j, e); }
};
