#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debflow/llm.hpp"
#include "debflow/workflow.hpp"

namespace debflow {

enum class DomainTag { Math, QA, Code, Other };

std::string to_string(DomainTag tag);
std::optional<DomainTag> parse_domain_tag(std::string_view text);

struct TaskInstance {
  std::string id;
  std::string input;
  std::string gold;
  DomainTag domain_tag = DomainTag::Other;
};

enum class NodeStatus { Success, ProviderError, ParseError, Skipped };
enum class TrajectoryStatus { Completed, Failed };

std::string to_string(NodeStatus s);
std::string to_string(TrajectoryStatus s);

struct NodeRecord {
  std::string node_id;
  std::string rendered_prompt;
  std::string response;
  NodeStatus status = NodeStatus::Skipped;
  int64_t prompt_tokens = 0;
  int64_t completion_tokens = 0;
  int64_t latency_ms = 0;
  /// Why the node failed or was skipped; empty on success.
  std::string error;
};

struct Trajectory {
  std::string task_id;
  std::string graph_fingerprint;
  std::vector<NodeRecord> records;  // topological order
  std::optional<std::string> final_answer;
  TrajectoryStatus overall_status = TrajectoryStatus::Failed;

  const NodeRecord* find(std::string_view node_id) const;
};

/// NodeRecord::error of a ParseError caused by a blank reply.
inline constexpr const char* kEmptyResponseError = "empty response";

class MissingBinding : public std::runtime_error {
 public:
  explicit MissingBinding(std::string placeholder);
  const std::string& placeholder() const { return placeholder_; }

 private:
  std::string placeholder_;
};

/// Substitutes every `{name}` placeholder in one pass; substituted text is not
/// rescanned.
std::string render_prompt(std::string_view templ, const std::map<std::string, std::string>& bindings);

struct ExecutorOptions {
  double default_temperature = 1.0;
  std::chrono::milliseconds node_timeout{120000};
  /// Upper bound on nodes of one wave running at once; 1 runs serially.
  int max_concurrency = 4;
};

/// Runs the graph wave by wave in dependency order. Node failures are recorded,
/// never thrown; descendants of a failed node are Skipped.
Trajectory execute_workflow(const WorkflowGraph& graph, const TaskInstance& task,
                            ChatProvider& provider, const ExecutorOptions& options = {});

void to_json(nlohmann::json& j, const TaskInstance& t);
void from_json(const nlohmann::json& j, TaskInstance& t);
void to_json(nlohmann::json& j, const NodeRecord& r);
void from_json(const nlohmann::json& j, NodeRecord& r);
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);

}  // namespace debflow
