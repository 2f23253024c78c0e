#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debflow/debate.hpp"
#include "debflow/evaluator.hpp"
#include "debflow/executor.hpp"
#include "debflow/feedback.hpp"
#include "debflow/llm.hpp"
#include "debflow/prompts.hpp"
#include "debflow/run_log.hpp"
#include "debflow/selection.hpp"
#include "debflow/workflow.hpp"

namespace debflow {

struct RunConfig {
  double lambda = 0.2;
  double alpha = 5.0;
  int max_iterations = 10;
  uint64_t seed = 0;
  std::optional<double> budget_usd;

  /// Relative paths resolve against the run directory.
  std::string tasks_file = "tasks.jsonl";
  std::string seed_workflow_file = "workflow.json";
  /// Describes the task family to the debaters; derived from the tasks when empty.
  std::string task_brief;

  std::vector<std::string> models = {"gpt-4o-mini"};
  std::string executor_model = "gpt-4o-mini";
  std::string optimizer_model = "gpt-4o-mini";
  PriceTable prices;
  double temperature = 1.0;

  int proponents = 2;
  int opponents = 2;
  int max_rounds = 3;

  MemoryConfig memory;
  /// Bad trajectories handed to the error-correcting agent per evaluation.
  int max_genes_per_iteration = 3;
  int gene_token_budget = 2000;

  RetryPolicy retry;
  int node_timeout_ms = 120000;
  int max_concurrency = 4;

  ScoringPolicy scoring;
  /// OpenAI-compatible endpoint; DEBFLOW_BASE_URL is used when empty.
  std::string base_url;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing fields keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

struct Lineage {
  std::optional<std::string> parent_fingerprint;
  int iteration = 0;
};

/// A scored workflow. The score is fixed at insertion.
struct Candidate {
  WorkflowGraph graph;
  double score = 0.0;
  std::string fingerprint;
  Lineage lineage;
  double cost_usd = 0.0;
  ScoreReport report;
};

void to_json(nlohmann::json& j, const Candidate& c);
void from_json(const nlohmann::json& j, Candidate& c);

/// Candidates in insertion order, unique by fingerprint.
class CandidatePool {
 public:
  /// False (and no insertion) when the fingerprint is already present.
  bool insert(Candidate c);
  bool contains(const std::string& fp) const;
  std::optional<size_t> index_of(const std::string& fp) const;

  size_t size() const { return candidates_.size(); }
  bool empty() const { return candidates_.empty(); }
  const Candidate& at(size_t i) const { return candidates_.at(i); }
  const std::vector<Candidate>& candidates() const { return candidates_; }
  std::vector<double> scores() const;
  /// Highest score; earliest insertion wins ties.
  size_t best_index() const;

 private:
  std::vector<Candidate> candidates_;
};

/// Layout of a run directory.
namespace run_files {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kRunLog = "runlog.jsonl";
inline constexpr const char* kMemory = "memory.json";
inline constexpr const char* kCandidates = "candidates";
inline constexpr const char* kBest = "best.json";
inline constexpr const char* kState = "state.json";
inline constexpr const char* kPrompts = "prompts";
inline constexpr const char* kLock = ".lock";
}  // namespace run_files

struct OptimizerInputs {
  RunConfig config;
  std::vector<TaskInstance> tasks;
  WorkflowGraph seed_workflow;
  PromptSet prompts = default_prompts();
  ScorerRegistry scorers;
  /// Empty keeps everything in memory.
  std::filesystem::path run_dir;
  bool resume = false;
  RunLog::Clock clock = utc_timestamp;
  /// Retry backoff; real sleeping when empty.
  Sleeper sleeper;
};

struct OptimizeResult {
  Candidate best;
  CandidatePool pool;
  MemoryStore memory;
  std::map<std::string, ModelUsage> usage;
  int next_iteration = 0;
  /// "max_iterations", "budget" or "already_complete".
  std::string stop_reason;
  std::vector<nlohmann::json> events;
};

/// A provider failed hard after retries; state up to the last finished
/// iteration is persisted and the run can be resumed.
class OptimizeAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a run directory already holds a run and resume was not requested.
class RunExists : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string make_task_brief(const RunConfig& config, const std::vector<TaskInstance>& tasks);

/// The search loop: evaluate the seed workflow, then per iteration select a
/// candidate, debate a refinement guided by the dominant gene, evaluate it,
/// and feed bad trajectories to the feedback memory.
OptimizeResult optimize(const OptimizerInputs& inputs, ProviderPtr provider);

/// False for skipped nodes and nodes whose prompt could not be rendered.
bool node_was_called(const NodeRecord& record);

/// Rebuilds the call record of one executed node (for run logs and replay).
CallRecord node_call_record(const NodeRecord& record, const OperatorSpec& node, double default_temperature);

}  // namespace debflow
