#pragma once

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "debflow/executor.hpp"
#include "debflow/llm.hpp"
#include "debflow/workflow.hpp"

namespace debflow {

/// Exact-match normal form: trimmed, whitespace collapsed, one trailing period
/// removed, lower-cased; pure numbers lose a leading '+', trailing fractional
/// zeros and a bare trailing decimal point.
std::string normalize_answer(std::string_view text);

double score_exact_match(std::string_view pred, std::string_view gold);

/// Lower-cased whitespace tokens with ASCII punctuation removed.
std::vector<std::string> f1_tokens(std::string_view text);

/// Token-level F1 with multiset overlap.
double score_f1(std::string_view pred, std::string_view gold);

using Scorer = std::function<double(std::string_view pred, std::string_view gold)>;

class ScorerUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scorers by name. Built in: "exact_match", "f1". Code scoring ("pass_at_1")
/// must be registered by the embedding application.
class ScorerRegistry {
 public:
  ScorerRegistry();
  void add(std::string name, Scorer scorer);
  bool contains(const std::string& name) const;
  const Scorer& get(const std::string& name) const;

 private:
  std::map<std::string, Scorer> scorers_;
};

/// Which scorer handles each domain. Unlisted domains use math -> exact_match,
/// qa -> f1, code -> pass_at_1, other -> default_scorer.
struct ScoringPolicy {
  std::string default_scorer = "exact_match";
  std::map<std::string, std::string> by_domain;

  std::string scorer_for(DomainTag tag) const;
};

struct TaskScore {
  std::string task_id;
  double score = 0.0;
  TrajectoryStatus status = TrajectoryStatus::Failed;
};

struct ScoreReport {
  std::vector<TaskScore> per_task;
  double aggregate = 0.0;
  int completed_count = 0;
  int failed_count = 0;
};

struct Evaluation {
  ScoreReport report;
  std::vector<Trajectory> trajectories;  // task order
};

/// Mean over all entries; Failed trajectories count as zero.
double aggregate_score(const std::vector<TaskScore>& scores);

/// Scores one trajectory. Failed trajectories score 0.
double score_trajectory(const Trajectory& t, const TaskInstance& task, const ScorerRegistry& registry,
                        const ScoringPolicy& policy);

Evaluation evaluate_workflow(const WorkflowGraph& graph, const std::vector<TaskInstance>& tasks,
                             ChatProvider& provider, const ScorerRegistry& registry = {},
                             const ScoringPolicy& policy = {}, const ExecutorOptions& options = {});

/// One JSON object per line with id, input, gold, domain_tag.
std::vector<TaskInstance> load_tasks_jsonl(const std::string& path);
void save_tasks_jsonl(const std::vector<TaskInstance>& tasks, const std::string& path);

void to_json(nlohmann::json& j, const ScoreReport& r);

}  // namespace debflow
