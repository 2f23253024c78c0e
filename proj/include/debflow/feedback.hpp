#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debflow/executor.hpp"
#include "debflow/llm.hpp"
#include "debflow/workflow.hpp"

namespace debflow {

enum class ErrorCategory { ProviderFailure, ParseFailure, WrongAnswer, StructuralGap };

std::string to_string(ErrorCategory c);
std::optional<ErrorCategory> parse_error_category(std::string_view text);

/// Structured failure analysis of one trajectory. The initial gene comes from
/// the error-correcting agent; the dominant gene is its memory-refined form.
struct Gene {
  std::string id;
  std::string source_task_id;
  std::vector<std::string> failing_node_ids;
  /// Kinds of the failing nodes, sorted and unique; used for memory matching.
  std::vector<OperatorKind> failing_node_kinds;
  ErrorCategory error_category = ErrorCategory::WrongAnswer;
  std::string diagnosis;
  std::string directive;
  int created_at_iteration = 0;

  bool operator==(const Gene&) const = default;
};

/// True when both genes share at least one failing node kind.
bool kinds_overlap(const Gene& a, const Gene& b);

/// Text form used in debate prompts; absent genes render a fixed
/// "no prior failure signal" line.
std::string gene_prompt_text(const std::optional<Gene>& gene);
inline constexpr const char* kNoGeneText =
    "(no prior failure signal: no failed runs have been analyzed yet)";

struct MemoryConfig {
  size_t short_term_capacity = 8;
  size_t long_term_capacity = 32;
  /// A gene is promoted once this many genes (itself included) share its
  /// error category and a failing node kind.
  int promotion_threshold = 2;
};

/// Short-term ring of recent genes plus a long-term list of recurring ones.
class MemoryStore {
 public:
  explicit MemoryStore(MemoryConfig config = {});

  /// Appends to short-term (evicting the oldest past capacity), then promotes
  /// to long-term on recurrence (evicting the oldest long-term entry past capacity).
  /// Returns true when the gene was promoted.
  bool store(const Gene& gene);

  const std::deque<Gene>& short_term() const { return short_term_; }
  const std::deque<Gene>& long_term() const { return long_term_; }
  const MemoryConfig& config() const { return config_; }
  bool empty() const { return short_term_.empty() && long_term_.empty(); }

  /// Distinct genes from both tiers, oldest insertion first.
  std::vector<Gene> genes() const;
  /// Insertion sequence number of a stored gene id (larger is newer).
  uint64_t sequence_of(const std::string& gene_id) const;

  friend void to_json(nlohmann::json& j, const MemoryStore& m);
  friend void from_json(const nlohmann::json& j, MemoryStore& m);

 private:
  MemoryConfig config_;
  std::deque<Gene> short_term_;
  std::deque<Gene> long_term_;
  std::map<std::string, uint64_t> sequence_;
  uint64_t next_sequence_ = 0;
};

MemoryStore store_gene(const Gene& gene, MemoryStore memory);

class NothingToAnalyze : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeneParseFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FeedbackAgentOptions {
  std::string model;
  double temperature = 1.0;
  std::string extract_template;
  std::string refine_template;
  /// Approximate token budget for the serialized trajectory (4 chars/token).
  int trajectory_token_budget = 2000;
  int iteration = 0;
};

/// Trajectory text handed to the error-correcting agent, truncated to budget.
std::string trajectory_prompt_text(const Trajectory& t, int token_budget);

/// One LLM call (plus at most one re-ask) turning a bad trajectory into g0.
Gene extract_initial_gene(const Trajectory& trajectory, const WorkflowGraph& graph,
                          const TaskInstance& task, double score, ChatProvider& provider,
                          const FeedbackAgentOptions& options);

/// Merges g0 with related memory into the dominant gene and stores the result.
/// Empty memory returns g0 unchanged without calling the provider; a reply
/// that cannot be parsed also falls back to g0.
Gene refine_gene(const Gene& g0, MemoryStore& memory, ChatProvider& provider,
                 const FeedbackAgentOptions& options);

/// Most recent gene whose failing node kinds intersect the workflow's kinds.
std::optional<Gene> dominant_gene_for(const WorkflowGraph& w, const MemoryStore& memory);

void to_json(nlohmann::json& j, const Gene& g);
void from_json(const nlohmann::json& j, Gene& g);

}  // namespace debflow
