#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debflow/feedback.hpp"
#include "debflow/llm.hpp"
#include "debflow/prompts.hpp"
#include "debflow/workflow.hpp"

namespace debflow {

/// Debaters [0, proponents) argue for the proponent side, the rest oppose.
struct DebateConfig {
  int proponents = 2;
  int opponents = 2;
  int max_rounds = 3;
  PromptSet prompts = default_prompts();
  std::string model;
  double temperature = 1.0;
  /// Models a proposed operator may use; empty leaves model_ref unchecked.
  std::set<std::string> allowed_models;

  int debaters() const { return proponents + opponents; }
  /// Throws std::invalid_argument when counts or templates are missing.
  void validate() const;
};

enum class Side { Proponent, Opponent };
enum class Decision { ProponentOptimal, OpponentOptimal, Continue };

std::string to_string(Side s);
std::string to_string(Decision d);
std::optional<Decision> parse_decision(std::string_view text);

struct DebaterRecord {
  int round = 0;
  int debater = 0;
  Side side = Side::Proponent;
  std::string argument;
};

struct Proposal {
  std::vector<WorkflowEdit> edits;
  std::string rationale;
  WorkflowGraph proposed_graph;
};

struct JudgeVerdict {
  std::string e_p;
  std::string e_o;
  Decision decision = Decision::Continue;
  /// Set when the reply could not be parsed and Continue was assumed.
  bool defaulted = false;
};

struct RoundRecord {
  int round = 0;
  std::vector<DebaterRecord> debaters;
  std::optional<Proposal> proponent;
  std::optional<Proposal> opponent;
  std::optional<JudgeVerdict> verdict;
  /// Parse failures and other protocol events of this round.
  std::vector<std::string> notes;
};

/// Working memory of one debate. The history text of round r extends that of
/// round r-1: debater arguments, both proposals and the judge's critiques.
struct DebateState {
  int round = 0;
  std::vector<RoundRecord> rounds;

  std::string history_text() const;
};

class ProposalParseFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DebateFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shared inputs of every debate call.
struct DebateContext {
  const DebateConfig& config;
  ChatProvider& provider;
  const std::string& task_brief;
  const std::optional<Gene>& gene;
  const WorkflowGraph& workflow;
};

std::string proposal_prompt_text(const Proposal& p);

/// One debater's argument for the current round (state.round). The prompt
/// carries the history recorded so far, the task brief, the gene and w.
DebaterRecord debater_turn(const DebateState& state, int debater, const DebateContext& ctx);

/// Proponent synthesis over this round's proponent records. One re-ask with
/// the validation errors, then ProposalParseFailure.
Proposal synthesize_proponent(const DebateState& state, const DebateContext& ctx);

/// Opponent synthesis; its edits apply to w, independently of s_p.
Proposal synthesize_opponent(const Proposal& s_p, const DebateState& state, const DebateContext& ctx);

/// A reply that is still malformed after one re-ask yields a defaulted Continue.
JudgeVerdict judge_round(const Proposal& s_p, const Proposal& s_o, const DebateState& state,
                         const DebateContext& ctx);

struct LabeledProposal {
  int round = 0;
  Side side = Side::Proponent;
  const Proposal* proposal = nullptr;
};

struct FinalSelection {
  size_t index = 0;
  std::string reason;
  bool defaulted = false;
};

/// Picks one of `candidates`. An unusable reply after one re-ask falls back to
/// the last candidate.
FinalSelection final_judge(const std::vector<LabeledProposal>& candidates, const DebateState& state,
                           const DebateContext& ctx);

struct DebateOutcome {
  WorkflowGraph graph;
  int rounds_executed = 0;
  bool decided_by_final_judge = false;
  int selected_round = 0;
  Side selected_side = Side::Proponent;
  DebateState state;
};

/// Rounds 1..R; stops at the first non-Continue verdict, otherwise asks the
/// final judge over every proposal made. Throws DebateFailed when no round
/// produced a usable proposal.
DebateOutcome run_debate(const WorkflowGraph& w, const std::string& task_brief,
                         const std::optional<Gene>& gene, const DebateConfig& config, ChatProvider& provider);

nlohmann::json debate_state_to_json(const DebateState& state);

}  // namespace debflow
