#include "debflow/prompts.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace debflow {

namespace {

const char* kDebaterPrompt = R"(You are debater {debater_index} in a structured debate about improving an LLM agentic workflow. You argue for the {side} side.
Proponents propose concrete changes to the workflow. Opponents scrutinize the proponents' case, point out weaknesses and offer a better alternative.

Task family:
{task_brief}

Current workflow (JSON graph of operators; operator kinds: IO, Ensemble, ReviewAndRevise, Custom):
{workflow}

Failure analysis from earlier runs:
{gene}

Debate history so far:
{history}

Give your argument in at most 200 words. Be specific about which nodes, prompts or edges should change and why.)";

const char* kProponentPrompt = R"(You summarize the proponent side of a debate about improving an LLM agentic workflow into one concrete proposal.

Task family:
{task_brief}

Current workflow:
{workflow}

Failure analysis from earlier runs:
{gene}

Proponent arguments this round:
{records}

Debate history:
{history}

Available models: {models}

{edit_schema}

Reply with a single fenced ```json block holding "rationale" (string) and "edits" (array of edits applied in order to the current workflow).)";

const char* kOpponentPrompt = R"(You summarize the opponent side of a debate about improving an LLM agentic workflow. Evaluate the proponents' proposal and produce a refined alternative.

Task family:
{task_brief}

Current workflow:
{workflow}

Failure analysis from earlier runs:
{gene}

Proponent proposal rationale:
{proponent_rationale}

Proponent edits:
{proponent_edits}

Opponent arguments this round:
{records}

Debate history:
{history}

Available models: {models}

{edit_schema}

Reply with a single fenced ```json block holding "rationale" (string) and "edits" (array of edits applied in order to the current workflow, not to the proponents' result). If you fully agree with the proponents you may reply with "concur": true instead of "edits".)";

const char* kJudgePrompt = R"(You judge a debate about improving an LLM agentic workflow. Weigh both proposals against the task family and the failure analysis.

Task family:
{task_brief}

Current workflow:
{workflow}

Failure analysis from earlier runs:
{gene}

Proponent proposal:
{proponent_proposal}

Opponent proposal:
{opponent_proposal}

Debate history:
{history}

Write an evaluation of the strengths and weaknesses of each side. Then decide: "ProponentOptimal" if the proponent proposal should be adopted, "OpponentOptimal" if the opponent proposal should be adopted, or "Continue" if neither is good enough yet and the debate needs another round. When both are acceptable, still pick the stronger one.

Reply with a single fenced ```json block holding "e_p" (string), "e_o" (string) and "decision" (one of "ProponentOptimal", "OpponentOptimal", "Continue").)";

const char* kFinalJudgePrompt = R"(The debate about improving an LLM agentic workflow reached its round limit without a decision. Select the best proposal based on the whole debate.

Task family:
{task_brief}

Failure analysis from earlier runs:
{gene}

Proposals:
{proposals}

Debate history:
{history}

Reply with a single fenced ```json block holding "selected" (the integer index of the chosen proposal) and "reason" (string).)";

const char* kGeneExtractPrompt = R"(You are an error-correcting agent. A workflow run on one task went wrong. Dissect the run and identify the steps that caused the failure.

Workflow:
{workflow}

Task input:
{task_input}

Outcome: {outcome}

Node-by-node trajectory:
{trajectory}

Valid node ids: {node_ids}

Reply with a single fenced ```json block holding:
  "failing_node_ids": array of node ids responsible for the failure,
  "error_category": one of "ProviderFailure", "ParseFailure", "WrongAnswer", "StructuralGap",
  "diagnosis": what went wrong,
  "directive": one actionable correction for the next round of workflow design.)";

const char* kGeneRefinePrompt = R"(You maintain a memory of workflow failure analyses. Merge the new analysis with the related past analyses into one dominant analysis whose directive addresses the recurring pattern.

New analysis:
{gene}

Related past analyses:
{memory}

Reply with a single fenced ```json block holding "error_category" (one of "ProviderFailure", "ParseFailure", "WrongAnswer", "StructuralGap"), "diagnosis" and "directive".)";

const char* kEditSchema = R"(Edit contract. Each edit is a JSON object with a "kind" field:
  AddNode: "node" (operator object), optional "inputs_from" (ids of existing nodes that feed it; one edge each), optional "set_exit" (true makes it the exit node)
  RemoveNode: "node_id"
  AddEdge: "from", "to"
  RemoveEdge: "from", "to"
  ReplacePrompt: "node_id", "prompt_template", optional "input_bindings"
  ReplaceModel: "node_id", "model_ref"
An operator object has "id", "kind" (IO | Ensemble | ReviewAndRevise | Custom), "model_ref", "prompt_template", "tool_refs" (array), "input_bindings" and "output_name".
Placeholders are written as a name in curly braces. Every placeholder needs one input binding, mapping the placeholder name to either "task.input" or the output_name of a node with an edge into this node.
The graph must stay acyclic and keep exactly one exit node. The exit node's reply is scored as the final answer, so its prompt must ask for the bare answer and nothing else.)";

}  // namespace

const std::vector<std::string>& prompt_roles() {
  static const std::vector<std::string> roles = {role::kDebater,      role::kProponentSynthesis,
                                                 role::kOpponentSynthesis, role::kJudge,
                                                 role::kFinalJudge,    role::kGeneExtract,
                                                 role::kGeneRefine};
  return roles;
}

const std::vector<std::string>& debate_roles() {
  static const std::vector<std::string> roles(prompt_roles().begin(), prompt_roles().begin() + 5);
  return roles;
}

std::string default_prompt(const std::string& role) {
  static const std::map<std::string, const char*> defaults = {
      {role::kDebater, kDebaterPrompt},         {role::kProponentSynthesis, kProponentPrompt},
      {role::kOpponentSynthesis, kOpponentPrompt}, {role::kJudge, kJudgePrompt},
      {role::kFinalJudge, kFinalJudgePrompt},   {role::kGeneExtract, kGeneExtractPrompt},
      {role::kGeneRefine, kGeneRefinePrompt}};
  auto it = defaults.find(role);
  if (it == defaults.end()) throw std::invalid_argument("unknown prompt role '" + role + "'");
  return it->second;
}

PromptSet default_prompts() {
  PromptSet set;
  for (const auto& r : prompt_roles()) set[r] = default_prompt(r);
  return set;
}

PromptSet load_prompt_dir(const std::string& dir) {
  auto set = default_prompts();
  for (const auto& r : prompt_roles()) {
    std::ifstream in(std::filesystem::path(dir) / (r + ".txt"));
    if (!in) continue;
    std::ostringstream os;
    os << in.rdbuf();
    set[r] = os.str();
  }
  return set;
}

void write_prompt_dir(const PromptSet& prompts, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [r, text] : prompts) {
    std::ofstream out(std::filesystem::path(dir) / (r + ".txt"));
    if (!out) throw std::runtime_error("cannot write prompt file for role " + r);
    out << text;
  }
}

const std::string& edit_schema_text() {
  static const std::string text = kEditSchema;
  return text;
}

}  // namespace debflow
