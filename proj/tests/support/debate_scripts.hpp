#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debflow/debate.hpp"
#include "debflow/scripted_provider.hpp"
#include "fixture.hpp"

namespace debflow::testing {

inline const std::string kBrief = "Answer grade-school arithmetic questions.";

inline std::string fenced(const nlohmann::json& j) { return "```json\n" + j.dump() + "\n```"; }

inline OperatorSpec added_node(const std::string& id, OperatorKind kind, const std::string& label) {
  auto n = fixture_ensemble_node("m");
  n.id = id;
  n.kind = kind;
  n.prompt_template = label + "\n" + n.prompt_template;
  n.output_name = "final_" + id;
  return n;
}

inline nlohmann::json add_after_io(const OperatorSpec& node) {
  return {{"kind", "AddNode"}, {"node", node}, {"inputs_from", {"io"}}, {"set_exit", true}};
}

/// Proposal reply adding one node after "io"; `label` makes each proposal's
/// graph distinct.
inline std::string proposal_reply(const std::string& label, OperatorKind kind = OperatorKind::Ensemble) {
  return fenced({{"rationale", "rationale " + label}, {"edits", {add_after_io(added_node("ens", kind, label))}}});
}

inline std::string verdict_reply(Decision d) {
  return fenced({{"decision", to_string(d)}, {"e_p", "critique of proponents"}, {"e_o", "critique of opponents"}});
}

inline WorkflowGraph graph_for(const std::string& label, OperatorKind kind = OperatorKind::Ensemble) {
  edit::AddNode e{added_node("ens", kind, label), {"io"}, true};
  return apply_edit(make_io_workflow("m"), e);
}

inline DebateConfig config_for(int n, int rounds) {
  DebateConfig c;
  c.proponents = n / 2;
  c.opponents = n - n / 2;
  c.max_rounds = rounds;
  c.model = "judge-model";
  return c;
}

/// Every reply of a debate whose round r has verdict `verdicts[r-1]`.
inline std::vector<ScriptEntry> debate_script(int n, const std::vector<Decision>& verdicts,
                                       std::optional<int> final_pick = std::nullopt) {
  std::vector<ScriptEntry> s;
  for (size_t r = 1; r <= verdicts.size(); ++r) {
    for (int i = 0; i < n; ++i) {
      s.push_back(ScriptEntry::keyed("debater", "round " + std::to_string(r) + " argument " + std::to_string(i + 1)));
    }
    s.push_back(ScriptEntry::keyed("proponent-synthesis", proposal_reply("r" + std::to_string(r) + "p")));
    s.push_back(ScriptEntry::keyed("opponent-synthesis", proposal_reply("r" + std::to_string(r) + "o")));
    s.push_back(ScriptEntry::keyed("judge", verdict_reply(verdicts[r - 1])));
  }
  if (final_pick) {
    s.push_back(ScriptEntry::keyed("final-judge", fenced({{"selected", *final_pick}, {"reason", "best"}})));
  }
  return s;
}

}  // namespace debflow::testing
