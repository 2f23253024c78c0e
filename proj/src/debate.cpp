#include "debflow/debate.hpp"

#include <sstream>

#include "debflow/executor.hpp"
#include "debflow/structured.hpp"

namespace debflow {

void DebateConfig::validate() const {
  if (proponents < 1 || opponents < 1) throw std::invalid_argument("debate needs at least one debater per side");
  if (max_rounds < 1) throw std::invalid_argument("debate needs max_rounds >= 1");
  for (const auto& r : debate_roles()) {
    auto it = prompts.find(r);
    if (it == prompts.end() || it->second.empty()) {
      throw std::invalid_argument("debate prompt template for role '" + r + "' is missing");
    }
  }
}

std::string to_string(Side s) { return s == Side::Proponent ? "proponent" : "opponent"; }

std::string to_string(Decision d) {
  switch (d) {
    case Decision::ProponentOptimal: return "ProponentOptimal";
    case Decision::OpponentOptimal: return "OpponentOptimal";
    case Decision::Continue: return "Continue";
  }
  return "Continue";
}

std::optional<Decision> parse_decision(std::string_view text) {
  for (auto d : {Decision::ProponentOptimal, Decision::OpponentOptimal, Decision::Continue}) {
    if (text == to_string(d)) return d;
  }
  return std::nullopt;
}

namespace {

std::string side_label(Side s) { return s == Side::Proponent ? "Proponent" : "Opponent"; }

std::string edits_text(const std::vector<WorkflowEdit>& edits) {
  auto arr = nlohmann::json::array();
  for (const auto& e : edits) arr.push_back(e);
  return arr.dump(2);
}

std::map<std::string, std::string> base_values(const DebateState& state, const DebateContext& ctx) {
  std::string models;
  for (const auto& m : ctx.config.allowed_models) models += (models.empty() ? "" : ", ") + m;
  if (models.empty()) models = "(any)";
  return {{"task_brief", ctx.task_brief},
          {"gene", gene_prompt_text(ctx.gene)},
          {"workflow", nlohmann::json(ctx.workflow).dump(2)},
          {"history", state.rounds.empty() ? std::string("(no history yet)") : state.history_text()},
          {"models", models},
          {"edit_schema", edit_schema_text()}};
}

ChatRequest make_request(const DebateContext& ctx, const std::string& role_name, const std::string& tag,
                         const std::map<std::string, std::string>& values) {
  ChatRequest req;
  req.model = ctx.config.model;
  req.temperature = ctx.config.temperature;
  req.tag = tag;
  req.messages = {{Role::User, render_prompt(ctx.config.prompts.at(role_name), values)}};
  return req;
}

std::string side_records(const DebateState& state, Side side) {
  std::string out;
  if (state.rounds.empty()) return out;
  for (const auto& d : state.rounds.back().debaters) {
    if (d.side != side) continue;
    out += "[" + side_label(side) + " " + std::to_string(d.debater + 1) + "] " + d.argument + "\n";
  }
  return out;
}

Proposal parse_proposal(const nlohmann::json& j, const DebateContext& ctx, const Proposal* concur_with) {
  Proposal p;
  p.rationale = j.value("rationale", std::string{});
  if (concur_with != nullptr && j.value("concur", false)) {
    p.edits = concur_with->edits;
  } else {
    if (!j.contains("edits") || !j["edits"].is_array()) {
      throw StructuredOutputError("reply needs an \"edits\" array");
    }
    size_t k = 0;
    for (const auto& ej : j["edits"]) {
      try {
        p.edits.push_back(ej.get<WorkflowEdit>());
      } catch (const std::exception& e) {
        throw StructuredOutputError("edit " + std::to_string(k) + " is malformed: " + e.what());
      }
      ++k;
    }
  }
  const auto* models = ctx.config.allowed_models.empty() ? nullptr : &ctx.config.allowed_models;
  WorkflowGraph g = ctx.workflow;
  for (size_t k = 0; k < p.edits.size(); ++k) {
    try {
      g = apply_edit(g, p.edits[k], models);
    } catch (const EditRejected& e) {
      throw StructuredOutputError("edit " + std::to_string(k) + " (" + edit_kind_name(p.edits[k]) +
                                  ") breaks the workflow: " + e.report().summary());
    }
  }
  p.proposed_graph = std::move(g);
  return p;
}

}  // namespace

std::string DebateState::history_text() const {
  std::ostringstream os;
  for (const auto& r : rounds) {
    os << "=== Round " << r.round << " ===\n";
    for (const auto& d : r.debaters) {
      os << "[" << side_label(d.side) << " " << d.debater + 1 << "] " << d.argument << '\n';
    }
    if (r.proponent) os << "Proponent proposal:\n" << proposal_prompt_text(*r.proponent) << '\n';
    if (r.opponent) os << "Opponent proposal:\n" << proposal_prompt_text(*r.opponent) << '\n';
    for (const auto& n : r.notes) os << "Note: " << n << '\n';
    if (r.verdict) {
      os << "Judge decision: " << to_string(r.verdict->decision) << "\n  on proponents: " << r.verdict->e_p
         << "\n  on opponents: " << r.verdict->e_o << '\n';
    }
  }
  return os.str();
}

std::string proposal_prompt_text(const Proposal& p) {
  return "rationale: " + p.rationale + "\nedits: " + edits_text(p.edits);
}

DebaterRecord debater_turn(const DebateState& state, int debater, const DebateContext& ctx) {
  DebaterRecord rec;
  rec.round = state.round;
  rec.debater = debater;
  rec.side = debater < ctx.config.proponents ? Side::Proponent : Side::Opponent;
  auto values = base_values(state, ctx);
  values["side"] = to_string(rec.side);
  values["debater_index"] = std::to_string(debater + 1);
  auto req = make_request(ctx, role::kDebater, "debater", values);
  rec.argument = ctx.provider.complete(req).content;
  return rec;
}

Proposal synthesize_proponent(const DebateState& state, const DebateContext& ctx) {
  auto values = base_values(state, ctx);
  values["records"] = side_records(state, Side::Proponent);
  auto req = make_request(ctx, role::kProponentSynthesis, "proponent-synthesis", values);
  auto reply = ask_structured<Proposal>(ctx.provider, req,
                                        [&](const nlohmann::json& j) { return parse_proposal(j, ctx, nullptr); });
  if (!reply.value) throw ProposalParseFailure("proponent synthesis failed: " + reply.last_error);
  return *reply.value;
}

Proposal synthesize_opponent(const Proposal& s_p, const DebateState& state, const DebateContext& ctx) {
  auto values = base_values(state, ctx);
  values["records"] = side_records(state, Side::Opponent);
  values["proponent_rationale"] = s_p.rationale;
  values["proponent_edits"] = edits_text(s_p.edits);
  auto req = make_request(ctx, role::kOpponentSynthesis, "opponent-synthesis", values);
  auto reply = ask_structured<Proposal>(ctx.provider, req,
                                        [&](const nlohmann::json& j) { return parse_proposal(j, ctx, &s_p); });
  if (!reply.value) throw ProposalParseFailure("opponent synthesis failed: " + reply.last_error);
  return *reply.value;
}

JudgeVerdict judge_round(const Proposal& s_p, const Proposal& s_o, const DebateState& state,
                         const DebateContext& ctx) {
  auto values = base_values(state, ctx);
  values["proponent_proposal"] = proposal_prompt_text(s_p);
  values["opponent_proposal"] = proposal_prompt_text(s_o);
  auto req = make_request(ctx, role::kJudge, "judge", values);
  auto reply = ask_structured<JudgeVerdict>(ctx.provider, req, [](const nlohmann::json& j) {
    JudgeVerdict v;
    auto text = j.value("decision", std::string{});
    auto d = parse_decision(text);
    if (!d) {
      throw StructuredOutputError("decision '" + text +
                                  "' must be exactly one of ProponentOptimal, OpponentOptimal, Continue");
    }
    v.decision = *d;
    v.e_p = j.value("e_p", std::string{});
    v.e_o = j.value("e_o", std::string{});
    return v;
  });
  if (reply.value) return *reply.value;
  JudgeVerdict v;
  v.decision = Decision::Continue;
  v.defaulted = true;
  return v;
}

FinalSelection final_judge(const std::vector<LabeledProposal>& candidates, const DebateState& state,
                           const DebateContext& ctx) {
  std::string listing;
  for (size_t k = 0; k < candidates.size(); ++k) {
    const auto& c = candidates[k];
    listing += "[" + std::to_string(k) + "] round " + std::to_string(c.round) + " " + to_string(c.side) +
               " proposal\n" + proposal_prompt_text(*c.proposal) + "\n";
  }
  auto values = base_values(state, ctx);
  values["proposals"] = listing;
  auto req = make_request(ctx, role::kFinalJudge, "final-judge", values);
  const auto n = candidates.size();
  auto reply = ask_structured<FinalSelection>(ctx.provider, req, [n](const nlohmann::json& j) {
    if (!j.contains("selected") || !j["selected"].is_number_integer()) {
      throw StructuredOutputError("\"selected\" must be an integer index");
    }
    auto idx = j["selected"].get<int64_t>();
    if (idx < 0 || static_cast<size_t>(idx) >= n) {
      throw StructuredOutputError("\"selected\" must be between 0 and " + std::to_string(n - 1));
    }
    return FinalSelection{static_cast<size_t>(idx), j.value("reason", std::string{}), false};
  });
  if (reply.value) return *reply.value;
  return FinalSelection{n - 1, "fallback: final judge reply unusable (" + reply.last_error + ")", true};
}

DebateOutcome run_debate(const WorkflowGraph& w, const std::string& task_brief, const std::optional<Gene>& gene,
                         const DebateConfig& config, ChatProvider& provider) {
  config.validate();
  if (auto report = validate_graph(w); !report.ok) throw InvalidGraph(std::move(report));
  DebateContext ctx{config, provider, task_brief, gene, w};
  DebateOutcome out;
  auto& state = out.state;

  for (int r = 1; r <= config.max_rounds; ++r) {
    state.round = r;
    out.rounds_executed = r;
    RoundRecord round;
    round.round = r;
    for (int i = 0; i < config.debaters(); ++i) round.debaters.push_back(debater_turn(state, i, ctx));
    state.rounds.push_back(std::move(round));
    auto& cur = state.rounds.back();

    try {
      cur.proponent = synthesize_proponent(state, ctx);
    } catch (const ProposalParseFailure& e) {
      cur.notes.push_back(e.what());
      continue;
    }
    try {
      cur.opponent = synthesize_opponent(*cur.proponent, state, ctx);
    } catch (const ProposalParseFailure& e) {
      cur.notes.push_back(e.what());
      continue;
    }
    auto verdict = judge_round(*cur.proponent, *cur.opponent, state, ctx);
    if (verdict.defaulted) cur.notes.push_back("judge reply unusable; treated as Continue");
    cur.verdict = verdict;
    if (verdict.decision == Decision::ProponentOptimal) {
      out.graph = cur.proponent->proposed_graph;
      out.selected_round = r;
      out.selected_side = Side::Proponent;
      return out;
    }
    if (verdict.decision == Decision::OpponentOptimal) {
      out.graph = cur.opponent->proposed_graph;
      out.selected_round = r;
      out.selected_side = Side::Opponent;
      return out;
    }
  }

  std::vector<LabeledProposal> candidates;
  for (const auto& round : state.rounds) {
    if (round.proponent) candidates.push_back({round.round, Side::Proponent, &*round.proponent});
    if (round.opponent) candidates.push_back({round.round, Side::Opponent, &*round.opponent});
  }
  if (candidates.empty()) {
    throw DebateFailed("no round of the debate produced a usable proposal");
  }
  auto selection = final_judge(candidates, state, ctx);
  const auto& chosen = candidates[selection.index];
  out.graph = chosen.proposal->proposed_graph;
  out.decided_by_final_judge = true;
  out.selected_round = chosen.round;
  out.selected_side = chosen.side;
  return out;
}

nlohmann::json debate_state_to_json(const DebateState& state) {
  auto proposal_json = [](const Proposal& p) {
    auto edits = nlohmann::json::array();
    for (const auto& e : p.edits) edits.push_back(e);
    return nlohmann::json{{"rationale", p.rationale},
                          {"edits", edits},
                          {"fingerprint", fingerprint(p.proposed_graph)}};
  };
  auto rounds = nlohmann::json::array();
  for (const auto& r : state.rounds) {
    auto debaters = nlohmann::json::array();
    for (const auto& d : r.debaters) {
      debaters.push_back({{"debater", d.debater + 1}, {"side", to_string(d.side)}, {"argument", d.argument}});
    }
    nlohmann::json rj{{"round", r.round}, {"debaters", debaters}, {"notes", r.notes}};
    rj["proponent"] = r.proponent ? proposal_json(*r.proponent) : nlohmann::json();
    rj["opponent"] = r.opponent ? proposal_json(*r.opponent) : nlohmann::json();
    if (r.verdict) {
      rj["verdict"] = {{"decision", to_string(r.verdict->decision)},
                       {"e_p", r.verdict->e_p},
                       {"e_o", r.verdict->e_o},
                       {"defaulted", r.verdict->defaulted}};
    } else {
      rj["verdict"] = nullptr;
    }
    rounds.push_back(std::move(rj));
  }
  return rounds;
}

}  // namespace debflow
