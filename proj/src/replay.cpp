#include "debflow/replay.hpp"

#include <map>

namespace debflow {

namespace {

bool is_event(const nlohmann::json& e, const char* name, int iteration) {
  return e.value("event", std::string{}) == name && e.value("iteration", -1) == iteration;
}

ChatRequest request_of(const nlohmann::json& call) {
  ChatRequest r;
  r.model = call.at("model").get<std::string>();
  r.tag = call.value("tag", std::string{});
  r.temperature = call.value("temperature", 1.0);
  for (const auto& m : call.at("messages")) {
    const auto role = m.at("role").get<std::string>();
    r.messages.push_back({role == "system" ? Role::System : role == "assistant" ? Role::Assistant : Role::User,
                          m.at("content").get<std::string>()});
  }
  return r;
}

nlohmann::json without_latency(nlohmann::json t) {
  for (auto& r : t["records"]) r.erase("latency_ms");
  return t;
}

std::string first_difference(const nlohmann::json& expected, const nlohmann::json& actual) {
  for (const auto& [k, v] : expected.items()) {
    if (!actual.contains(k)) return "field '" + k + "' missing";
    if (actual[k] != v) return k + ": logged " + v.dump() + ", replayed " + actual[k].dump();
  }
  return "records differ";
}

}  // namespace

std::vector<ScriptEntry> evaluation_script(const std::vector<nlohmann::json>& events, int iteration) {
  std::vector<ScriptEntry> script;
  for (const auto& e : events) {
    if (!is_event(e, "llm_call", iteration) || e.value("phase", std::string{}) != "evaluation") continue;
    const auto req = request_of(e);
    ScriptEntry entry;
    entry.key = req.tag;
    entry.equals = render_request(req);
    if (e.contains("response")) {
      entry.response = e["response"].get<std::string>();
      entry.prompt_tokens = e.value("prompt_tokens", int64_t{0});
      entry.completion_tokens = e.value("completion_tokens", int64_t{0});
    } else {
      entry.error = e.value("error", std::string("ProviderError"));
      entry.error_message = e.value("error_message", std::string{});
    }
    script.push_back(std::move(entry));
  }
  return script;
}

ReplayResult replay_iteration(const std::vector<nlohmann::json>& events, int iteration,
                              const std::vector<TaskInstance>& tasks, const ExecutorOptions& options) {
  const nlohmann::json* evaluation = nullptr;
  for (const auto& e : events) {
    if (is_event(e, "evaluation", iteration)) evaluation = &e;
  }
  if (!evaluation) {
    throw ReplayError("run log has no evaluation for iteration " + std::to_string(iteration));
  }
  const auto graph = evaluation->at("graph").get<WorkflowGraph>();
  const auto& logged = evaluation->at("trajectories");

  std::map<std::string, const TaskInstance*> by_id;
  for (const auto& t : tasks) by_id[t.id] = &t;

  ScriptedProvider provider(evaluation_script(events, iteration));
  ReplayResult result;
  result.iteration = iteration;
  result.fingerprint = evaluation->value("fingerprint", std::string{});

  for (const auto& expected_json : logged) {
    const auto task_id = expected_json.at("task_id").get<std::string>();
    auto it = by_id.find(task_id);
    if (it == by_id.end()) throw ReplayError("task '" + task_id + "' from the run log is not in the task file");
    ++result.tasks;
    const auto expected = without_latency(expected_json);
    const auto actual = without_latency(nlohmann::json(execute_workflow(graph, *it->second, provider, options)));
    if (expected == actual) continue;

    const auto& er = expected["records"];
    const auto& ar = actual["records"];
    for (size_t i = 0; i < std::max(er.size(), ar.size()); ++i) {
      if (i >= er.size() || i >= ar.size()) {
        const auto& present = i < er.size() ? er[i] : ar[i];
        result.divergence = ReplayDivergence{task_id, present.value("node_id", std::string{}), "record count differs"};
        break;
      }
      if (er[i] != ar[i]) {
        result.divergence = ReplayDivergence{task_id, er[i].value("node_id", std::string{}),
                                             first_difference(er[i], ar[i])};
        break;
      }
    }
    if (!result.divergence) result.divergence = ReplayDivergence{task_id, "", first_difference(expected, actual)};
    break;
  }
  result.calls = provider.consumed();
  return result;
}

}  // namespace debflow
