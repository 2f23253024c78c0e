#include "debflow/executor.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <set>

namespace debflow {

std::string to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::Math: return "math";
    case DomainTag::QA: return "qa";
    case DomainTag::Code: return "code";
    case DomainTag::Other: return "other";
  }
  return "other";
}

std::optional<DomainTag> parse_domain_tag(std::string_view text) {
  for (auto t : {DomainTag::Math, DomainTag::QA, DomainTag::Code, DomainTag::Other}) {
    if (text == to_string(t)) return t;
  }
  return std::nullopt;
}

std::string to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::Success: return "Success";
    case NodeStatus::ProviderError: return "ProviderError";
    case NodeStatus::ParseError: return "ParseError";
    case NodeStatus::Skipped: return "Skipped";
  }
  return "Skipped";
}

std::string to_string(TrajectoryStatus s) {
  return s == TrajectoryStatus::Completed ? "Completed" : "Failed";
}

const NodeRecord* Trajectory::find(std::string_view node_id) const {
  for (const auto& r : records) {
    if (r.node_id == node_id) return &r;
  }
  return nullptr;
}

MissingBinding::MissingBinding(std::string placeholder)
    : std::runtime_error("missing binding for placeholder '" + placeholder + "'"),
      placeholder_(std::move(placeholder)) {}

std::string render_prompt(std::string_view templ, const std::map<std::string, std::string>& bindings) {
  auto ident_start = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
  auto ident_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  std::string out;
  out.reserve(templ.size());
  size_t i = 0;
  while (i < templ.size()) {
    if (templ[i] == '{' && i + 1 < templ.size() && ident_start(templ[i + 1])) {
      size_t j = i + 1;
      while (j < templ.size() && ident_char(templ[j])) ++j;
      if (j < templ.size() && templ[j] == '}') {
        std::string name(templ.substr(i + 1, j - i - 1));
        auto it = bindings.find(name);
        if (it == bindings.end()) throw MissingBinding(name);
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out += templ[i++];
  }
  return out;
}

namespace {

std::string task_field(const TaskInstance& task, std::string_view field) {
  if (field == "input") return task.input;
  if (field == "id") return task.id;
  if (field == "domain_tag") return to_string(task.domain_tag);
  throw std::invalid_argument("unknown task field '" + std::string(field) + "'");
}

NodeRecord run_node(const OperatorSpec& node, const std::map<std::string, std::string>& bindings,
                    ChatProvider& provider, const ExecutorOptions& options) {
  NodeRecord rec;
  rec.node_id = node.id;
  try {
    rec.rendered_prompt = render_prompt(node.prompt_template, bindings);
  } catch (const MissingBinding& e) {
    rec.status = NodeStatus::ParseError;
    rec.error = e.what();
    return rec;
  }
  ChatRequest req;
  req.model = node.model_ref;
  req.messages = {{Role::User, rec.rendered_prompt}};
  req.temperature = node.temperature.value_or(options.default_temperature);
  req.tag = "node:" + node.id;
  req.timeout = options.node_timeout;
  try {
    auto resp = provider.complete(req);
    rec.response = resp.content;
    rec.prompt_tokens = resp.prompt_tokens;
    rec.completion_tokens = resp.completion_tokens;
    rec.latency_ms = resp.provider_latency_ms;
    auto blank = std::all_of(resp.content.begin(), resp.content.end(),
                             [](unsigned char c) { return std::isspace(c) != 0; });
    if (blank) {
      rec.status = NodeStatus::ParseError;
      rec.error = kEmptyResponseError;
    } else {
      rec.status = NodeStatus::Success;
    }
  } catch (const ProviderError& e) {
    rec.status = NodeStatus::ProviderError;
    rec.error = error_class_name(e) + ": " + e.what();
  } catch (const std::exception& e) {
    rec.status = NodeStatus::ProviderError;
    rec.error = e.what();
  }
  return rec;
}

}  // namespace

Trajectory execute_workflow(const WorkflowGraph& graph, const TaskInstance& task,
                            ChatProvider& provider, const ExecutorOptions& options) {
  const auto order = topological_order(graph);  // throws on invalid graphs

  std::map<std::string, std::vector<std::string>> preds;
  for (const auto& e : graph.edges) preds[e.to].push_back(e.from);
  std::map<std::string, std::string> producer_of;
  for (const auto& n : graph.nodes) producer_of[n.output_name] = n.id;

  std::map<std::string, NodeRecord> done;
  std::set<std::string> pending(order.begin(), order.end());
  const size_t width = static_cast<size_t>(std::max(1, options.max_concurrency));

  while (!pending.empty()) {
    std::vector<const OperatorSpec*> wave;
    for (const auto& id : order) {
      if (!pending.count(id)) continue;
      const auto& ps = preds[id];
      if (std::all_of(ps.begin(), ps.end(), [&](const std::string& p) { return done.count(p) > 0; })) {
        wave.push_back(graph.find_node(id));
      }
    }

    std::vector<std::pair<const OperatorSpec*, std::map<std::string, std::string>>> runnable;
    for (const auto* node : wave) {
      pending.erase(node->id);
      std::string failed_pred;
      for (const auto& p : preds[node->id]) {
        if (done.at(p).status != NodeStatus::Success) {
          failed_pred = p;
          break;
        }
      }
      if (!failed_pred.empty()) {
        NodeRecord rec;
        rec.node_id = node->id;
        rec.status = NodeStatus::Skipped;
        rec.error = "upstream node '" + failed_pred + "' did not succeed";
        done.emplace(node->id, std::move(rec));
        continue;
      }
      std::map<std::string, std::string> values;
      for (const auto& [name, source] : node->input_bindings) {
        if (source.rfind(kTaskFieldPrefix, 0) == 0) {
          values[name] = task_field(task, std::string_view(source).substr(kTaskFieldPrefix.size()));
        } else {
          values[name] = done.at(producer_of.at(source)).response;
        }
      }
      runnable.emplace_back(node, std::move(values));
    }

    for (size_t start = 0; start < runnable.size(); start += width) {
      const size_t end = std::min(runnable.size(), start + width);
      if (end - start == 1) {
        auto& [node, values] = runnable[start];
        done.emplace(node->id, run_node(*node, values, provider, options));
        continue;
      }
      std::vector<std::future<NodeRecord>> futures;
      for (size_t k = start; k < end; ++k) {
        auto& [node, values] = runnable[k];
        futures.push_back(std::async(std::launch::async, [&, node = node] {
          return run_node(*node, values, provider, options);
        }));
      }
      for (auto& f : futures) {
        auto rec = f.get();
        done.emplace(rec.node_id, std::move(rec));
      }
    }
  }

  Trajectory t;
  t.task_id = task.id;
  t.graph_fingerprint = fingerprint(graph);
  for (const auto& id : order) t.records.push_back(std::move(done.at(id)));
  const auto* exit_rec = t.find(graph.exit_id);
  if (exit_rec != nullptr && exit_rec->status == NodeStatus::Success) {
    t.overall_status = TrajectoryStatus::Completed;
    t.final_answer = exit_rec->response;
  } else {
    t.overall_status = TrajectoryStatus::Failed;
  }
  return t;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const TaskInstance& t) {
  j = nlohmann::json{{"id", t.id}, {"input", t.input}, {"gold", t.gold}, {"domain_tag", to_string(t.domain_tag)}};
}

void from_json(const nlohmann::json& j, TaskInstance& t) {
  t.id = j.at("id").get<std::string>();
  t.input = j.at("input").get<std::string>();
  t.gold = j.at("gold").get<std::string>();
  auto tag_text = j.value("domain_tag", std::string("other"));
  auto tag = parse_domain_tag(tag_text);
  if (!tag) throw std::invalid_argument("unknown domain_tag '" + tag_text + "'");
  t.domain_tag = *tag;
}

void to_json(nlohmann::json& j, const NodeRecord& r) {
  j = nlohmann::json{{"node_id", r.node_id},
                     {"rendered_prompt", r.rendered_prompt},
                     {"response", r.response},
                     {"status", to_string(r.status)},
                     {"prompt_tokens", r.prompt_tokens},
                     {"completion_tokens", r.completion_tokens},
                     {"latency_ms", r.latency_ms},
                     {"error", r.error}};
}

void from_json(const nlohmann::json& j, NodeRecord& r) {
  r.node_id = j.at("node_id").get<std::string>();
  r.rendered_prompt = j.value("rendered_prompt", std::string{});
  r.response = j.value("response", std::string{});
  auto status = j.at("status").get<std::string>();
  r.status = NodeStatus::Skipped;
  for (auto s : {NodeStatus::Success, NodeStatus::ProviderError, NodeStatus::ParseError, NodeStatus::Skipped}) {
    if (status == to_string(s)) r.status = s;
  }
  r.prompt_tokens = j.value("prompt_tokens", int64_t{0});
  r.completion_tokens = j.value("completion_tokens", int64_t{0});
  r.latency_ms = j.value("latency_ms", int64_t{0});
  r.error = j.value("error", std::string{});
}

void to_json(nlohmann::json& j, const Trajectory& t) {
  j = nlohmann::json{{"task_id", t.task_id},
                     {"graph_fingerprint", t.graph_fingerprint},
                     {"records", t.records},
                     {"final_answer", t.final_answer ? nlohmann::json(*t.final_answer) : nlohmann::json()},
                     {"overall_status", to_string(t.overall_status)}};
}

void from_json(const nlohmann::json& j, Trajectory& t) {
  t.task_id = j.at("task_id").get<std::string>();
  t.graph_fingerprint = j.at("graph_fingerprint").get<std::string>();
  t.records = j.at("records").get<std::vector<NodeRecord>>();
  if (j.contains("final_answer") && !j["final_answer"].is_null()) {
    t.final_answer = j["final_answer"].get<std::string>();
  } else {
    t.final_answer.reset();
  }
  t.overall_status = j.at("overall_status").get<std::string>() == "Completed" ? TrajectoryStatus::Completed
                                                                               : TrajectoryStatus::Failed;
}

}  // namespace debflow
