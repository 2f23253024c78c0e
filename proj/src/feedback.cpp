#include "debflow/feedback.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "debflow/executor.hpp"
#include "debflow/structured.hpp"

namespace debflow {

std::string to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::ProviderFailure: return "ProviderFailure";
    case ErrorCategory::ParseFailure: return "ParseFailure";
    case ErrorCategory::WrongAnswer: return "WrongAnswer";
    case ErrorCategory::StructuralGap: return "StructuralGap";
  }
  return "WrongAnswer";
}

std::optional<ErrorCategory> parse_error_category(std::string_view text) {
  for (auto c : {ErrorCategory::ProviderFailure, ErrorCategory::ParseFailure, ErrorCategory::WrongAnswer,
                 ErrorCategory::StructuralGap}) {
    if (text == to_string(c)) return c;
  }
  return std::nullopt;
}

bool kinds_overlap(const Gene& a, const Gene& b) {
  for (auto k : a.failing_node_kinds) {
    if (std::find(b.failing_node_kinds.begin(), b.failing_node_kinds.end(), k) != b.failing_node_kinds.end()) {
      return true;
    }
  }
  return false;
}

std::string gene_prompt_text(const std::optional<Gene>& gene) {
  if (!gene) return kNoGeneText;
  std::ostringstream os;
  os << "category: " << to_string(gene->error_category) << '\n';
  os << "failing nodes:";
  for (size_t i = 0; i < gene->failing_node_ids.size(); ++i) {
    os << (i ? ", " : " ") << gene->failing_node_ids[i];
  }
  os << "\nfailing node kinds:";
  for (size_t i = 0; i < gene->failing_node_kinds.size(); ++i) {
    os << (i ? ", " : " ") << to_string(gene->failing_node_kinds[i]);
  }
  os << "\ndiagnosis: " << gene->diagnosis << "\ndirective: " << gene->directive;
  return os.str();
}

// ---------------------------------------------------------------------------
// MemoryStore

MemoryStore::MemoryStore(MemoryConfig config) : config_(config) {}

bool MemoryStore::store(const Gene& gene) {
  int recurrences = 1;
  for (const auto& g : genes()) {
    if (g.id != gene.id && g.error_category == gene.error_category && kinds_overlap(g, gene)) ++recurrences;
  }
  sequence_[gene.id] = next_sequence_++;

  std::erase_if(short_term_, [&](const Gene& g) { return g.id == gene.id; });
  short_term_.push_back(gene);
  while (short_term_.size() > config_.short_term_capacity) short_term_.pop_front();

  bool promoted = false;
  if (recurrences >= config_.promotion_threshold && config_.long_term_capacity > 0) {
    std::erase_if(long_term_, [&](const Gene& g) { return g.id == gene.id; });
    long_term_.push_back(gene);
    while (long_term_.size() > config_.long_term_capacity) long_term_.pop_front();
    promoted = true;
  }

  for (auto it = sequence_.begin(); it != sequence_.end();) {
    auto held = [&](const std::deque<Gene>& tier) {
      return std::any_of(tier.begin(), tier.end(), [&](const Gene& g) { return g.id == it->first; });
    };
    it = held(short_term_) || held(long_term_) ? std::next(it) : sequence_.erase(it);
  }
  return promoted;
}

std::vector<Gene> MemoryStore::genes() const {
  std::vector<Gene> out;
  std::set<std::string> seen;
  for (const auto* tier : {&long_term_, &short_term_}) {
    for (const auto& g : *tier) {
      if (seen.insert(g.id).second) out.push_back(g);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [&](const Gene& a, const Gene& b) { return sequence_of(a.id) < sequence_of(b.id); });
  return out;
}

uint64_t MemoryStore::sequence_of(const std::string& gene_id) const {
  auto it = sequence_.find(gene_id);
  return it == sequence_.end() ? 0 : it->second;
}

MemoryStore store_gene(const Gene& gene, MemoryStore memory) {
  memory.store(gene);
  return memory;
}

// ---------------------------------------------------------------------------
// Agents

namespace {

std::string truncate(const std::string& text, size_t limit) {
  if (text.size() <= limit) return text;
  return text.substr(0, limit) + " ...[truncated]";
}

std::vector<OperatorKind> kinds_of(const WorkflowGraph& graph, const std::vector<std::string>& ids) {
  std::set<OperatorKind> kinds;
  for (const auto& id : ids) {
    if (const auto* n = graph.find_node(id)) kinds.insert(n->kind);
  }
  return {kinds.begin(), kinds.end()};
}

}  // namespace

std::string trajectory_prompt_text(const Trajectory& t, int token_budget) {
  const size_t chars = static_cast<size_t>(std::max(0, token_budget)) * 4;
  const size_t per_field = std::max<size_t>(64, chars / std::max<size_t>(1, 2 * t.records.size()));
  std::ostringstream os;
  for (const auto& r : t.records) {
    os << "[" << r.node_id << "] status=" << to_string(r.status);
    if (!r.error.empty()) os << " error=" << r.error;
    os << "\n  prompt: " << truncate(r.rendered_prompt, per_field) << "\n  response: "
       << truncate(r.response, per_field) << '\n';
  }
  return os.str();
}

Gene extract_initial_gene(const Trajectory& trajectory, const WorkflowGraph& graph, const TaskInstance& task,
                          double score, ChatProvider& provider, const FeedbackAgentOptions& options) {
  const bool completed = trajectory.overall_status == TrajectoryStatus::Completed;
  if (completed && score >= 1.0) {
    throw NothingToAnalyze("trajectory for task '" + trajectory.task_id + "' completed with a perfect score");
  }

  std::vector<std::string> node_ids;
  for (const auto& r : trajectory.records) node_ids.push_back(r.node_id);
  std::string id_list;
  for (const auto& id : node_ids) id_list += (id_list.empty() ? "" : ", ") + id;

  std::ostringstream outcome;
  if (completed) {
    outcome << "Completed with score " << score << ". Expected answer: " << task.gold
            << ". Final answer: " << trajectory.final_answer.value_or("");
  } else {
    outcome << "Failed: the exit node did not produce an answer.";
  }

  std::map<std::string, std::string> values{{"workflow", nlohmann::json(graph).dump(2)},
                                            {"task_input", task.input},
                                            {"outcome", outcome.str()},
                                            {"trajectory", trajectory_prompt_text(trajectory, options.trajectory_token_budget)},
                                            {"node_ids", id_list}};
  ChatRequest req;
  req.model = options.model;
  req.temperature = options.temperature;
  req.tag = "gene-extract";
  req.messages = {{Role::User, render_prompt(options.extract_template, values)}};

  auto parse = [&](const nlohmann::json& j) {
    Gene g;
    g.id = "gene-" + std::to_string(options.iteration) + "-" + trajectory.task_id;
    g.source_task_id = trajectory.task_id;
    g.created_at_iteration = options.iteration;
    g.failing_node_ids = j.value("failing_node_ids", std::vector<std::string>{});
    std::vector<std::string> unknown;
    for (const auto& id : g.failing_node_ids) {
      if (std::find(node_ids.begin(), node_ids.end(), id) == node_ids.end()) unknown.push_back(id);
    }
    if (!unknown.empty()) {
      std::string names;
      for (const auto& u : unknown) names += (names.empty() ? "" : ", ") + u;
      throw StructuredOutputError("failing_node_ids names nodes not in the trajectory: " + names +
                                  ". Valid node ids: " + id_list);
    }
    auto category_text = j.value("error_category", std::string{});
    auto category = parse_error_category(category_text);
    if (!category) throw StructuredOutputError("error_category '" + category_text + "' is not a valid category");
    g.error_category = *category;
    g.diagnosis = j.value("diagnosis", std::string{});
    g.directive = j.value("directive", std::string{});
    if (g.directive.empty()) throw StructuredOutputError("directive must be a non-empty string");
    g.failing_node_kinds = kinds_of(graph, g.failing_node_ids);
    return g;
  };
  auto reply = ask_structured<Gene>(provider, req, parse);
  if (!reply.value) throw GeneParseFailure("gene extraction failed: " + reply.last_error);
  return *reply.value;
}

Gene refine_gene(const Gene& g0, MemoryStore& memory, ChatProvider& provider, const FeedbackAgentOptions& options) {
  if (memory.empty()) {
    memory.store(g0);
    return g0;
  }
  std::vector<Gene> related;
  for (const auto& g : memory.genes()) {
    if (g.error_category == g0.error_category || kinds_overlap(g, g0)) related.push_back(g);
  }
  if (related.empty()) {
    auto all = memory.genes();
    related.assign(all.end() - static_cast<std::ptrdiff_t>(std::min<size_t>(5, all.size())), all.end());
  }
  std::string memory_text;
  for (const auto& g : related) memory_text += "- " + gene_prompt_text(g) + "\n";

  ChatRequest req;
  req.model = options.model;
  req.temperature = options.temperature;
  req.tag = "gene-refine";
  req.messages = {{Role::User, render_prompt(options.refine_template,
                                             {{"gene", gene_prompt_text(g0)}, {"memory", memory_text}})}};
  auto parse = [&](const nlohmann::json& j) {
    Gene g = g0;
    g.id = g0.id + "-dominant";
    auto category_text = j.value("error_category", to_string(g0.error_category));
    auto category = parse_error_category(category_text);
    if (!category) throw StructuredOutputError("error_category '" + category_text + "' is not a valid category");
    g.error_category = *category;
    g.diagnosis = j.value("diagnosis", g0.diagnosis);
    g.directive = j.value("directive", std::string{});
    if (g.directive.empty()) throw StructuredOutputError("directive must be a non-empty string");
    return g;
  };
  auto reply = ask_structured<Gene>(provider, req, parse);
  const Gene result = reply.value.value_or(g0);
  memory.store(result);
  return result;
}

std::optional<Gene> dominant_gene_for(const WorkflowGraph& w, const MemoryStore& memory) {
  const auto kinds = w.operator_kinds();
  std::optional<Gene> best;
  for (const auto& g : memory.genes()) {  // oldest insertion first
    bool match = std::any_of(g.failing_node_kinds.begin(), g.failing_node_kinds.end(),
                             [&](OperatorKind k) { return kinds.count(k) > 0; });
    if (match && (!best || g.created_at_iteration >= best->created_at_iteration)) best = g;
  }
  return best;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const Gene& g) {
  std::vector<std::string> kinds;
  for (auto k : g.failing_node_kinds) kinds.push_back(to_string(k));
  j = nlohmann::json{{"id", g.id},
                     {"source_task_id", g.source_task_id},
                     {"failing_node_ids", g.failing_node_ids},
                     {"failing_node_kinds", kinds},
                     {"error_category", to_string(g.error_category)},
                     {"diagnosis", g.diagnosis},
                     {"directive", g.directive},
                     {"created_at_iteration", g.created_at_iteration}};
}

void from_json(const nlohmann::json& j, Gene& g) {
  g.id = j.at("id").get<std::string>();
  g.source_task_id = j.value("source_task_id", std::string{});
  g.failing_node_ids = j.value("failing_node_ids", std::vector<std::string>{});
  g.failing_node_kinds.clear();
  for (const auto& k : j.value("failing_node_kinds", std::vector<std::string>{})) {
    auto kind = parse_operator_kind(k);
    if (!kind) throw std::invalid_argument("unknown operator kind '" + k + "'");
    g.failing_node_kinds.push_back(*kind);
  }
  auto cat = parse_error_category(j.at("error_category").get<std::string>());
  if (!cat) throw std::invalid_argument("unknown error category");
  g.error_category = *cat;
  g.diagnosis = j.value("diagnosis", std::string{});
  g.directive = j.at("directive").get<std::string>();
  g.created_at_iteration = j.value("created_at_iteration", 0);
}

void to_json(nlohmann::json& j, const MemoryStore& m) {
  auto seq = [&](const std::deque<Gene>& tier) {
    auto arr = nlohmann::json::array();
    for (const auto& g : tier) {
      nlohmann::json e = g;
      e["sequence"] = m.sequence_of(g.id);
      arr.push_back(std::move(e));
    }
    return arr;
  };
  j = nlohmann::json{{"config",
                      {{"short_term_capacity", m.config_.short_term_capacity},
                       {"long_term_capacity", m.config_.long_term_capacity},
                       {"promotion_threshold", m.config_.promotion_threshold}}},
                     {"next_sequence", m.next_sequence_},
                     {"short_term", seq(m.short_term_)},
                     {"long_term", seq(m.long_term_)}};
}

void from_json(const nlohmann::json& j, MemoryStore& m) {
  MemoryConfig c;
  const auto& cj = j.at("config");
  c.short_term_capacity = cj.value("short_term_capacity", c.short_term_capacity);
  c.long_term_capacity = cj.value("long_term_capacity", c.long_term_capacity);
  c.promotion_threshold = cj.value("promotion_threshold", c.promotion_threshold);
  m = MemoryStore(c);
  m.next_sequence_ = j.value("next_sequence", uint64_t{0});
  for (const auto& [name, tier] : {std::pair{"short_term", &m.short_term_}, std::pair{"long_term", &m.long_term_}}) {
    for (const auto& e : j.at(name)) {
      tier->push_back(e.get<Gene>());
      m.sequence_[tier->back().id] = e.value("sequence", uint64_t{0});
    }
  }
}

}  // namespace debflow
