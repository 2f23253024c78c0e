#include "debflow/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>

namespace debflow {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_pure_number(std::string_view s) {
  size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  size_t digits = 0;
  size_t dots = 0;
  for (; i < s.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(s[i]))) {
      ++digits;
    } else if (s[i] == '.') {
      if (++dots > 1) return false;
    } else {
      return false;
    }
  }
  return digits > 0;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (!out.empty() && out.back() == '.') out.pop_back();
  while (!out.empty() && out.back() == ' ') out.pop_back();

  if (is_pure_number(out)) {
    if (out.front() == '+') out.erase(0, 1);
    if (out.find('.') != std::string::npos) {
      while (out.back() == '0') out.pop_back();
      if (out.back() == '.') out.pop_back();
    }
  }
  return out;
}

double score_exact_match(std::string_view pred, std::string_view gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 1.0 : 0.0;
}

std::vector<std::string> f1_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      flush();
    } else if (!std::ispunct(uc)) {
      cur += static_cast<char>(std::tolower(uc));
    }
  }
  flush();
  return tokens;
}

double score_f1(std::string_view pred, std::string_view gold) {
  const auto p = f1_tokens(pred);
  const auto g = f1_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  int overlap = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

ScorerRegistry::ScorerRegistry() {
  scorers_["exact_match"] = score_exact_match;
  scorers_["f1"] = score_f1;
}

void ScorerRegistry::add(std::string name, Scorer scorer) { scorers_[std::move(name)] = std::move(scorer); }

bool ScorerRegistry::contains(const std::string& name) const { return scorers_.count(name) > 0; }

const Scorer& ScorerRegistry::get(const std::string& name) const {
  auto it = scorers_.find(name);
  if (it == scorers_.end()) throw ScorerUnavailable("no scorer registered under '" + name + "'");
  return it->second;
}

std::string ScoringPolicy::scorer_for(DomainTag tag) const {
  if (auto it = by_domain.find(to_string(tag)); it != by_domain.end()) return it->second;
  switch (tag) {
    case DomainTag::Math: return "exact_match";
    case DomainTag::QA: return "f1";
    case DomainTag::Code: return "pass_at_1";
    case DomainTag::Other: return default_scorer;
  }
  return default_scorer;
}

double aggregate_score(const std::vector<TaskScore>& scores) {
  if (scores.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : scores) sum += s.score;
  return sum / static_cast<double>(scores.size());
}

double score_trajectory(const Trajectory& t, const TaskInstance& task, const ScorerRegistry& registry,
                        const ScoringPolicy& policy) {
  if (t.overall_status != TrajectoryStatus::Completed || !t.final_answer) return 0.0;
  const double s = registry.get(policy.scorer_for(task.domain_tag))(*t.final_answer, task.gold);
  return std::clamp(s, 0.0, 1.0);
}

Evaluation evaluate_workflow(const WorkflowGraph& graph, const std::vector<TaskInstance>& tasks,
                             ChatProvider& provider, const ScorerRegistry& registry,
                             const ScoringPolicy& policy, const ExecutorOptions& options) {
  if (tasks.empty()) throw std::invalid_argument("evaluate_workflow needs at least one task");
  for (const auto& task : tasks) {
    const auto name = policy.scorer_for(task.domain_tag);
    if (!registry.contains(name)) {
      throw ScorerUnavailable("task '" + task.id + "' (" + to_string(task.domain_tag) +
                              ") needs scorer '" + name + "' which is not registered");
    }
  }
  Evaluation ev;
  for (const auto& task : tasks) {
    auto t = execute_workflow(graph, task, provider, options);
    TaskScore ts{task.id, score_trajectory(t, task, registry, policy), t.overall_status};
    if (t.overall_status == TrajectoryStatus::Completed) {
      ++ev.report.completed_count;
    } else {
      ++ev.report.failed_count;
    }
    ev.report.per_task.push_back(std::move(ts));
    ev.trajectories.push_back(std::move(t));
  }
  ev.report.aggregate = aggregate_score(ev.report.per_task);
  return ev;
}

std::vector<TaskInstance> load_tasks_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open task file " + path);
  std::vector<TaskInstance> tasks;
  std::set<std::string> ids;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), is_space)) continue;
    TaskInstance t;
    try {
      t = nlohmann::json::parse(line).get<TaskInstance>();
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!ids.insert(t.id).second) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": duplicate task id '" + t.id + "'");
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

void save_tasks_jsonl(const std::vector<TaskInstance>& tasks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write task file " + path);
  for (const auto& t : tasks) out << nlohmann::json(t).dump() << '\n';
}

void to_json(nlohmann::json& j, const ScoreReport& r) {
  auto per_task = nlohmann::json::array();
  for (const auto& s : r.per_task) {
    per_task.push_back({{"task_id", s.task_id}, {"score", s.score}, {"status", to_string(s.status)}});
  }
  j = nlohmann::json{{"per_task", per_task},
                     {"aggregate", r.aggregate},
                     {"completed_count", r.completed_count},
                     {"failed_count", r.failed_count}};
}

}  // namespace debflow
