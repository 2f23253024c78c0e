#include "debflow/optimizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace debflow {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid run config: " + m); };
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
  if (!(alpha > 0.0)) fail("alpha must be positive");
  if (max_iterations < 0) fail("max_iterations must be >= 0");
  if (budget_usd && *budget_usd < 0.0) fail("budget_usd must be >= 0");
  if (proponents < 1 || opponents < 1) fail("debate needs at least one proponent and one opponent");
  if (max_rounds < 1) fail("max_rounds must be >= 1");
  if (retry.max_attempts < 1) fail("retry.max_attempts must be >= 1");
  if (max_concurrency < 1) fail("max_concurrency must be >= 1");
  if (node_timeout_ms < 1) fail("node_timeout_ms must be >= 1");
  if (memory.short_term_capacity < 1) fail("memory.short_term_capacity must be >= 1");
  if (memory.promotion_threshold < 1) fail("memory.promotion_threshold must be >= 1");
  if (max_genes_per_iteration < 0) fail("max_genes_per_iteration must be >= 0");
  if (temperature < 0.0) fail("temperature must be >= 0");
  if (models.empty()) fail("models must list at least one model");
  for (const auto* m : {&executor_model, &optimizer_model}) {
    if (std::find(models.begin(), models.end(), *m) == models.end()) {
      fail("model '" + *m + "' is not in models");
    }
  }
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json prices = nlohmann::json::object();
  for (const auto& [model, p] : c.prices) {
    prices[model] = {{"prompt_usd_per_million", p.prompt_usd_per_million},
                     {"completion_usd_per_million", p.completion_usd_per_million}};
  }
  j = nlohmann::json{
      {"lambda", c.lambda},
      {"alpha", c.alpha},
      {"max_iterations", c.max_iterations},
      {"seed", c.seed},
      {"budget_usd", c.budget_usd ? nlohmann::json(*c.budget_usd) : nlohmann::json()},
      {"tasks_file", c.tasks_file},
      {"seed_workflow_file", c.seed_workflow_file},
      {"task_brief", c.task_brief},
      {"models", c.models},
      {"executor_model", c.executor_model},
      {"optimizer_model", c.optimizer_model},
      {"prices", prices},
      {"temperature", c.temperature},
      {"debate", {{"proponents", c.proponents}, {"opponents", c.opponents}, {"max_rounds", c.max_rounds}}},
      {"memory",
       {{"short_term_capacity", c.memory.short_term_capacity},
        {"long_term_capacity", c.memory.long_term_capacity},
        {"promotion_threshold", c.memory.promotion_threshold}}},
      {"max_genes_per_iteration", c.max_genes_per_iteration},
      {"gene_token_budget", c.gene_token_budget},
      {"retry", {{"max_attempts", c.retry.max_attempts}, {"backoff_base_ms", c.retry.backoff_base.count()}}},
      {"node_timeout_ms", c.node_timeout_ms},
      {"max_concurrency", c.max_concurrency},
      {"default_scorer", c.scoring.default_scorer},
      {"scorers", c.scoring.by_domain},
      {"base_url", c.base_url}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  c.lambda = j.value("lambda", c.lambda);
  c.alpha = j.value("alpha", c.alpha);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.seed = j.value("seed", c.seed);
  if (j.contains("budget_usd") && !j["budget_usd"].is_null()) c.budget_usd = j["budget_usd"].get<double>();
  c.tasks_file = j.value("tasks_file", c.tasks_file);
  c.seed_workflow_file = j.value("seed_workflow_file", c.seed_workflow_file);
  c.task_brief = j.value("task_brief", c.task_brief);
  c.models = j.value("models", c.models);
  c.executor_model = j.value("executor_model", c.executor_model);
  c.optimizer_model = j.value("optimizer_model", c.optimizer_model);
  if (j.contains("prices")) {
    for (const auto& [model, p] : j["prices"].items()) {
      c.prices[model] = ModelPrice{p.value("prompt_usd_per_million", 0.0), p.value("completion_usd_per_million", 0.0)};
    }
  }
  c.temperature = j.value("temperature", c.temperature);
  if (j.contains("debate")) {
    const auto& d = j["debate"];
    c.proponents = d.value("proponents", c.proponents);
    c.opponents = d.value("opponents", c.opponents);
    c.max_rounds = d.value("max_rounds", c.max_rounds);
  }
  if (j.contains("memory")) {
    const auto& m = j["memory"];
    c.memory.short_term_capacity = m.value("short_term_capacity", c.memory.short_term_capacity);
    c.memory.long_term_capacity = m.value("long_term_capacity", c.memory.long_term_capacity);
    c.memory.promotion_threshold = m.value("promotion_threshold", c.memory.promotion_threshold);
  }
  c.max_genes_per_iteration = j.value("max_genes_per_iteration", c.max_genes_per_iteration);
  c.gene_token_budget = j.value("gene_token_budget", c.gene_token_budget);
  if (j.contains("retry")) {
    c.retry.max_attempts = j["retry"].value("max_attempts", c.retry.max_attempts);
    c.retry.backoff_base =
        std::chrono::milliseconds(j["retry"].value("backoff_base_ms", int64_t{c.retry.backoff_base.count()}));
  }
  c.node_timeout_ms = j.value("node_timeout_ms", c.node_timeout_ms);
  c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
  c.scoring.default_scorer = j.value("default_scorer", c.scoring.default_scorer);
  c.scoring.by_domain = j.value("scorers", c.scoring.by_domain);
  c.base_url = j.value("base_url", c.base_url);
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return nlohmann::json::parse(in).get<RunConfig>();
}

void save_run_config(const RunConfig& config, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << nlohmann::json(config).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Candidates

void to_json(nlohmann::json& j, const Candidate& c) {
  j = nlohmann::json{{"fingerprint", c.fingerprint},
                     {"score", c.score},
                     {"graph", c.graph},
                     {"lineage",
                      {{"parent_fingerprint", c.lineage.parent_fingerprint ? nlohmann::json(*c.lineage.parent_fingerprint)
                                                                          : nlohmann::json()},
                       {"iteration", c.lineage.iteration}}},
                     {"cost_usd", c.cost_usd},
                     {"report", c.report}};
}

void from_json(const nlohmann::json& j, Candidate& c) {
  c.fingerprint = j.at("fingerprint").get<std::string>();
  c.score = j.at("score").get<double>();
  c.graph = j.at("graph").get<WorkflowGraph>();
  const auto& l = j.at("lineage");
  if (l.contains("parent_fingerprint") && !l["parent_fingerprint"].is_null()) {
    c.lineage.parent_fingerprint = l["parent_fingerprint"].get<std::string>();
  }
  c.lineage.iteration = l.value("iteration", 0);
  c.cost_usd = j.value("cost_usd", 0.0);
  c.report = ScoreReport{};
  if (j.contains("report")) {
    const auto& r = j["report"];
    c.report.aggregate = r.value("aggregate", c.score);
    c.report.completed_count = r.value("completed_count", 0);
    c.report.failed_count = r.value("failed_count", 0);
    for (const auto& t : r.value("per_task", nlohmann::json::array())) {
      c.report.per_task.push_back({t.at("task_id").get<std::string>(), t.at("score").get<double>(),
                                   t.value("status", std::string("Failed")) == "Completed" ? TrajectoryStatus::Completed
                                                                                          : TrajectoryStatus::Failed});
    }
  }
}

bool CandidatePool::insert(Candidate c) {
  if (contains(c.fingerprint)) return false;
  candidates_.push_back(std::move(c));
  return true;
}

bool CandidatePool::contains(const std::string& fp) const { return index_of(fp).has_value(); }

std::optional<size_t> CandidatePool::index_of(const std::string& fp) const {
  for (size_t i = 0; i < candidates_.size(); ++i) {
    if (candidates_[i].fingerprint == fp) return i;
  }
  return std::nullopt;
}

std::vector<double> CandidatePool::scores() const {
  std::vector<double> s;
  s.reserve(candidates_.size());
  for (const auto& c : candidates_) s.push_back(c.score);
  return s;
}

size_t CandidatePool::best_index() const {
  if (candidates_.empty()) throw std::logic_error("best_index of an empty pool");
  size_t best = 0;
  for (size_t i = 1; i < candidates_.size(); ++i) {
    if (candidates_[i].score > candidates_[best].score) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Optimizer

std::string make_task_brief(const RunConfig& config, const std::vector<TaskInstance>& tasks) {
  if (!config.task_brief.empty()) return config.task_brief;
  std::set<std::string> domains;
  for (const auto& t : tasks) domains.insert(to_string(t.domain_tag));
  std::string brief = "Tasks from domain(s):";
  for (const auto& d : domains) brief += " " + d;
  brief += ". The workflow receives the task input and its exit node must reply with the bare final answer.";
  brief += " Example inputs:";
  for (size_t i = 0; i < std::min<size_t>(3, tasks.size()); ++i) brief += "\n- " + tasks[i].input;
  return brief;
}

bool node_was_called(const NodeRecord& record) {
  if (record.status == NodeStatus::Skipped) return false;
  return record.status != NodeStatus::ParseError || record.error == kEmptyResponseError;
}

CallRecord node_call_record(const NodeRecord& record, const OperatorSpec& node, double default_temperature) {
  CallRecord rec;
  rec.request.model = node.model_ref;
  rec.request.temperature = node.temperature.value_or(default_temperature);
  rec.request.tag = "node:" + node.id;
  rec.request.messages = {{Role::User, record.rendered_prompt}};
  if (record.status == NodeStatus::ProviderError) {
    auto colon = record.error.find(':');
    rec.error_class = colon == std::string::npos ? "ProviderError" : record.error.substr(0, colon);
    rec.error_message = colon == std::string::npos ? record.error : record.error.substr(colon + 2);
  } else {
    rec.response = ChatResponse{record.response, record.prompt_tokens, record.completion_tokens, record.latency_ms};
  }
  return rec;
}

namespace {

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

class Optimizer {
 public:
  Optimizer(const OptimizerInputs& in, ProviderPtr provider)
      : in_(in),
        cfg_(in.config),
        ledger_(std::make_shared<UsageLedger>(cfg_.prices)),
        metered_(std::make_shared<MeteredProvider>(with_retry(std::move(provider), cfg_.retry, in.sleeper), ledger_)),
        recorder_(std::make_shared<RecordingProvider>(metered_)),
        log_(in.run_dir.empty() ? fs::path{} : in.run_dir / run_files::kRunLog, in.clock),
        memory_(cfg_.memory),
        rng_(cfg_.seed) {
    exec_.default_temperature = cfg_.temperature;
    exec_.node_timeout = std::chrono::milliseconds(cfg_.node_timeout_ms);
    exec_.max_concurrency = cfg_.max_concurrency;
    debate_.proponents = cfg_.proponents;
    debate_.opponents = cfg_.opponents;
    debate_.max_rounds = cfg_.max_rounds;
    debate_.prompts = in.prompts;
    debate_.model = cfg_.optimizer_model;
    debate_.temperature = cfg_.temperature;
    debate_.allowed_models = std::set<std::string>(cfg_.models.begin(), cfg_.models.end());
    brief_ = make_task_brief(cfg_, in.tasks);
  }

  OptimizeResult run() {
    cfg_.validate();
    debate_.validate();
    if (in_.tasks.empty()) throw std::invalid_argument("optimize needs at least one task");
    if (auto report = validate_graph(in_.seed_workflow, &debate_.allowed_models); !report.ok) {
      throw InvalidGraph(std::move(report));
    }
    if (persistent()) {
      fs::create_directories(in_.run_dir / run_files::kCandidates);
      const bool has_state = fs::exists(in_.run_dir / run_files::kState);
      if (has_state && !in_.resume) {
        throw RunExists("run directory " + in_.run_dir.string() + " already holds a run; pass --resume to continue it");
      }
      if (in_.resume && has_state) restore();
    }
    log_.append({{"event", "run_start"},
                 {"config", cfg_},
                 {"task_count", in_.tasks.size()},
                 {"resumed", in_.resume && !pool_.empty()},
                 {"next_iteration", next_iteration_}});

    std::string stop_reason = "max_iterations";
    try {
      if (pool_.empty()) {
        iteration_zero();
        next_iteration_ = 1;
        persist("running");
      } else if (next_iteration_ > cfg_.max_iterations) {
        stop_reason = "already_complete";
      }
      for (int it = next_iteration_; it <= cfg_.max_iterations; ++it) {
        if (over_budget()) {
          stop_reason = "budget";
          log_.append({{"event", "budget_stop"}, {"iteration", it}, {"spent_usd", ledger_->total_cost()}});
          break;
        }
        if (!iterate(it)) {
          stop_reason = "budget";
          break;
        }
        next_iteration_ = it + 1;
        persist("running");
      }
    } catch (const ProviderError& e) {
      flush_calls("aborted", next_iteration_);
      log_.append({{"event", "abort"},
                   {"iteration", next_iteration_},
                   {"error_class", error_class_name(e)},
                   {"message", e.what()}});
      persist("aborted");
      throw OptimizeAborted(std::string("provider failure: ") + e.what() +
                            "; state saved, resume with --resume");
    }

    const auto& best = pool_.at(pool_.best_index());
    log_.append({{"event", "run_end"},
                 {"stop_reason", stop_reason},
                 {"best_fingerprint", best.fingerprint},
                 {"best_score", best.score},
                 {"pool_size", pool_.size()},
                 {"usage", ledger_->snapshot()},
                 {"total_cost_usd", ledger_->total_cost()}});
    persist("completed");

    OptimizeResult r;
    r.best = best;
    r.pool = pool_;
    r.memory = memory_;
    r.usage = ledger_->snapshot();
    r.next_iteration = next_iteration_;
    r.stop_reason = stop_reason;
    r.events = log_.events();
    return r;
  }

 private:
  bool persistent() const { return !in_.run_dir.empty(); }

  bool over_budget() const { return cfg_.budget_usd && ledger_->total_cost() >= *cfg_.budget_usd; }

  void iteration_zero() {
    auto [cand, ev] = evaluate(in_.seed_workflow, 0, std::nullopt);
    insert(cand, 0);
    feedback(cand, ev, 0);
    log_best(0);
  }

  // Returns false when the budget stopped the iteration before evaluation.
  bool iterate(int it) {
    const auto scores = pool_.scores();
    const auto probs = mixed_probabilities(scores, cfg_.lambda, cfg_.alpha);
    const size_t idx = sample_index(probs, rng_);
    const Candidate parent = pool_.at(idx);
    log_.append({{"event", "selection"},
                 {"iteration", it},
                 {"probabilities", probs},
                 {"selected_index", idx},
                 {"selected_fingerprint", parent.fingerprint}});

    const auto gene = dominant_gene_for(parent.graph, memory_);
    const double before = ledger_->total_cost();
    DebateOutcome outcome;
    try {
      outcome = run_debate(parent.graph, brief_, gene, debate_, *recorder_);
    } catch (const DebateFailed& e) {
      flush_calls("debate", it);
      log_.append({{"event", "debate_failed"}, {"iteration", it}, {"message", e.what()}});
      log_best(it);
      return true;
    }
    flush_calls("debate", it);
    const auto fp = fingerprint(outcome.graph);
    log_.append({{"event", "debate"},
                 {"iteration", it},
                 {"parent_fingerprint", parent.fingerprint},
                 {"gene_id", gene ? nlohmann::json(gene->id) : nlohmann::json()},
                 {"rounds_executed", outcome.rounds_executed},
                 {"decided_by_final_judge", outcome.decided_by_final_judge},
                 {"selected_round", outcome.selected_round},
                 {"selected_side", to_string(outcome.selected_side)},
                 {"result_fingerprint", fp},
                 {"cost_usd", ledger_->total_cost() - before},
                 {"transcript", debate_state_to_json(outcome.state)}});

    if (auto existing = pool_.index_of(fp)) {
      log_.append({{"event", "duplicate_candidate"},
                   {"iteration", it},
                   {"fingerprint", fp},
                   {"existing_index", *existing}});
      log_best(it);
      return true;
    }
    if (over_budget()) {
      log_.append({{"event", "budget_stop"}, {"iteration", it}, {"spent_usd", ledger_->total_cost()}});
      return false;
    }
    auto [cand, ev] = evaluate(outcome.graph, it, parent.fingerprint);
    insert(cand, it);
    feedback(cand, ev, it);
    log_best(it);
    return true;
  }

  std::pair<Candidate, Evaluation> evaluate(const WorkflowGraph& g, int it, std::optional<std::string> parent) {
    const double before = ledger_->total_cost();
    auto ev = evaluate_workflow(g, in_.tasks, *metered_, in_.scorers, cfg_.scoring, exec_);
    Candidate c;
    c.graph = g;
    c.score = ev.report.aggregate;
    c.fingerprint = fingerprint(g);
    c.lineage = Lineage{std::move(parent), it};
    c.cost_usd = ledger_->total_cost() - before;
    c.report = ev.report;

    for (const auto& t : ev.trajectories) {
      for (const auto& r : t.records) {
        if (!node_was_called(r)) continue;
        auto j = call_record_to_json(node_call_record(r, *g.find_node(r.node_id), cfg_.temperature));
        j["event"] = "llm_call";
        j["phase"] = "evaluation";
        j["iteration"] = it;
        j["task_id"] = t.task_id;
        log_.append(std::move(j));
      }
    }
    log_.append({{"event", "evaluation"},
                 {"iteration", it},
                 {"fingerprint", c.fingerprint},
                 {"graph", g},
                 {"score", c.score},
                 {"report", ev.report},
                 {"cost_usd", c.cost_usd},
                 {"trajectories", ev.trajectories}});
    return {std::move(c), std::move(ev)};
  }

  void insert(const Candidate& c, int it) {
    pool_.insert(c);
    log_.append({{"event", "candidate"},
                 {"iteration", it},
                 {"index", pool_.size() - 1},
                 {"fingerprint", c.fingerprint},
                 {"parent_fingerprint",
                  c.lineage.parent_fingerprint ? nlohmann::json(*c.lineage.parent_fingerprint) : nlohmann::json()},
                 {"score", c.score},
                 {"cost_usd", c.cost_usd}});
    if (persistent()) {
      write_json_atomic(in_.run_dir / run_files::kCandidates / (c.fingerprint + ".json"), c);
    }
  }

  void feedback(const Candidate& c, const Evaluation& ev, int it) {
    FeedbackAgentOptions fo;
    fo.model = cfg_.optimizer_model;
    fo.temperature = cfg_.temperature;
    fo.extract_template = in_.prompts.at(role::kGeneExtract);
    fo.refine_template = in_.prompts.at(role::kGeneRefine);
    fo.trajectory_token_budget = cfg_.gene_token_budget;
    fo.iteration = it;
    int analyzed = 0;
    for (size_t k = 0; k < ev.trajectories.size() && analyzed < cfg_.max_genes_per_iteration; ++k) {
      const auto& t = ev.trajectories[k];
      const double score = ev.report.per_task[k].score;
      if (t.overall_status == TrajectoryStatus::Completed && score >= 1.0) continue;
      ++analyzed;
      Gene g0;
      try {
        g0 = extract_initial_gene(t, c.graph, in_.tasks[k], score, *recorder_, fo);
      } catch (const GeneParseFailure& e) {
        flush_calls("feedback", it);
        log_.append({{"event", "gene_failure"}, {"iteration", it}, {"task_id", t.task_id}, {"message", e.what()}});
        continue;
      }
      const bool had_memory = !memory_.empty();
      auto g = refine_gene(g0, memory_, *recorder_, fo);
      flush_calls("feedback", it);
      log_.append({{"event", "gene"},
                   {"iteration", it},
                   {"task_id", t.task_id},
                   {"candidate_fingerprint", c.fingerprint},
                   {"initial", g0},
                   {"dominant", g},
                   {"refined", had_memory && !(g == g0)}});
    }
  }

  void log_best(int it) {
    const auto& best = pool_.at(pool_.best_index());
    log_.append({{"event", "best"},
                 {"iteration", it},
                 {"fingerprint", best.fingerprint},
                 {"score", best.score},
                 {"spent_usd", ledger_->total_cost()}});
  }

  void flush_calls(const std::string& phase, int it) {
    for (const auto& rec : recorder_->take()) {
      auto j = call_record_to_json(rec);
      j["event"] = "llm_call";
      j["phase"] = phase;
      j["iteration"] = it;
      log_.append(std::move(j));
    }
  }

  void persist(const std::string& status) {
    if (!persistent()) return;
    write_json_atomic(in_.run_dir / run_files::kMemory, memory_);
    if (!pool_.empty()) write_json_atomic(in_.run_dir / run_files::kBest, pool_.at(pool_.best_index()));
    std::ostringstream rng_text;
    rng_text << rng_;
    std::vector<std::string> order;
    for (const auto& c : pool_.candidates()) order.push_back(c.fingerprint);
    write_json_atomic(in_.run_dir / run_files::kState, {{"status", status},
                                                        {"next_iteration", next_iteration_},
                                                        {"max_iterations", cfg_.max_iterations},
                                                        {"rng", rng_text.str()},
                                                        {"pool", order},
                                                        {"usage", ledger_->snapshot()}});
  }

  void restore() {
    const auto state = read_json(in_.run_dir / run_files::kState);
    next_iteration_ = state.value("next_iteration", 0);
    std::istringstream rng_text(state.at("rng").get<std::string>());
    rng_text >> rng_;
    for (const auto& fp : state.at("pool")) {
      pool_.insert(read_json(in_.run_dir / run_files::kCandidates / (fp.get<std::string>() + ".json")).get<Candidate>());
    }
    if (fs::exists(in_.run_dir / run_files::kMemory)) {
      read_json(in_.run_dir / run_files::kMemory).get_to(memory_);
    }
    ledger_->restore(state.value("usage", std::map<std::string, ModelUsage>{}));
    if (pool_.empty()) next_iteration_ = 0;
  }

  const OptimizerInputs& in_;
  RunConfig cfg_;
  std::shared_ptr<UsageLedger> ledger_;
  std::shared_ptr<MeteredProvider> metered_;
  std::shared_ptr<RecordingProvider> recorder_;
  RunLog log_;
  CandidatePool pool_;
  MemoryStore memory_;
  SelectionRng rng_;
  ExecutorOptions exec_;
  DebateConfig debate_;
  std::string brief_;
  int next_iteration_ = 0;
};

}  // namespace

OptimizeResult optimize(const OptimizerInputs& inputs, ProviderPtr provider) {
  Optimizer opt(inputs, std::move(provider));
  return opt.run();
}

}  // namespace debflow
