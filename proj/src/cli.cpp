#include "debflow/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "debflow/http_provider.hpp"
#include "debflow/optimizer.hpp"
#include "debflow/replay.hpp"
#include "debflow/scripted_provider.hpp"

namespace debflow {

namespace fs = std::filesystem;

namespace {

/// Bad flag values that CLI11 cannot see (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything else that stops a command (exit code 1).
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string run_dir;
  std::string config;
  std::optional<uint64_t> seed;
  std::string provider = "http";
  bool json = false;
};

struct OptimizeOptions {
  std::optional<int> max_iterations;
  std::optional<double> budget_usd;
  bool resume = false;
};

struct EvalOptions {
  std::string workflow;
  std::string tasks;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--run-dir", o.run_dir, "Run directory")->required();
  cmd->add_option("--config", o.config, "Config file (default: <run-dir>/config.json)");
  cmd->add_option("--seed", o.seed, "Selection RNG seed");
  cmd->add_option("--provider", o.provider, "scripted:<file>, http or http:<base-url>");
  cmd->add_flag("--json", o.json, "Machine-readable output");
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string short_fp(const std::string& fp) { return fp.substr(0, 12); }

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CommandError("missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CommandError(path.string() + ": " + e.what());
  }
}

fs::path in_run_dir(const fs::path& run_dir, const std::string& file) {
  fs::path p(file);
  return p.is_absolute() ? p : run_dir / p;
}

RunConfig load_config(const CommonOptions& o) {
  const fs::path path = o.config.empty() ? fs::path(o.run_dir) / run_files::kConfig : fs::path(o.config);
  if (!fs::exists(path)) throw CommandError("missing config " + path.string() + " (run 'debflow init' first)");
  RunConfig c;
  try {
    c = read_json_file(path).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CommandError(path.string() + ": " + e.what());
  }
  if (o.seed) c.seed = *o.seed;
  return c;
}

ProviderPtr make_provider(const std::string& spec, const RunConfig& config) {
  if (spec.rfind("scripted:", 0) == 0) {
    const auto file = spec.substr(9);
    if (file.empty()) throw UsageError("--provider scripted: needs a script file");
    if (!fs::exists(file)) throw CommandError("missing script file " + file);
    return scripted_provider(load_script_file(file));
  }
  if (spec == "http" || spec.rfind("http:", 0) == 0) {
    auto cfg = http_config_from_env(spec == "http" ? config.base_url : spec.substr(5));
    if (cfg.base_url.empty()) {
      throw CommandError(std::string("no endpoint: set base_url in the config, ") + kBaseUrlEnv +
                         ", or pass --provider http:<url>");
    }
    if (cfg.api_key.empty()) throw CommandError(std::string("no API key: set ") + kApiKeyEnv);
    cfg.timeout = std::chrono::milliseconds(config.node_timeout_ms);
    return std::make_shared<HttpProvider>(cfg);
  }
  throw UsageError("unknown provider '" + spec + "'; expected scripted:<file>, http or http:<url>");
}

std::vector<TaskInstance> load_tasks(const fs::path& path) {
  if (!fs::exists(path)) throw CommandError("missing task file " + path.string());
  return load_tasks_jsonl(path.string());
}

/// Accepts a bare workflow or a stored candidate (which wraps it in "graph").
WorkflowGraph load_graph(const fs::path& path) {
  auto j = read_json_file(path);
  if (j.contains("graph")) j = j["graph"];
  return j.get<WorkflowGraph>();
}

class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw CommandError("run directory is locked by another optimize (" + path_.string() +
                         "); remove the file if no run is active");
    }
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~RunLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// init

RunConfig template_config(const std::string& name) {
  RunConfig c;
  if (name == "math") {
    c.scoring.default_scorer = "exact_match";
    c.task_brief = "Math word problems. The exit node must reply with only the final numeric answer.";
  } else if (name == "qa") {
    c.scoring.default_scorer = "f1";
    c.task_brief = "Open-domain questions. The exit node must reply with only a short answer phrase.";
  }
  return c;
}

std::string template_node_prompt(const std::string& name) {
  if (name == "math") return "Solve the problem. Reply with only the final answer.\n\n{input}";
  if (name == "qa") return "Answer the question with a short phrase only.\n\n{input}";
  return "{input}";
}

int cmd_init(const std::string& run_dir, const std::string& templ, std::ostream& out) {
  const fs::path dir(run_dir);
  if (fs::exists(dir) && (!fs::is_directory(dir) || !fs::is_empty(dir))) {
    throw CommandError(run_dir + " is not empty; init needs an absent or empty directory");
  }
  const auto config = template_config(templ);
  fs::create_directories(dir / run_files::kPrompts);
  save_run_config(config, dir / run_files::kConfig);
  write_prompt_dir(default_prompts(), (dir / run_files::kPrompts).string());
  save_workflow_file(make_io_workflow(config.executor_model, template_node_prompt(templ)),
                     (dir / config.seed_workflow_file).string());
  out << "initialized " << run_dir << " (template " << templ << ")\n"
      << "add tasks to " << (dir / config.tasks_file).string() << " (one JSON object per line: id, input, gold, "
      << "domain_tag), then run: debflow optimize --run-dir " << run_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// optimize

int cmd_optimize(const CommonOptions& o, const OptimizeOptions& opt, std::ostream& out) {
  const fs::path dir(o.run_dir);
  if (!fs::is_directory(dir)) throw CommandError("missing run directory " + o.run_dir);
  auto config = load_config(o);
  if (opt.max_iterations) config.max_iterations = *opt.max_iterations;
  if (opt.budget_usd) config.budget_usd = *opt.budget_usd;
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto state_path = dir / run_files::kState;
  if (fs::exists(state_path) && !opt.resume) {
    const auto status = read_json_file(state_path).value("status", std::string("running"));
    throw CommandError("run directory already holds a " + status + " run; pass --resume to continue it " +
                       "(raise --max-iterations to extend a completed run) or use a fresh --run-dir");
  }

  OptimizerInputs in;
  in.config = config;
  in.tasks = load_tasks(in_run_dir(dir, config.tasks_file));
  in.seed_workflow = load_graph(in_run_dir(dir, config.seed_workflow_file));
  in.prompts = load_prompt_dir((dir / run_files::kPrompts).string());
  in.run_dir = dir;
  in.resume = opt.resume;
  auto provider = make_provider(o.provider, config);

  RunLock lock(dir / run_files::kLock);
  const auto result = optimize(in, provider);
  double cost = 0.0;
  for (const auto& [_, u] : result.usage) cost += u.cost_usd;

  if (o.json) {
    out << nlohmann::json{{"best_fingerprint", result.best.fingerprint},
                          {"best_score", result.best.score},
                          {"pool_size", result.pool.size()},
                          {"iterations_completed", result.next_iteration - 1},
                          {"stop_reason", result.stop_reason},
                          {"cost_usd", cost},
                          {"usage", result.usage}}
               .dump(2)
        << '\n';
    return 0;
  }
  if (result.pool.size() == 1 && result.next_iteration <= 1) {
    out << "baseline score " << fixed(result.best.score) << " (" << result.best.fingerprint << ")\n";
  } else {
    out << "best score " << fixed(result.best.score) << " (" << result.best.fingerprint << ")\n"
        << "candidates " << result.pool.size() << ", stopped: " << result.stop_reason << "\n";
  }
  out << "cost $" << fixed(cost, 6) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const CommonOptions& o, const EvalOptions& e, std::ostream& out) {
  const fs::path dir(o.run_dir);
  auto config = load_config(o);
  fs::path workflow = e.workflow;
  if (workflow.empty()) {
    workflow = fs::exists(dir / run_files::kBest) ? dir / run_files::kBest : in_run_dir(dir, config.seed_workflow_file);
  }
  const fs::path tasks_path = e.tasks.empty() ? in_run_dir(dir, config.tasks_file) : fs::path(e.tasks);
  const auto graph = load_graph(workflow);
  const auto tasks = load_tasks(tasks_path);
  auto provider = make_provider(o.provider, config);

  auto ledger = std::make_shared<UsageLedger>(config.prices);
  MeteredProvider metered(with_retry(provider, config.retry), ledger);
  ExecutorOptions exec;
  exec.default_temperature = config.temperature;
  exec.node_timeout = std::chrono::milliseconds(config.node_timeout_ms);
  exec.max_concurrency = config.max_concurrency;
  const auto ev = evaluate_workflow(graph, tasks, metered, ScorerRegistry{}, config.scoring, exec);

  if (o.json) {
    out << nlohmann::json{{"fingerprint", fingerprint(graph)},
                          {"report", ev.report},
                          {"cost_usd", ledger->total_cost()}}
               .dump(2)
        << '\n';
    return 0;
  }
  out << "workflow " << fingerprint(graph) << "\n";
  out << std::left << std::setw(24) << "task" << std::setw(10) << "status" << "score\n";
  for (const auto& t : ev.report.per_task) {
    out << std::setw(24) << t.task_id << std::setw(10) << to_string(t.status) << fixed(t.score) << "\n";
  }
  out << "aggregate " << fixed(ev.report.aggregate) << " (" << ev.report.completed_count << " completed, "
      << ev.report.failed_count << " failed), cost $" << fixed(ledger->total_cost(), 6) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

std::vector<nlohmann::json> load_runlog(const fs::path& dir) {
  const auto path = dir / run_files::kRunLog;
  if (!fs::exists(path)) throw CommandError("missing run log " + path.string());
  return read_jsonl(path);
}

std::vector<Candidate> load_candidates(const fs::path& dir) {
  const auto state_path = dir / run_files::kState;
  if (!fs::exists(state_path)) throw CommandError("missing " + state_path.string() + "; has optimize run here?");
  std::vector<Candidate> out;
  for (const auto& fp : read_json_file(state_path).value("pool", nlohmann::json::array())) {
    out.push_back(read_json_file(dir / run_files::kCandidates / (fp.get<std::string>() + ".json")).get<Candidate>());
  }
  return out;
}

void inspect_candidates(const fs::path& dir, bool json, std::ostream& out) {
  const auto cands = load_candidates(dir);
  if (json) {
    out << nlohmann::json(cands).dump(2) << '\n';
    return;
  }
  out << std::left << std::setw(5) << "#" << std::setw(14) << "fingerprint" << std::setw(9) << "score" << std::setw(6)
      << "iter" << std::setw(14) << "parent" << std::setw(30) << "operators" << "cost_usd\n";
  for (size_t i = 0; i < cands.size(); ++i) {
    const auto& c = cands[i];
    std::string ops;
    for (const auto& n : c.graph.nodes) ops += (ops.empty() ? "" : ",") + to_string(n.kind);
    out << std::setw(5) << i << std::setw(14) << short_fp(c.fingerprint) << std::setw(9) << fixed(c.score)
        << std::setw(6) << c.lineage.iteration << std::setw(14)
        << (c.lineage.parent_fingerprint ? short_fp(*c.lineage.parent_fingerprint) : "-") << std::setw(30) << ops
        << fixed(c.cost_usd, 6) << "\n";
  }
}

void inspect_genes(const fs::path& dir, bool json, std::ostream& out) {
  const auto j = read_json_file(dir / run_files::kMemory);
  if (json) {
    out << j.dump(2) << '\n';
    return;
  }
  MemoryStore memory = j.get<MemoryStore>();
  out << std::left << std::setw(7) << "tier" << std::setw(28) << "id" << std::setw(16) << "category" << std::setw(18)
      << "nodes" << "directive\n";
  auto rows = [&](const char* tier, const std::deque<Gene>& genes) {
    for (const auto& g : genes) {
      std::string nodes;
      for (const auto& n : g.failing_node_ids) nodes += (nodes.empty() ? "" : ",") + n;
      out << std::setw(7) << tier << std::setw(28) << g.id << std::setw(16) << to_string(g.error_category)
          << std::setw(18) << nodes << g.directive << "\n";
    }
  };
  rows("short", memory.short_term());
  rows("long", memory.long_term());
}

void inspect_debates(const fs::path& dir, bool json, std::ostream& out) {
  std::vector<nlohmann::json> debates;
  for (const auto& e : load_runlog(dir)) {
    const auto kind = e.value("event", std::string{});
    if (kind == "debate" || kind == "debate_failed") debates.push_back(e);
  }
  if (json) {
    out << nlohmann::json(debates).dump(2) << '\n';
    return;
  }
  for (const auto& d : debates) {
    const int it = d.value("iteration", 0);
    if (d["event"] == "debate_failed") {
      out << "iteration " << it << ": debate failed: " << d.value("message", std::string{}) << "\n\n";
      continue;
    }
    out << "iteration " << it << ": " << d.value("rounds_executed", 0) << " round(s), "
        << (d.value("decided_by_final_judge", false) ? "final judge" : "judge") << " chose "
        << d.value("selected_side", std::string{}) << " of round " << d.value("selected_round", 0) << " -> "
        << short_fp(d.value("result_fingerprint", std::string{})) << " (parent "
        << short_fp(d.value("parent_fingerprint", std::string{})) << ")\n";
    for (const auto& r : d.value("transcript", nlohmann::json::array())) {
      out << "  round " << r.value("round", 0) << "\n";
      for (const auto& a : r.value("debaters", nlohmann::json::array())) {
        out << "    [" << a.value("side", std::string{}) << " " << a.value("debater", 0) << "] "
            << a.value("argument", std::string{}) << "\n";
      }
      for (const char* side : {"proponent", "opponent"}) {
        if (r.contains(side) && !r[side].is_null()) {
          out << "    " << side << " proposal: " << r[side]["edits"].size() << " edit(s) -> "
              << short_fp(r[side].value("fingerprint", std::string{})) << ": "
              << r[side].value("rationale", std::string{}) << "\n";
        }
      }
      if (r.contains("verdict") && !r["verdict"].is_null()) {
        out << "    judge: " << r["verdict"].value("decision", std::string{}) << "\n";
      }
      for (const auto& n : r.value("notes", nlohmann::json::array())) out << "    note: " << n.get<std::string>() << "\n";
    }
    out << "\n";
  }
}

void inspect_summary(const fs::path& dir, bool json, std::ostream& out) {
  const auto state = read_json_file(dir / run_files::kState);
  const auto cands = load_candidates(dir);
  std::optional<Candidate> best;
  if (fs::exists(dir / run_files::kBest)) best = read_json_file(dir / run_files::kBest).get<Candidate>();
  std::map<std::string, ModelUsage> usage = state.value("usage", std::map<std::string, ModelUsage>{});
  double cost = 0.0;
  int64_t calls = 0;
  for (const auto& [_, u] : usage) {
    cost += u.cost_usd;
    calls += u.calls;
  }
  if (json) {
    out << nlohmann::json{{"status", state.value("status", std::string{})},
                          {"next_iteration", state.value("next_iteration", 0)},
                          {"pool_size", cands.size()},
                          {"best_fingerprint", best ? nlohmann::json(best->fingerprint) : nlohmann::json()},
                          {"best_score", best ? nlohmann::json(best->score) : nlohmann::json()},
                          {"usage", usage},
                          {"cost_usd", cost}}
               .dump(2)
        << '\n';
    return;
  }
  out << "status        " << state.value("status", std::string{}) << "\n"
      << "iterations    " << std::max(0, state.value("next_iteration", 0) - 1) << "\n"
      << "candidates    " << cands.size() << "\n";
  if (best) out << "best          " << fixed(best->score) << " (" << best->fingerprint << ")\n";
  out << "llm calls     " << calls << "\n"
      << "cost          $" << fixed(cost, 6) << "\n";
}

int cmd_inspect(const CommonOptions& o, const std::string& what, std::ostream& out) {
  const fs::path dir(o.run_dir);
  if (!fs::is_directory(dir)) throw CommandError("missing run directory " + o.run_dir);
  if (what == "candidates") inspect_candidates(dir, o.json, out);
  else if (what == "genes") inspect_genes(dir, o.json, out);
  else if (what == "debates") inspect_debates(dir, o.json, out);
  else inspect_summary(dir, o.json, out);
  return 0;
}

// ---------------------------------------------------------------------------
// replay

int cmd_replay(const CommonOptions& o, std::optional<int> iteration, std::ostream& out) {
  const fs::path dir(o.run_dir);
  const auto config = load_config(o);
  const auto events = load_runlog(dir);
  if (!iteration) {
    for (const auto& e : events) {
      if (e.value("event", std::string{}) == "evaluation") iteration = e.value("iteration", 0);
    }
    if (!iteration) throw CommandError("run log holds no evaluation to replay");
  }
  const auto tasks = load_tasks(in_run_dir(dir, config.tasks_file));
  ExecutorOptions exec;
  exec.default_temperature = config.temperature;
  exec.max_concurrency = config.max_concurrency;
  ReplayResult r;
  try {
    r = replay_iteration(events, *iteration, tasks, exec);
  } catch (const ReplayError& e) {
    throw CommandError(e.what());
  }
  if (o.json) {
    nlohmann::json j{{"iteration", r.iteration},
                     {"fingerprint", r.fingerprint},
                     {"tasks", r.tasks},
                     {"calls", r.calls},
                     {"identical", r.matched()}};
    if (r.divergence) {
      j["divergence"] = {{"task_id", r.divergence->task_id},
                         {"node_id", r.divergence->node_id},
                         {"detail", r.divergence->detail}};
    }
    out << j.dump(2) << '\n';
  } else if (r.matched()) {
    out << "iteration " << r.iteration << ": identical (" << r.tasks << " tasks, " << r.calls << " calls)\n";
  } else {
    out << "iteration " << r.iteration << ": diverged at task " << r.divergence->task_id << ", node "
        << (r.divergence->node_id.empty() ? "-" : r.divergence->node_id) << ": " << r.divergence->detail << "\n";
  }
  return r.matched() ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"debflow: workflow optimization by multi-agent debate", "debflow"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string templ = "default";
  auto* init = app.add_subcommand("init", "Create a run directory with config, prompts and an IO seed workflow");
  init->add_option("--run-dir", common.run_dir, "Run directory to create")->required();
  init->add_option("--template", templ, "Config template")->check(CLI::IsMember({"default", "math", "qa"}));
  init->add_option("--config", common.config, "Ignored by init");
  init->add_option("--seed", common.seed, "Seed written to the config");
  init->add_option("--provider", common.provider, "Ignored by init");

  OptimizeOptions opt;
  auto* optimize_cmd = app.add_subcommand("optimize", "Run the optimization loop");
  add_common(optimize_cmd, common);
  optimize_cmd->add_option("--max-iterations", opt.max_iterations, "Iterations after the seed evaluation");
  optimize_cmd->add_option("--budget-usd", opt.budget_usd, "Stop once this much has been spent");
  optimize_cmd->add_flag("--resume", opt.resume, "Continue a previous run in --run-dir");

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Score one workflow on a task file");
  add_common(eval, common);
  eval->add_option("--workflow", ev.workflow, "Workflow or candidate JSON (default: best.json, else the seed)");
  eval->add_option("--tasks", ev.tasks, "Task JSONL (default: the config's task file)");

  std::string what = "summary";
  auto* inspect = app.add_subcommand("inspect", "Show candidates, genes, debates or a summary of a run");
  add_common(inspect, common);
  inspect->add_option("what", what, "candidates | genes | debates | summary")
      ->check(CLI::IsMember({"candidates", "genes", "debates", "summary"}));

  std::optional<int> iteration;
  auto* replay = app.add_subcommand("replay", "Re-execute a logged evaluation and compare trajectories");
  add_common(replay, common);
  replay->add_option("--iteration", iteration, "Iteration to replay (default: the last evaluated)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (init->parsed()) {
      const int rc = cmd_init(common.run_dir, templ, out);
      if (common.seed) {
        auto config = load_run_config(fs::path(common.run_dir) / run_files::kConfig);
        config.seed = *common.seed;
        save_run_config(config, fs::path(common.run_dir) / run_files::kConfig);
      }
      return rc;
    }
    if (optimize_cmd->parsed()) return cmd_optimize(common, opt, out);
    if (eval->parsed()) return cmd_eval(common, ev, out);
    if (inspect->parsed()) return cmd_inspect(common, what, out);
    if (replay->parsed()) return cmd_replay(common, iteration, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const OptimizeAborted& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace debflow
