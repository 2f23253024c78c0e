#include "fixture.hpp"

#include <atomic>
#include <random>

namespace debflow::testing {

namespace fs = std::filesystem;

namespace {

std::string task_id(int i) { return (i < 9 ? "t0" : "t") + std::to_string(i + 1); }

std::string fenced(const nlohmann::json& j) { return "```json\n" + j.dump(2) + "\n```"; }

ScriptEntry node_reply(const std::string& node, const std::string& id, const std::string& answer) {
  ScriptEntry e;
  e.key = "node:" + node;
  e.contains = "[" + id + "]";
  e.response = answer;
  return e;
}

ScriptEntry gene_extract(const std::string& node) {
  return ScriptEntry::keyed("gene-extract", fenced({{"failing_node_ids", {node}},
                                                    {"error_category", "WrongAnswer"},
                                                    {"diagnosis", "the " + node + " node returned a wrong sum"},
                                                    {"directive", "cross-check the " + node + " answer"}}));
}

ScriptEntry gene_refine() {
  return ScriptEntry::keyed("gene-refine", fenced({{"error_category", "WrongAnswer"},
                                                   {"diagnosis", "single-pass answers drift on carries"},
                                                   {"directive", "add a second pass that verifies the sum"}}));
}

}  // namespace

double EndToEndFixture::io_score() const {
  return static_cast<double>(options.io_correct) / options.tasks;
}

double EndToEndFixture::ensemble_score() const {
  return static_cast<double>(options.ensemble_correct) / options.tasks;
}

OperatorSpec fixture_ensemble_node(const std::string& model) {
  OperatorSpec ens;
  ens.id = "ens";
  ens.kind = OperatorKind::Ensemble;
  ens.model_ref = model;
  ens.prompt_template = "Question: {question}\nDraft answer: {answer}\nReply with the verified final answer only.";
  ens.input_bindings = {{"question", "task.input"}, {"answer", "answer"}};
  ens.output_name = "final";
  return ens;
}

EndToEndFixture make_end_to_end_fixture(const FixtureOptions& options) {
  EndToEndFixture f;
  f.options = options;
  f.config.seed = 7;
  f.config.max_iterations = 1;
  f.config.max_genes_per_iteration = 2;
  f.config.max_concurrency = 2;
  f.config.retry.backoff_base = std::chrono::milliseconds(0);
  f.config.prices["gpt-4o-mini"] = ModelPrice{0.15, 0.60};
  f.config.task_brief = "Two-number addition. The exit node must reply with only the sum.";
  const auto& model = f.config.executor_model;

  std::mt19937 rng(20240611);
  std::uniform_int_distribution<int> operand(10, 99);
  for (int i = 0; i < options.tasks; ++i) {
    const int a = operand(rng), b = operand(rng);
    f.tasks.push_back({task_id(i), "[" + task_id(i) + "] What is " + std::to_string(a) + " + " + std::to_string(b) + "?",
                       std::to_string(a + b), DomainTag::Math});
  }
  f.seed = make_io_workflow(model);
  auto answer = [&](int i, bool correct) {
    const int gold = std::stoi(f.tasks[i].gold);
    return std::to_string(correct ? gold : gold + 1);
  };

  // Iteration 0: the seed.
  for (int i = 0; i < options.tasks; ++i) f.script.push_back(node_reply("io", task_id(i), answer(i, i < options.io_correct)));
  f.script.push_back(gene_extract("io"));
  f.script.push_back(gene_extract("io"));
  f.script.push_back(gene_refine());

  // Iteration 1: one debate round that the judge settles for the proponents.
  for (int d = 0; d < f.config.proponents + f.config.opponents; ++d) {
    f.script.push_back(ScriptEntry::keyed("debater", d < f.config.proponents
                                                         ? "A verification pass after io would catch its arithmetic slips."
                                                         : "Extra nodes cost calls; only add one if it checks the sum."));
  }
  nlohmann::json edits = nlohmann::json::array();
  if (options.duplicate_proposal) {
    edits.push_back({{"kind", "ReplacePrompt"}, {"node_id", "io"}, {"prompt_template", f.seed.nodes[0].prompt_template}});
    f.ensemble = f.seed;
  } else {
    const auto ens = fixture_ensemble_node(model);
    edits.push_back({{"kind", "AddNode"}, {"node", ens}, {"inputs_from", {"io"}}, {"set_exit", true}});
    f.ensemble = f.seed;
    f.ensemble.nodes.push_back(ens);
    f.ensemble.edges.push_back({"io", "ens"});
    f.ensemble.exit_id = "ens";
  }
  f.script.push_back(ScriptEntry::keyed("proponent-synthesis",
                                        fenced({{"rationale", "verify the draft answer"}, {"edits", edits}})));
  f.script.push_back(ScriptEntry::keyed("opponent-synthesis",
                                        fenced({{"rationale", "one checking node is acceptable"}, {"concur", true}})));
  f.script.push_back(ScriptEntry::keyed(
      "judge", fenced({{"decision", "ProponentOptimal"}, {"e_p", "targets the failure"}, {"e_o", "agrees"}})));

  if (!options.duplicate_proposal) {
    for (int i = 0; i < options.tasks; ++i) {
      f.script.push_back(node_reply("io", task_id(i), answer(i, i < options.io_correct)));
      f.script.push_back(node_reply("ens", task_id(i), answer(i, i < options.ensemble_correct)));
    }
    f.script.push_back(gene_extract("ens"));
    f.script.push_back(gene_refine());
    f.script.push_back(gene_extract("ens"));
    f.script.push_back(gene_refine());
  }
  return f;
}

void write_fixture(const EndToEndFixture& fixture, const fs::path& run_dir, const fs::path& script_path) {
  fs::create_directories(run_dir / run_files::kPrompts);
  save_run_config(fixture.config, run_dir / run_files::kConfig);
  save_tasks_jsonl(fixture.tasks, (run_dir / fixture.config.tasks_file).string());
  save_workflow_file(fixture.seed, (run_dir / fixture.config.seed_workflow_file).string());
  write_prompt_dir(default_prompts(), (run_dir / run_files::kPrompts).string());
  save_script_file(fixture.script, script_path.string());
}

fs::path temp_dir(const std::string& prefix) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  for (;;) {
    auto p = fs::temp_directory_path() /
             (prefix + "-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
    if (fs::create_directories(p)) return p;
  }
}

std::vector<nlohmann::json> strip_timestamps(std::vector<nlohmann::json> events) {
  for (auto& e : events) e.erase("ts");
  return events;
}

}  // namespace debflow::testing
