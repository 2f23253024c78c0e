#include <doctest.h>

#include <filesystem>

#include "debflow/optimizer.hpp"
#include "fixture.hpp"
#include "simulated.hpp"

using namespace debflow;
using namespace debflow::testing;
namespace fs = std::filesystem;

namespace {

OptimizerInputs inputs_for(const EndToEndFixture& f, const fs::path& run_dir = {}) {
  OptimizerInputs in;
  in.config = f.config;
  in.tasks = f.tasks;
  in.seed_workflow = f.seed;
  in.run_dir = run_dir;
  in.clock = [] { return std::string("T"); };
  in.sleeper = [](std::chrono::milliseconds) {};
  return in;
}

std::vector<nlohmann::json> of_type(const std::vector<nlohmann::json>& events, const std::string& type) {
  std::vector<nlohmann::json> out;
  for (const auto& e : events) {
    if (e.at("event") == type) out.push_back(e);
  }
  return out;
}

/// Several iterations against the simulated model.
OptimizerInputs simulated_inputs(int iterations, const fs::path& run_dir = {}) {
  auto f = make_end_to_end_fixture();
  auto in = inputs_for(f, run_dir);
  in.config.max_iterations = iterations;
  in.config.max_rounds = 2;
  in.config.max_concurrency = 3;
  return in;
}

}  // namespace

TEST_CASE("zero iterations returns the evaluated IO workflow") {
  const auto f = make_end_to_end_fixture();
  auto in = inputs_for(f);
  in.config.max_iterations = 0;
  auto provider = std::make_shared<ScriptedProvider>(f.script);
  const auto r = optimize(in, provider);
  CHECK(r.pool.size() == 1);
  CHECK(r.best.fingerprint == f.seed_fingerprint());
  CHECK(r.best.score == doctest::Approx(f.io_score()));
  CHECK(r.best.lineage.iteration == 0);
  CHECK_FALSE(r.best.lineage.parent_fingerprint.has_value());
  CHECK(r.stop_reason == "max_iterations");
  CHECK(provider->consumed() == 20 + 3);
}

TEST_CASE("scripted fixture finds the 0.7 Ensemble candidate") {
  const auto f = make_end_to_end_fixture();
  auto provider = std::make_shared<ScriptedProvider>(f.script);
  const auto r = optimize(inputs_for(f), provider);
  CHECK(f.io_score() == doctest::Approx(0.4));
  CHECK(r.best.score == doctest::Approx(0.7));
  CHECK(r.best.fingerprint == f.ensemble_fingerprint());
  CHECK(r.best.lineage.parent_fingerprint == f.seed_fingerprint());
  CHECK(r.pool.size() == 2);
  CHECK(provider->remaining() == 0);
  CHECK(r.memory.genes().size() >= 2);
  // 40 node calls of the ensemble evaluation plus 20 of the seed were charged.
  CHECK(r.usage.at("gpt-4o-mini").calls == static_cast<int>(f.script.size()));
}

TEST_CASE("a duplicate proposal leaves the pool unchanged and is logged") {
  FixtureOptions o;
  o.duplicate_proposal = true;
  const auto f = make_end_to_end_fixture(o);
  auto provider = std::make_shared<ScriptedProvider>(f.script);
  const auto r = optimize(inputs_for(f), provider);
  CHECK(r.pool.size() == 1);
  const auto dups = of_type(r.events, "duplicate_candidate");
  REQUIRE(dups.size() == 1);
  CHECK(dups[0]["fingerprint"] == f.seed_fingerprint());
  CHECK(of_type(r.events, "evaluation").size() == 1);
  CHECK(provider->remaining() == 0);
}

TEST_CASE("best score never decreases and candidate scores never change") {
  const auto r = optimize(simulated_inputs(6), simulated_provider(1));
  double best = -1.0;
  for (const auto& e : of_type(r.events, "best")) {
    CHECK(e["score"].get<double>() >= best);
    best = e["score"].get<double>();
  }
  CHECK(best == r.best.score);
  const auto inserted = of_type(r.events, "candidate");
  REQUIRE(inserted.size() == r.pool.size());
  for (size_t i = 0; i < inserted.size(); ++i) {
    CHECK(inserted[i]["fingerprint"] == r.pool.at(i).fingerprint);
    CHECK(inserted[i]["score"].get<double>() == r.pool.at(i).score);
  }
  for (size_t i = 0; i < r.pool.size(); ++i) {
    CHECK(r.pool.at(i).score <= r.best.score);
    if (r.pool.at(i).score == r.best.score) {
      CHECK(r.pool.at(i).fingerprint == r.best.fingerprint);
      break;
    }
  }
}

TEST_CASE("two runs with the same seed log the same events apart from timestamps") {
  const auto a = optimize(simulated_inputs(4), simulated_provider(2));
  auto in = simulated_inputs(4);
  in.clock = [] { return std::string("other"); };
  const auto b = optimize(in, simulated_provider(2));
  CHECK(strip_timestamps(a.events) == strip_timestamps(b.events));
  CHECK(a.events.size() > 50);
}

TEST_CASE("selection reflects the seed") {
  auto in = simulated_inputs(5);
  const auto a = optimize(in, simulated_provider(3));
  in.config.seed = 8;
  const auto b = optimize(in, simulated_provider(3));
  // The seed feeds only selection; identical pools would mean it is ignored.
  std::vector<size_t> sa, sb;
  for (const auto& e : of_type(a.events, "selection")) sa.push_back(e["selected_index"]);
  for (const auto& e : of_type(b.events, "selection")) sb.push_back(e["selected_index"]);
  CHECK(sa.size() == 5);
  CHECK(sb.size() == 5);
}

TEST_CASE("spend stops within one iteration of the budget") {
  const auto full = optimize(simulated_inputs(3), simulated_provider(4));
  const auto evals = of_type(full.events, "evaluation");
  const double baseline = evals.front()["cost_usd"];
  // Budget smaller than iteration 0 alone: no iteration runs after it.
  auto in = simulated_inputs(3);
  in.config.prices["gpt-4o-mini"] = ModelPrice{0.15, 0.60};
  in.config.budget_usd = baseline / 2;
  const auto r = optimize(in, simulated_provider(4));
  CHECK(r.stop_reason == "budget");
  CHECK(r.pool.size() == 1);
  CHECK(of_type(r.events, "debate").empty());

  // A budget between iterations stops the run before exceeding it by more
  // than one iteration's spend.
  double max_iteration_cost = 0.0;
  double previous = 0.0;
  for (const auto& e : of_type(full.events, "best")) {
    const double spent = e["spent_usd"];
    max_iteration_cost = std::max(max_iteration_cost, spent - previous);
    previous = spent;
  }
  in.config.budget_usd = previous * 0.6;
  const auto capped = optimize(in, simulated_provider(4));
  double total = 0.0;
  for (const auto& [model, usage] : capped.usage) total += usage.cost_usd;
  CHECK(capped.stop_reason == "budget");
  CHECK(total <= *in.config.budget_usd + max_iteration_cost + 1e-12);
}

TEST_CASE("a hard provider failure aborts with state saved, and resume finishes the run") {
  const auto f = make_end_to_end_fixture();
  const auto dir = temp_dir("opt-abort");
  // Only iteration 0 is scripted, so the first debater call exhausts the script.
  std::vector<ScriptEntry> head(f.script.begin(), f.script.begin() + 23);
  auto in = inputs_for(f, dir);
  CHECK_THROWS_AS(optimize(in, std::make_shared<ScriptedProvider>(head)), OptimizeAborted);
  const auto state = nlohmann::json::parse(std::ifstream(dir / run_files::kState));
  CHECK(state["status"] == "aborted");
  CHECK(state["next_iteration"] == 1);
  CHECK(fs::exists(dir / run_files::kMemory));
  CHECK(fs::exists(dir / run_files::kCandidates / (f.seed_fingerprint() + ".json")));
  const auto log = read_jsonl(dir / run_files::kRunLog);
  CHECK(log.back()["event"] == "abort");
  CHECK(log.back()["error_class"] == "ScriptExhausted");

  CHECK_THROWS_AS(optimize(in, std::make_shared<ScriptedProvider>(f.script)), RunExists);

  in.resume = true;
  std::vector<ScriptEntry> tail(f.script.begin() + 23, f.script.end());
  const auto r = optimize(in, std::make_shared<ScriptedProvider>(tail));
  CHECK(r.best.fingerprint == f.ensemble_fingerprint());
  CHECK(r.pool.size() == 2);
  CHECK(nlohmann::json::parse(std::ifstream(dir / run_files::kState))["status"] == "completed");
  CHECK(nlohmann::json::parse(std::ifstream(dir / run_files::kBest))["fingerprint"] == f.ensemble_fingerprint());

  // Resuming a finished run does nothing more.
  const auto again = optimize(in, std::make_shared<ScriptedProvider>(std::vector<ScriptEntry>{}));
  CHECK(again.stop_reason == "already_complete");
  fs::remove_all(dir);
}

TEST_CASE("invalid seed workflows and configs are rejected before any call") {
  const auto f = make_end_to_end_fixture();
  auto in = inputs_for(f);
  in.seed_workflow.exit_id = "nowhere";
  auto provider = std::make_shared<ScriptedProvider>(f.script);
  CHECK_THROWS_AS(optimize(in, provider), InvalidGraph);
  in = inputs_for(f);
  in.config.lambda = 1.5;
  CHECK_THROWS_AS(optimize(in, provider), std::invalid_argument);
  in = inputs_for(f);
  in.seed_workflow.nodes[0].model_ref = "not-allowed";
  CHECK_THROWS_AS(optimize(in, provider), InvalidGraph);
  CHECK(provider->consumed() == 0);
}

TEST_CASE("run config JSON round trip and defaults") {
  RunConfig c;
  CHECK(c.lambda == 0.2);
  CHECK(c.alpha == 5.0);
  CHECK(c.max_iterations == 10);
  c.budget_usd = 1.25;
  c.prices["x"] = {1, 2};
  c.scoring.by_domain["qa"] = "exact_match";
  c.memory.short_term_capacity = 5;
  const nlohmann::json j = c;
  const auto back = j.get<RunConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(nlohmann::json::object().get<RunConfig>().max_rounds == 3);

  const auto dir = temp_dir("cfg");
  save_run_config(c, dir / "c.json");
  CHECK(nlohmann::json(load_run_config(dir / "c.json")) == j);
  fs::remove_all(dir);

  for (auto mutate : std::vector<std::function<void(RunConfig&)>>{
           [](RunConfig& r) { r.alpha = 0; },
           [](RunConfig& r) { r.lambda = -0.1; },
           [](RunConfig& r) { r.max_iterations = -1; },
           [](RunConfig& r) { r.budget_usd = -1; },
           [](RunConfig& r) { r.proponents = 0; },
           [](RunConfig& r) { r.max_concurrency = 0; },
       }) {
    RunConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("candidate pool ordering and ties") {
  CandidatePool pool;
  auto cand = [](const std::string& fp, double s) {
    Candidate c;
    c.fingerprint = fp;
    c.score = s;
    return c;
  };
  CHECK(pool.insert(cand("a", 0.5)));
  CHECK(pool.insert(cand("b", 0.7)));
  CHECK(pool.insert(cand("c", 0.7)));
  CHECK_FALSE(pool.insert(cand("a", 0.9)));
  CHECK(pool.size() == 3);
  CHECK(pool.best_index() == 1);
  CHECK(pool.scores() == std::vector<double>{0.5, 0.7, 0.7});
  CHECK(pool.index_of("c") == 2u);

  Candidate c = cand("z", 0.25);
  c.graph = make_io_workflow("m");
  c.lineage = {std::string("a"), 3};
  const nlohmann::json j = c;
  CHECK(nlohmann::json(j.get<Candidate>()) == j);
}
