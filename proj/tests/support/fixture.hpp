#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "debflow/optimizer.hpp"
#include "debflow/scripted_provider.hpp"

namespace debflow::testing {

struct FixtureOptions {
  int tasks = 20;
  int io_correct = 8;
  int ensemble_correct = 14;
  /// When true the iteration-1 proposal reproduces the seed workflow.
  bool duplicate_proposal = false;
};

/// Twenty arithmetic tasks. The IO seed answers the first `io_correct` right;
/// the debate in iteration 1 adds an Ensemble node "ens" after "io" that
/// answers the first `ensemble_correct` right.
struct EndToEndFixture {
  std::vector<TaskInstance> tasks;
  WorkflowGraph seed;
  WorkflowGraph ensemble;
  RunConfig config;
  std::vector<ScriptEntry> script;
  FixtureOptions options;

  double io_score() const;
  double ensemble_score() const;
  std::string seed_fingerprint() const { return fingerprint(seed); }
  std::string ensemble_fingerprint() const { return fingerprint(ensemble); }
};

EndToEndFixture make_end_to_end_fixture(const FixtureOptions& options = {});

/// The Ensemble node added by the fixture's debate.
OperatorSpec fixture_ensemble_node(const std::string& model);

/// Writes config.json, tasks.jsonl, workflow.json and prompts/ into run_dir and
/// the script to script_path.
void write_fixture(const EndToEndFixture& fixture, const std::filesystem::path& run_dir,
                   const std::filesystem::path& script_path);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& prefix);

/// Drops the "ts" field of every event.
std::vector<nlohmann::json> strip_timestamps(std::vector<nlohmann::json> events);

}  // namespace debflow::testing
