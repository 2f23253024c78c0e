#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debflow/executor.hpp"
#include "debflow/scripted_provider.hpp"

namespace debflow {

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReplayDivergence {
  std::string task_id;
  std::string node_id;
  std::string detail;
};

struct ReplayResult {
  int iteration = 0;
  std::string fingerprint;
  size_t tasks = 0;
  size_t calls = 0;
  /// Empty when the re-execution reproduced every logged trajectory.
  std::optional<ReplayDivergence> divergence;

  bool matched() const { return !divergence.has_value(); }
};

/// Script that answers exactly the node calls logged for one evaluation.
std::vector<ScriptEntry> evaluation_script(const std::vector<nlohmann::json>& events, int iteration);

/// Re-executes the candidate evaluated at `iteration` against the logged LLM
/// responses and compares the trajectories, ignoring latency.
ReplayResult replay_iteration(const std::vector<nlohmann::json>& events, int iteration,
                              const std::vector<TaskInstance>& tasks, const ExecutorOptions& options = {});

}  // namespace debflow
