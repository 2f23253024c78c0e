#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace debflow {

/// UTC wall-clock time as "YYYY-MM-DDTHH:MM:SS.mmmZ".
std::string utc_timestamp();

/// Append-only JSONL event log. Every event gets a "ts" field; all other
/// fields are the caller's.
class RunLog {
 public:
  using Clock = std::function<std::string()>;

  /// An empty path keeps events in memory only.
  explicit RunLog(std::filesystem::path path = {}, Clock clock = utc_timestamp);

  void append(nlohmann::json event);
  const std::vector<nlohmann::json>& events() const { return events_; }

 private:
  std::filesystem::path path_;
  Clock clock_;
  std::ofstream out_;
  std::vector<nlohmann::json> events_;
};

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace debflow
