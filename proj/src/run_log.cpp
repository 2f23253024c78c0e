#include "debflow/run_log.hpp"

#include <chrono>
#include <ctime>
#include <iomanip>
#include <sstream>

namespace debflow {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return os.str();
}

RunLog::RunLog(std::filesystem::path path, Clock clock) : path_(std::move(path)), clock_(std::move(clock)) {
  if (!path_.empty()) {
    out_.open(path_, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open run log " + path_.string());
  }
}

void RunLog::append(nlohmann::json event) {
  event["ts"] = clock_();
  if (out_.is_open()) {
    out_ << event.dump() << '\n';
    out_.flush();
  }
  events_.push_back(std::move(event));
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace debflow
