#include "debflow/scripted_provider.hpp"

#include <cctype>
#include <fstream>

namespace debflow {

ScriptEntry ScriptEntry::keyed(std::string key, std::string response) {
  ScriptEntry e;
  e.key = std::move(key);
  e.response = std::move(response);
  return e;
}

ScriptEntry ScriptEntry::substring(std::string needle, std::string response) {
  ScriptEntry e;
  e.contains = std::move(needle);
  e.response = std::move(response);
  return e;
}

bool ScriptEntry::matches(const ChatRequest& request, const std::string& rendered) const {
  if (key && *key != request.tag) return false;
  if (contains && rendered.find(*contains) == std::string::npos) return false;
  if (equals && *equals != rendered) return false;
  return true;
}

void to_json(nlohmann::json& j, const ScriptEntry& e) {
  j = nlohmann::json::object();
  if (e.key) j["key"] = *e.key;
  if (e.contains) j["contains"] = *e.contains;
  if (e.equals) j["equals"] = *e.equals;
  j["response"] = e.response;
  if (!e.error.empty()) j["error"] = e.error;
  if (!e.error_message.empty()) j["error_message"] = e.error_message;
  if (e.prompt_tokens) j["prompt_tokens"] = *e.prompt_tokens;
  if (e.completion_tokens) j["completion_tokens"] = *e.completion_tokens;
}

void from_json(const nlohmann::json& j, ScriptEntry& e) {
  auto opt = [&](const char* name) -> std::optional<std::string> {
    if (j.contains(name) && !j[name].is_null()) return j[name].get<std::string>();
    return std::nullopt;
  };
  e.key = opt("key");
  e.contains = opt("contains");
  e.equals = opt("equals");
  e.response = j.value("response", std::string{});
  e.error = j.value("error", std::string{});
  e.error_message = j.value("error_message", std::string{});
  if (j.contains("prompt_tokens")) e.prompt_tokens = j["prompt_tokens"].get<int64_t>();
  if (j.contains("completion_tokens")) e.completion_tokens = j["completion_tokens"].get<int64_t>();
}

int64_t approx_token_count(std::string_view text) {
  int64_t count = 0;
  bool in_word = false;
  for (char c : text) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

ScriptedProvider::ScriptedProvider(std::vector<ScriptEntry> script)
    : script_(std::move(script)), used_(script_.size(), false) {}

ChatResponse ScriptedProvider::complete(const ChatRequest& request) {
  check_request(request);
  const auto rendered = render_request(request);
  std::lock_guard lock(mu_);
  requests_.push_back(request);
  for (size_t i = 0; i < script_.size(); ++i) {
    if (used_[i] || !script_[i].matches(request, rendered)) continue;
    used_[i] = true;
    ++consumed_;
    const auto& entry = script_[i];
    if (!entry.error.empty()) {
      throw_provider_error(entry.error, entry.error_message.empty() ? "scripted " + entry.error : entry.error_message);
    }
    ChatResponse r;
    r.content = entry.response;
    int64_t prompt_words = 0;
    for (const auto& m : request.messages) prompt_words += approx_token_count(m.content);
    r.prompt_tokens = entry.prompt_tokens.value_or(prompt_words);
    r.completion_tokens = entry.completion_tokens.value_or(approx_token_count(entry.response));
    return r;
  }
  throw ScriptExhausted("no unconsumed script entry matches request tagged '" + request.tag + "'");
}

size_t ScriptedProvider::consumed() const {
  std::lock_guard lock(mu_);
  return consumed_;
}

size_t ScriptedProvider::remaining() const {
  std::lock_guard lock(mu_);
  return script_.size() - consumed_;
}

std::vector<ChatRequest> ScriptedProvider::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::shared_ptr<ScriptedProvider> scripted_provider(std::vector<ScriptEntry> script) {
  return std::make_shared<ScriptedProvider>(std::move(script));
}

std::vector<ScriptEntry> load_script_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open script file " + path);
  auto j = nlohmann::json::parse(in);
  if (j.is_object()) j = j.at("entries");
  return j.get<std::vector<ScriptEntry>>();
}

void save_script_file(const std::vector<ScriptEntry>& script, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write script file " + path);
  out << nlohmann::json(script).dump(2) << '\n';
}

}  // namespace debflow
