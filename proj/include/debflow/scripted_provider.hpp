#pragma once

#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debflow/llm.hpp"

namespace debflow {

/// One scripted reply. Every matcher that is set must hold; an entry with no
/// matchers matches any request.
struct ScriptEntry {
  std::optional<std::string> key;       // equals ChatRequest::tag
  std::optional<std::string> contains;  // substring of render_request()
  std::optional<std::string> equals;    // equals render_request()
  std::string response;
  /// When non-empty the entry raises this provider error class instead.
  std::string error;
  /// Message of the raised error; a generic one when empty.
  std::string error_message;
  std::optional<int64_t> prompt_tokens;
  std::optional<int64_t> completion_tokens;

  static ScriptEntry keyed(std::string key, std::string response);
  static ScriptEntry substring(std::string needle, std::string response);

  bool matches(const ChatRequest& request, const std::string& rendered) const;
};

void to_json(nlohmann::json& j, const ScriptEntry& e);
void from_json(const nlohmann::json& j, ScriptEntry& e);

/// Whitespace-delimited word count; token estimate used by the scripted provider.
int64_t approx_token_count(std::string_view text);

/// Replays canned responses. Each call consumes the first unconsumed matching
/// entry; a call with no match throws ScriptExhausted.
class ScriptedProvider : public ChatProvider {
 public:
  explicit ScriptedProvider(std::vector<ScriptEntry> script);

  ChatResponse complete(const ChatRequest& request) override;

  size_t consumed() const;
  size_t remaining() const;
  /// Requests seen so far, in call order.
  std::vector<ChatRequest> requests() const;

 private:
  mutable std::mutex mu_;
  std::vector<ScriptEntry> script_;
  std::vector<bool> used_;
  std::vector<ChatRequest> requests_;
  size_t consumed_ = 0;
};

std::shared_ptr<ScriptedProvider> scripted_provider(std::vector<ScriptEntry> script);

/// Reads a JSON array of entries, or an object with an "entries" array.
std::vector<ScriptEntry> load_script_file(const std::string& path);
void save_script_file(const std::vector<ScriptEntry>& script, const std::string& path);

}  // namespace debflow
