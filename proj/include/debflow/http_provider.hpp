#pragma once

#include <chrono>
#include <string>

#include <nlohmann/json.hpp>

#include "debflow/llm.hpp"

namespace debflow {

struct HttpProviderConfig {
  /// e.g. "https://api.openai.com/v1"; requests go to <base_url>/chat/completions.
  std::string base_url;
  std::string api_key;
  std::chrono::milliseconds timeout{120000};
};

inline constexpr const char* kApiKeyEnv = "DEBFLOW_API_KEY";
inline constexpr const char* kBaseUrlEnv = "DEBFLOW_BASE_URL";

/// Fills api_key from DEBFLOW_API_KEY and, when `base_url` is empty,
/// base_url from DEBFLOW_BASE_URL.
HttpProviderConfig http_config_from_env(std::string base_url = {});

/// Request body for an OpenAI-compatible chat completion.
nlohmann::json chat_request_body(const ChatRequest& request);

/// Parses an OpenAI-compatible response body; throws MalformedResponse.
ChatResponse parse_chat_response(const std::string& body);

class HttpProvider : public ChatProvider {
 public:
  explicit HttpProvider(HttpProviderConfig config);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  HttpProviderConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

}  // namespace debflow
