#include "debflow/http_provider.hpp"

#include <cstdlib>

#include <httplib.h>

namespace debflow {

HttpProviderConfig http_config_from_env(std::string base_url) {
  HttpProviderConfig c;
  if (const char* key = std::getenv(kApiKeyEnv)) c.api_key = key;
  if (base_url.empty()) {
    if (const char* url = std::getenv(kBaseUrlEnv)) base_url = url;
  }
  c.base_url = std::move(base_url);
  return c;
}

nlohmann::json chat_request_body(const ChatRequest& request) {
  auto messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  nlohmann::json body{{"model", request.model},
                      {"messages", std::move(messages)},
                      {"temperature", request.temperature}};
  if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
  return body;
}

ChatResponse parse_chat_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponse(std::string("response is not JSON: ") + e.what());
  }
  try {
    ChatResponse r;
    const auto& content = j.at("choices").at(0).at("message").at("content");
    r.content = content.is_null() ? std::string{} : content.get<std::string>();
    if (j.contains("usage") && j["usage"].is_object()) {
      r.prompt_tokens = j["usage"].value("prompt_tokens", int64_t{0});
      r.completion_tokens = j["usage"].value("completion_tokens", int64_t{0});
    }
    if (r.prompt_tokens < 0 || r.completion_tokens < 0) {
      throw MalformedResponse("negative token counts");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponse(std::string("unexpected response shape: ") + e.what());
  }
}

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
  auto& url = config_.base_url;
  if (url.empty()) {
    throw std::invalid_argument(std::string("no base URL configured (set ") + kBaseUrlEnv + ")");
  }
  while (!url.empty() && url.back() == '/') url.pop_back();
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("base URL needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_port_ = url;
  } else {
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = url.substr(path_start);
  }
}

ChatResponse HttpProvider::complete(const ChatRequest& request) {
  check_request(request);
  httplib::Client client(scheme_host_port_);
  auto timeout = request.timeout.count() > 0 ? request.timeout : config_.timeout;
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const auto start = std::chrono::steady_clock::now();
  auto result = client.Post(path_prefix_ + "/chat/completions", headers,
                            chat_request_body(request).dump(), "application/json");
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  if (!result) {
    throw TransportError("request to " + scheme_host_port_ + " failed: " +
                         httplib::to_string(result.error()));
  }
  const int status = result->status;
  if (status == 429) throw RateLimited("HTTP 429 from " + scheme_host_port_);
  if (status >= 500) throw TransportError("HTTP " + std::to_string(status) + " from " + scheme_host_port_);
  if (status < 200 || status >= 300) {
    throw RequestRejected("HTTP " + std::to_string(status) + ": " + result->body.substr(0, 500));
  }
  auto response = parse_chat_response(result->body);
  response.provider_latency_ms = elapsed.count();
  return response;
}

}  // namespace debflow
