#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "debflow/llm.hpp"

namespace debflow {

/// Thrown by reply parsers; the message is shown to the model on re-ask.
class StructuredOutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finds the JSON payload in a model reply: the first ```json (or bare ```)
/// fence, else the whole reply, else the outermost {...} span.
std::optional<nlohmann::json> extract_json(std::string_view reply);

template <class T>
struct StructuredReply {
  std::optional<T> value;
  int calls = 0;
  std::string last_error;
};

/// Sends `request` and parses the reply. On a parse failure the model is
/// re-asked up to `max_repairs` times with its previous reply and the error.
/// Provider errors propagate.
template <class T>
StructuredReply<T> ask_structured(ChatProvider& provider, ChatRequest request,
                                  const std::function<T(const nlohmann::json&)>& parse,
                                  int max_repairs = 1) {
  StructuredReply<T> out;
  for (int attempt = 0; attempt <= max_repairs; ++attempt) {
    auto reply = provider.complete(request);
    ++out.calls;
    try {
      auto j = extract_json(reply.content);
      if (!j) throw StructuredOutputError("reply contains no JSON object");
      out.value = parse(*j);
      return out;
    } catch (const StructuredOutputError& e) {
      out.last_error = e.what();
    } catch (const nlohmann::json::exception& e) {
      out.last_error = std::string("JSON does not match the contract: ") + e.what();
    } catch (const std::invalid_argument& e) {
      out.last_error = e.what();
    }
    request.messages.push_back({Role::Assistant, reply.content});
    request.messages.push_back(
        {Role::User, "Your previous reply was rejected: " + out.last_error +
                         "\nReply again with a single fenced ```json block that fixes this."});
  }
  return out;
}

}  // namespace debflow
