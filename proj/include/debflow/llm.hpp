#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace debflow {

enum class Role { System, User, Assistant };

std::string to_string(Role role);

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
  std::optional<int> max_tokens;
  /// Routing key for scripted providers and run logs ("judge", "node:io", ...).
  /// Never sent over the wire.
  std::string tag;
  /// Zero means the provider default.
  std::chrono::milliseconds timeout{0};
};

/// Throws std::invalid_argument when the request violates its invariants.
void check_request(const ChatRequest& request);

/// Flat text form of a request; substring matchers run against this.
std::string render_request(const ChatRequest& request);

struct ChatResponse {
  std::string content;
  int64_t prompt_tokens = 0;
  int64_t completion_tokens = 0;
  int64_t provider_latency_ms = 0;
};

// Error classes. Only RateLimited and TransportError are retryable.
class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool retryable() const { return false; }
};
class TransportError : public ProviderError {
 public:
  using ProviderError::ProviderError;
  bool retryable() const override { return true; }
};
class RateLimited : public ProviderError {
 public:
  using ProviderError::ProviderError;
  bool retryable() const override { return true; }
};
class MalformedResponse : public ProviderError {
 public:
  using ProviderError::ProviderError;
};
/// The endpoint refused the request (4xx other than 429).
class RequestRejected : public ProviderError {
 public:
  using ProviderError::ProviderError;
};
class ScriptExhausted : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

using ProviderPtr = std::shared_ptr<ChatProvider>;

// ---------------------------------------------------------------------------
// Cost accounting

struct ModelPrice {
  double prompt_usd_per_million = 0.0;
  double completion_usd_per_million = 0.0;
};

using PriceTable = std::map<std::string, ModelPrice>;

struct ModelUsage {
  int64_t calls = 0;
  int64_t prompt_tokens = 0;
  int64_t completion_tokens = 0;
  double cost_usd = 0.0;
};

class UsageLedger {
 public:
  explicit UsageLedger(PriceTable prices = {});

  /// Returns the cost charged for this call.
  double record(const std::string& model, int64_t prompt_tokens, int64_t completion_tokens);

  std::map<std::string, ModelUsage> snapshot() const;
  /// Replaces the accumulated usage, e.g. when resuming a run.
  void restore(std::map<std::string, ModelUsage> usage);
  ModelUsage totals() const;
  double total_cost() const;

 private:
  PriceTable prices_;
  mutable std::mutex mu_;
  std::map<std::string, ModelUsage> usage_;
};

/// Forwards to `inner` and charges every successful call to `ledger`.
class MeteredProvider : public ChatProvider {
 public:
  MeteredProvider(ProviderPtr inner, std::shared_ptr<UsageLedger> ledger);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  ProviderPtr inner_;
  std::shared_ptr<UsageLedger> ledger_;
};

// ---------------------------------------------------------------------------
// Retry

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{500};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Retries RateLimited and TransportError, sleeping backoff_base * 2^(k-1)
/// before attempt k+1.
class RetryingProvider : public ChatProvider {
 public:
  RetryingProvider(ProviderPtr inner, RetryPolicy policy, Sleeper sleeper = {});
  ChatResponse complete(const ChatRequest& request) override;

  int64_t retries() const { return retries_.load(); }

 private:
  ProviderPtr inner_;
  RetryPolicy policy_;
  Sleeper sleeper_;
  std::atomic<int64_t> retries_{0};
};

std::shared_ptr<RetryingProvider> with_retry(ProviderPtr inner, RetryPolicy policy,
                                             Sleeper sleeper = {});

// ---------------------------------------------------------------------------
// Recording

struct CallRecord {
  ChatRequest request;
  std::optional<ChatResponse> response;
  std::string error_class;  // empty on success
  std::string error_message;
};

void to_json(nlohmann::json& j, const ModelUsage& u);
void from_json(const nlohmann::json& j, ModelUsage& u);

nlohmann::json call_record_to_json(const CallRecord& record);

/// Captures every call (including failures) in invocation order.
class RecordingProvider : public ChatProvider {
 public:
  explicit RecordingProvider(ProviderPtr inner);
  ChatResponse complete(const ChatRequest& request) override;

  std::vector<CallRecord> take();

 private:
  ProviderPtr inner_;
  std::mutex mu_;
  std::vector<CallRecord> records_;
};

/// Class name used in logs and scripts: "TransportError", "RateLimited", ...
std::string error_class_name(const ProviderError& error);

/// Throws the provider error named by `error_class`.
[[noreturn]] void throw_provider_error(const std::string& error_class, const std::string& message);

}  // namespace debflow
