#include "debflow/llm.hpp"

#include <sstream>
#include <thread>

namespace debflow {

std::string to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

void check_request(const ChatRequest& request) {
  if (request.messages.empty()) throw std::invalid_argument("chat request has no messages");
  if (request.messages.front().role == Role::Assistant) {
    throw std::invalid_argument("first chat message must be system or user");
  }
  if (request.temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
  if (request.max_tokens && *request.max_tokens <= 0) {
    throw std::invalid_argument("max_tokens must be positive");
  }
}

std::string render_request(const ChatRequest& request) {
  std::ostringstream os;
  os << "model: " << request.model << '\n';
  for (const auto& m : request.messages) os << to_string(m.role) << ": " << m.content << '\n';
  return os.str();
}

UsageLedger::UsageLedger(PriceTable prices) : prices_(std::move(prices)) {}

double UsageLedger::record(const std::string& model, int64_t prompt_tokens,
                           int64_t completion_tokens) {
  double cost = 0.0;
  if (auto it = prices_.find(model); it != prices_.end()) {
    cost = static_cast<double>(prompt_tokens) * it->second.prompt_usd_per_million / 1e6 +
           static_cast<double>(completion_tokens) * it->second.completion_usd_per_million / 1e6;
  }
  std::lock_guard lock(mu_);
  auto& u = usage_[model];
  ++u.calls;
  u.prompt_tokens += prompt_tokens;
  u.completion_tokens += completion_tokens;
  u.cost_usd += cost;
  return cost;
}

std::map<std::string, ModelUsage> UsageLedger::snapshot() const {
  std::lock_guard lock(mu_);
  return usage_;
}

void UsageLedger::restore(std::map<std::string, ModelUsage> usage) {
  std::lock_guard lock(mu_);
  usage_ = std::move(usage);
}

void to_json(nlohmann::json& j, const ModelUsage& u) {
  j = nlohmann::json{{"calls", u.calls},
                     {"prompt_tokens", u.prompt_tokens},
                     {"completion_tokens", u.completion_tokens},
                     {"cost_usd", u.cost_usd}};
}

void from_json(const nlohmann::json& j, ModelUsage& u) {
  u.calls = j.value("calls", int64_t{0});
  u.prompt_tokens = j.value("prompt_tokens", int64_t{0});
  u.completion_tokens = j.value("completion_tokens", int64_t{0});
  u.cost_usd = j.value("cost_usd", 0.0);
}

ModelUsage UsageLedger::totals() const {
  std::lock_guard lock(mu_);
  ModelUsage t;
  for (const auto& [_, u] : usage_) {
    t.calls += u.calls;
    t.prompt_tokens += u.prompt_tokens;
    t.completion_tokens += u.completion_tokens;
    t.cost_usd += u.cost_usd;
  }
  return t;
}

double UsageLedger::total_cost() const { return totals().cost_usd; }

MeteredProvider::MeteredProvider(ProviderPtr inner, std::shared_ptr<UsageLedger> ledger)
    : inner_(std::move(inner)), ledger_(std::move(ledger)) {}

ChatResponse MeteredProvider::complete(const ChatRequest& request) {
  auto response = inner_->complete(request);
  ledger_->record(request.model, response.prompt_tokens, response.completion_tokens);
  return response;
}

RetryingProvider::RetryingProvider(ProviderPtr inner, RetryPolicy policy, Sleeper sleeper)
    : inner_(std::move(inner)), policy_(policy), sleeper_(std::move(sleeper)) {
  if (policy_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ChatResponse RetryingProvider::complete(const ChatRequest& request) {
  auto delay = policy_.backoff_base;
  for (int attempt = 1;; ++attempt) {
    try {
      return inner_->complete(request);
    } catch (const ProviderError& e) {
      if (!e.retryable() || attempt >= policy_.max_attempts) throw;
    }
    ++retries_;
    sleeper_(delay);
    delay *= 2;
  }
}

std::shared_ptr<RetryingProvider> with_retry(ProviderPtr inner, RetryPolicy policy, Sleeper sleeper) {
  return std::make_shared<RetryingProvider>(std::move(inner), policy, std::move(sleeper));
}

std::string error_class_name(const ProviderError& error) {
  if (dynamic_cast<const RateLimited*>(&error)) return "RateLimited";
  if (dynamic_cast<const TransportError*>(&error)) return "TransportError";
  if (dynamic_cast<const MalformedResponse*>(&error)) return "MalformedResponse";
  if (dynamic_cast<const RequestRejected*>(&error)) return "RequestRejected";
  if (dynamic_cast<const ScriptExhausted*>(&error)) return "ScriptExhausted";
  return "ProviderError";
}

void throw_provider_error(const std::string& error_class, const std::string& message) {
  if (error_class == "RateLimited") throw RateLimited(message);
  if (error_class == "TransportError") throw TransportError(message);
  if (error_class == "MalformedResponse") throw MalformedResponse(message);
  if (error_class == "RequestRejected") throw RequestRejected(message);
  if (error_class == "ScriptExhausted") throw ScriptExhausted(message);
  throw ProviderError(message);
}

nlohmann::json call_record_to_json(const CallRecord& record) {
  auto messages = nlohmann::json::array();
  for (const auto& m : record.request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  nlohmann::json j{{"tag", record.request.tag},
                   {"model", record.request.model},
                   {"temperature", record.request.temperature},
                   {"messages", messages}};
  if (record.response) {
    j["response"] = record.response->content;
    j["prompt_tokens"] = record.response->prompt_tokens;
    j["completion_tokens"] = record.response->completion_tokens;
  } else {
    j["error"] = record.error_class;
    j["error_message"] = record.error_message;
  }
  return j;
}

RecordingProvider::RecordingProvider(ProviderPtr inner) : inner_(std::move(inner)) {}

ChatResponse RecordingProvider::complete(const ChatRequest& request) {
  CallRecord rec{request, std::nullopt, {}, {}};
  try {
    auto response = inner_->complete(request);
    rec.response = response;
    std::lock_guard lock(mu_);
    records_.push_back(std::move(rec));
    return response;
  } catch (const ProviderError& e) {
    rec.error_class = error_class_name(e);
    rec.error_message = e.what();
    std::lock_guard lock(mu_);
    records_.push_back(std::move(rec));
    throw;
  }
}

std::vector<CallRecord> RecordingProvider::take() {
  std::lock_guard lock(mu_);
  return std::exchange(records_, {});
}

}  // namespace debflow
