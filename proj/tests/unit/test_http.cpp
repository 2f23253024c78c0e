#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "debflow/http_provider.hpp"
#include "providers.hpp"

using namespace debflow;
using namespace debflow::testing;

namespace {

const char* kOkBody = R"({"choices":[{"message":{"role":"assistant","content":"42"}}],
                          "usage":{"prompt_tokens":7,"completion_tokens":1}})";

/// Local OpenAI-compatible endpoint whose replies follow `statuses`, then 200.
class FakeEndpoint {
 public:
  explicit FakeEndpoint(std::vector<int> statuses, std::string ok_body = kOkBody)
      : statuses_(std::move(statuses)), ok_body_(std::move(ok_body)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto n = hits_.fetch_add(1);
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      const int status = n < static_cast<int>(statuses_.size()) ? statuses_[n] : 200;
      res.status = status;
      res.set_content(status == 200 ? ok_body_ : std::string(R"({"error":"nope"})"), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int hits() const { return hits_.load(); }
  std::string last_body() const { return last_body_; }
  std::string last_auth() const { return last_auth_; }

 private:
  std::vector<int> statuses_;
  std::string ok_body_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::string last_body_;
  std::string last_auth_;
};

ProviderPtr http(const FakeEndpoint& ep) {
  return std::make_shared<HttpProvider>(HttpProviderConfig{ep.base_url(), "sk-test", std::chrono::seconds(5)});
}

}  // namespace

TEST_CASE("429 twice then 200 yields one response after two retries") {
  FakeEndpoint ep({429, 429});
  auto p = with_retry(http(ep), {3, std::chrono::milliseconds(500)}, [](auto) {});
  const auto r = p->complete(user_request("what is 6*7?", "t", "gpt-4o-mini"));
  CHECK(r.content == "42");
  CHECK(r.prompt_tokens == 7);
  CHECK(r.completion_tokens == 1);
  CHECK(p->retries() == 2);
  CHECK(ep.hits() == 3);
}

TEST_CASE("request body and headers follow the chat completions format") {
  FakeEndpoint ep({});
  auto req = user_request("hello", "node:io", "gpt-4o-mini");
  req.temperature = 0.25;
  req.max_tokens = 64;
  http(ep)->complete(req);
  const auto body = nlohmann::json::parse(ep.last_body());
  CHECK(body["model"] == "gpt-4o-mini");
  CHECK(body["temperature"] == 0.25);
  CHECK(body["max_tokens"] == 64);
  CHECK(body["messages"] == nlohmann::json::array({{{"role", "user"}, {"content", "hello"}}}));
  CHECK_FALSE(body.contains("tag"));
  CHECK(ep.last_auth() == "Bearer sk-test");
}

TEST_CASE("status codes map to error classes") {
  {
    FakeEndpoint ep({400});
    CHECK_THROWS_AS(http(ep)->complete(user_request("x")), RequestRejected);
  }
  {
    FakeEndpoint ep({503, 503, 503});
    auto p = with_retry(http(ep), {3, std::chrono::milliseconds(0)}, [](auto) {});
    CHECK_THROWS_AS(p->complete(user_request("x")), TransportError);
    CHECK(ep.hits() == 3);
  }
  {
    FakeEndpoint ep({}, "<html>not json</html>");
    auto p = with_retry(http(ep), {3, std::chrono::milliseconds(0)}, [](auto) {});
    CHECK_THROWS_AS(p->complete(user_request("x")), MalformedResponse);
    CHECK(ep.hits() == 1);
  }
}

TEST_CASE("unreachable endpoint is a transport error") {
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpProvider p({"http://127.0.0.1:" + std::to_string(port), "", std::chrono::seconds(2)});
  CHECK_THROWS_AS(p.complete(user_request("x")), TransportError);
}

TEST_CASE("response parsing") {
  const auto r = parse_chat_response(kOkBody);
  CHECK(r.content == "42");
  CHECK(parse_chat_response(R"({"choices":[{"message":{"content":null}}]})").content.empty());
  CHECK_THROWS_AS(parse_chat_response(R"({"choices":[]})"), MalformedResponse);
  CHECK_THROWS_AS(parse_chat_response("nope"), MalformedResponse);
  CHECK_THROWS_AS(parse_chat_response(R"({"choices":[{"message":{"content":"x"}}],"usage":{"prompt_tokens":-1}})"),
                  MalformedResponse);
}

TEST_CASE("configuration") {
  CHECK_THROWS_AS(HttpProvider(HttpProviderConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(HttpProvider(HttpProviderConfig{"localhost:8080", "", {}}), std::invalid_argument);
  setenv(kApiKeyEnv, "k1", 1);
  setenv(kBaseUrlEnv, "http://env.example/v1", 1);
  auto c = http_config_from_env();
  CHECK(c.api_key == "k1");
  CHECK(c.base_url == "http://env.example/v1");
  CHECK(http_config_from_env("http://flag.example").base_url == "http://flag.example");
  unsetenv(kApiKeyEnv);
  unsetenv(kBaseUrlEnv);
}
