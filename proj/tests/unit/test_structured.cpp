#include <doctest.h>

#include "debflow/scripted_provider.hpp"
#include "debflow/structured.hpp"
#include "providers.hpp"

using namespace debflow;
using namespace debflow::testing;

namespace {

int parse_answer(const nlohmann::json& j) {
  const int v = j.at("answer").get<int>();
  if (v < 0) throw StructuredOutputError("answer must be non-negative");
  return v;
}

}  // namespace

TEST_CASE("extract_json finds fenced, bare and embedded objects") {
  CHECK(extract_json("```json\n{\"a\": 1}\n```")->at("a") == 1);
  CHECK(extract_json("Sure.\n```\n{\"a\": 2}\n```\nDone.")->at("a") == 2);
  CHECK(extract_json("{\"a\": 3}")->at("a") == 3);
  CHECK(extract_json("The result is {\"a\": {\"b\": 4}} as requested.")->at("a").at("b") == 4);
  CHECK(extract_json("```json\n{\"a\": 5}")->at("a") == 5);
  CHECK_FALSE(extract_json("no json here").has_value());
  CHECK_FALSE(extract_json("```json\n{broken\n```").has_value());
}

TEST_CASE("the first fence wins over later ones") {
  const auto j = extract_json("```json\n{\"n\": 1}\n```\n```json\n{\"n\": 2}\n```");
  CHECK(j->at("n") == 1);
}

TEST_CASE("valid reply parses with one call") {
  ScriptedProvider p({ScriptEntry::keyed("t", "```json\n{\"answer\": 7}\n```")});
  const auto r = ask_structured<int>(p, user_request("q"), parse_answer);
  CHECK(r.value == 7);
  CHECK(r.calls == 1);
}

TEST_CASE("repair loop shows the model its reply and the error") {
  ScriptedProvider p({ScriptEntry::keyed("t", "{\"answer\": -1}"), ScriptEntry::keyed("t", "{\"answer\": 2}")});
  const auto r = ask_structured<int>(p, user_request("q"), parse_answer);
  CHECK(r.value == 2);
  CHECK(r.calls == 2);
  const auto second = p.requests()[1];
  REQUIRE(second.messages.size() == 3);
  CHECK(second.messages[1].role == Role::Assistant);
  CHECK(second.messages[1].content == "{\"answer\": -1}");
  CHECK(second.messages[2].content.find("answer must be non-negative") != std::string::npos);
}

TEST_CASE("contract violations and missing JSON count as parse failures") {
  ScriptedProvider p({ScriptEntry::keyed("t", "{\"answer\": \"seven\"}"), ScriptEntry::keyed("t", "I refuse")});
  const auto r = ask_structured<int>(p, user_request("q"), parse_answer);
  CHECK_FALSE(r.value.has_value());
  CHECK(r.calls == 2);
  CHECK(r.last_error == "reply contains no JSON object");
}

TEST_CASE("zero repairs means a single attempt") {
  ScriptedProvider p({ScriptEntry::keyed("t", "nope"), ScriptEntry::keyed("t", "{\"answer\": 1}")});
  const auto r = ask_structured<int>(p, user_request("q"), parse_answer, 0);
  CHECK_FALSE(r.value.has_value());
  CHECK(p.consumed() == 1);
}

TEST_CASE("provider errors propagate out of the repair loop") {
  ScriptEntry e;
  e.error = "TransportError";
  ScriptedProvider p({e});
  CHECK_THROWS_AS(ask_structured<int>(p, user_request("q"), parse_answer), TransportError);
}
