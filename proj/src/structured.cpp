#include "debflow/structured.hpp"

namespace debflow {

namespace {

std::optional<nlohmann::json> try_parse(std::string_view text) {
  auto j = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

}  // namespace

std::optional<nlohmann::json> extract_json(std::string_view reply) {
  for (std::string_view fence : {"```json", "```"}) {
    auto open = reply.find(fence);
    if (open == std::string_view::npos) continue;
    auto body_start = reply.find('\n', open + fence.size());
    if (body_start == std::string_view::npos) continue;
    auto close = reply.find("```", body_start);
    if (close == std::string_view::npos) close = reply.size();
    if (auto j = try_parse(reply.substr(body_start + 1, close - body_start - 1))) return j;
  }
  if (auto j = try_parse(reply)) return j;
  auto first = reply.find('{');
  auto last = reply.rfind('}');
  if (first != std::string_view::npos && last != std::string_view::npos && last > first) {
    return try_parse(reply.substr(first, last - first + 1));
  }
  return std::nullopt;
}

}  // namespace debflow
