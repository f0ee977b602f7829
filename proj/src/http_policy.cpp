#include "prmbas/http_policy.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "prmbas/errors.hpp"

namespace prmbas {

using nlohmann::json;

int word_count(std::string_view text) {
  std::istringstream in{std::string(text)};
  int n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

std::string build_request_body(const PolicyDescriptor& descriptor, const EngineConfig& config,
                               const TrajectoryState& state, int count, std::uint64_t seed) {
  const Problem& problem = state.problem();
  const std::string partial = state.response_text();
  const bool prefix = descriptor.assistant_prefix && !partial.empty();

  std::string question = problem.prompt;
  if (!partial.empty() && !prefix) question += "\n\n" + partial;

  json user_content;
  if (problem.media) {
    user_content = json::array({json{{"type", "image_url"}, {"image_url", {{"url", *problem.media}}}},
                                json{{"type", "text"}, {"text", question}}});
  } else {
    user_content = question;
  }

  json messages = json::array({json{{"role", "system"}, {"content", config.prompt_template}},
                               json{{"role", "user"}, {"content", user_content}}});
  if (prefix) messages.push_back(json{{"role", "assistant"}, {"content", partial}});

  json body{{"model", descriptor.model_name},
            {"messages", std::move(messages)},
            {"max_tokens", config.segment_length},
            {"n", count},
            {"temperature", descriptor.temperature}};
  if (descriptor.send_seed) body["seed"] = seed % (std::uint64_t{1} << 31);
  if (prefix) {
    body["continue_final_message"] = true;
    body["add_generation_prompt"] = false;
  }
  return body.dump();
}

std::vector<ActionSegment> parse_completion_response(const std::string& body,
                                                     const EngineConfig& config, int count) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& choices = doc.at("choices");
    if (!choices.is_array() || static_cast<int>(choices.size()) != count)
      throw ProtocolError("expected " + std::to_string(count) + " choices, got " +
                          std::to_string(choices.is_array() ? choices.size() : 0));
    std::vector<std::pair<int, ActionSegment>> indexed;
    for (std::size_t pos = 0; pos < choices.size(); ++pos) {
      const auto& c = choices[pos];
      const int index = c.value("index", static_cast<int>(pos));
      const auto& content = c.at("message").at("content");
      std::string text = content.is_null() ? std::string{} : content.get<std::string>();
      const std::string finish = c.value("finish_reason", std::string("stop"));

      int tokens = 0;
      if (c.contains("usage") && c["usage"].contains("completion_tokens"))
        tokens = c["usage"]["completion_tokens"].get<int>();
      else if (choices.size() == 1 && doc.contains("usage") &&
               doc["usage"].contains("completion_tokens"))
        tokens = doc["usage"]["completion_tokens"].get<int>();
      else
        tokens = word_count(text);

      ActionSegment seg;
      seg.text = std::move(text);
      if (finish == "length") {
        seg.token_count = config.segment_length;
        seg.terminal = false;
      } else {
        seg.token_count = std::clamp(tokens, 1, config.segment_length);
        seg.terminal = true;
      }
      indexed.emplace_back(index, std::move(seg));
    }
    std::sort(indexed.begin(), indexed.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<ActionSegment> out;
    for (int i = 0; i < count; ++i) {
      if (indexed[i].first != i) throw ProtocolError("choice indices are not 0..n-1");
      out.push_back(std::move(indexed[i].second));
    }
    return out;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed chat-completions response: ") + e.what());
  }
}

HttpPolicy::HttpPolicy(PolicyDescriptor descriptor, EngineConfig config)
    : Policy(std::move(config)), descriptor_(std::move(descriptor)) {
  descriptor_.validate();
  const auto& url = descriptor_.endpoint;
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw UsageError("endpoint must be an absolute URL: " + url);
  const auto slash = url.find('/', scheme + 3);
  host_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/v1/chat/completions" : url.substr(slash);
}

std::vector<ActionSegment> HttpPolicy::sample_continuations(const TrajectoryState& state, int count,
                                                            std::uint64_t seed) const {
  check_request(state, count);
  const auto body = build_request_body(descriptor_, config(), state, count, seed);

  std::string last_error;
  for (int attempt = 1; attempt <= descriptor_.max_attempts; ++attempt) {
    if (attempt > 1) {
      const auto delay = std::chrono::milliseconds(descriptor_.backoff_base_ms)
                         * (1 << (attempt - 2));
      std::this_thread::sleep_for(delay);
    }
    httplib::Client client(host_);
    const auto timeout = std::chrono::milliseconds(descriptor_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (descriptor_.bearer_token)
      headers.emplace("Authorization", "Bearer " + *descriptor_.bearer_token);

    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendError("HTTP " + std::to_string(res->status) + " from " + descriptor_.endpoint,
                         attempt);
    return parse_completion_response(res->body, config(), count);
  }
  throw BackendError(last_error + " after " + std::to_string(descriptor_.max_attempts) +
                         " attempts to " + descriptor_.endpoint,
                     descriptor_.max_attempts);
}

}  // namespace prmbas
