#pragma once

// Policy backed by an OpenAI-compatible chat-completions endpoint.
//
// Request body (keys in this order, compact JSON, no whitespace):
//   {"add_generation_prompt":false,"continue_final_message":true,   <- only with an assistant prefix
//    "max_tokens":L,"messages":[system, user, (assistant prefix)],"model":...,
//    "n":count,"seed":seed mod 2^31,"temperature":...}
// The system message is EngineConfig::prompt_template. The user message is the
// question, or a [image_url, text] content array when the problem carries media.
//
// Response: choices[i].message.content and choices[i].finish_reason, ordered by
// choices[i].index. Token counts come from choices[i].usage.completion_tokens when
// present, else from usage.completion_tokens when there is a single choice, else
// from a whitespace word count. finish_reason "length" means the segment is full
// (token_count = L, non-terminal); anything else is end-of-sequence.

#include <string>
#include <vector>

#include "prmbas/backends.hpp"

namespace prmbas {

std::string build_request_body(const PolicyDescriptor& descriptor, const EngineConfig& config,
                               const TrajectoryState& state, int count, std::uint64_t seed);

/// Throws ProtocolError when the body is not a chat-completions response with
/// exactly `count` choices.
std::vector<ActionSegment> parse_completion_response(const std::string& body,
                                                     const EngineConfig& config, int count);

int word_count(std::string_view text);

class HttpPolicy final : public Policy {
 public:
  HttpPolicy(PolicyDescriptor descriptor, EngineConfig config);

  std::vector<ActionSegment> sample_continuations(const TrajectoryState& state, int count,
                                                  std::uint64_t seed) const override;
  int concurrency_limit() const override { return descriptor_.concurrency_limit; }

 private:
  PolicyDescriptor descriptor_;
  std::string host_;
  std::string path_;
};

}  // namespace prmbas
