#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prmbas {

inline constexpr std::string_view kDefaultPromptTemplate =
    "Please answer the question and provide the correct answer, e.g., 1, 2, 3, 4, at the end. "
    "Give step by step reasoning before you answer, and when you're ready to answer, please use "
    "the format \"Final answer: ...\"";

enum class ProblemSource { synthetic, ingested };

std::string_view to_string(ProblemSource source);
ProblemSource problem_source_from_string(std::string_view text);

struct Problem {
  std::string id;
  std::string prompt;
  std::optional<std::string> media;  // opaque, forwarded to HTTP backends untouched
  std::string gold_answer;
  ProblemSource source = ProblemSource::synthetic;

  bool operator==(const Problem&) const = default;
};

/// Throws UsageError unless id and gold_answer are nonempty.
void validate(const Problem& problem);

using ProblemPtr = std::shared_ptr<const Problem>;

struct ActionSegment {
  std::string text;
  int token_count = 0;
  bool terminal = false;

  bool operator==(const ActionSegment&) const = default;
};

struct EngineConfig {
  int segment_length = 30;
  int max_steps = 20;
  std::string prompt_template{kDefaultPromptTemplate};
  std::string answer_marker = "Final answer:";

  void validate() const;
};

/// Throws UsageError if the segment breaks its invariants under segment length `L`.
void validate(const ActionSegment& segment, int segment_length);

/// s_t: a problem plus the ordered segments generated so far. Immutable once built;
/// append_action returns a new value.
class TrajectoryState {
 public:
  TrajectoryState() = default;
  TrajectoryState(ProblemPtr problem, int segment_length, int max_steps);

  const Problem& problem() const { return *problem_; }
  const ProblemPtr& problem_ptr() const { return problem_; }
  const std::vector<ActionSegment>& segments() const { return segments_; }
  int step_index() const { return static_cast<int>(segments_.size()); }
  std::int64_t tokens_generated() const { return tokens_; }
  int segment_length() const { return segment_length_; }
  int max_steps() const { return max_steps_; }

  bool terminal() const { return !segments_.empty() && segments_.back().terminal; }
  /// Hit the step cap without the backend reporting end-of-sequence.
  bool truncated() const { return !terminal() && step_index() >= max_steps_; }
  bool finished() const { return terminal() || truncated(); }

  /// Concatenated segment texts (the partial answer y_<t).
  std::string response_text() const;

  bool operator==(const TrajectoryState& other) const;

 private:
  friend TrajectoryState append_action(const TrajectoryState&, ActionSegment);

  ProblemPtr problem_;
  std::vector<ActionSegment> segments_;
  std::int64_t tokens_ = 0;
  int segment_length_ = 30;
  int max_steps_ = 20;
};

TrajectoryState initial_state(ProblemPtr problem, const EngineConfig& config);

/// MDP transition. Throws UsageError when the state is terminal, at the step cap,
/// or the action is malformed.
TrajectoryState append_action(const TrajectoryState& state, ActionSegment action);

/// Text after the last `marker`, up to end of text or the first line break, trimmed.
std::optional<std::string> extract_final_answer(std::string_view text, std::string_view marker);

std::string normalize_answer(std::string_view answer);
bool answers_match(std::string_view predicted, std::string_view gold);

/// Terminal, and the extracted answer matches the problem's gold answer.
bool is_correct(const TrajectoryState& state, std::string_view marker);

}  // namespace prmbas
