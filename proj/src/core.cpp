#include "prmbas/core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <utility>

#include "prmbas/errors.hpp"

namespace prmbas {

std::string_view to_string(ProblemSource source) {
  return source == ProblemSource::synthetic ? "synthetic" : "ingested";
}

ProblemSource problem_source_from_string(std::string_view text) {
  if (text == "synthetic") return ProblemSource::synthetic;
  if (text == "ingested") return ProblemSource::ingested;
  throw UsageError("unknown problem source: " + std::string(text));
}

void validate(const Problem& problem) {
  if (problem.id.empty()) throw UsageError("problem id must be nonempty");
  if (problem.gold_answer.empty())
    throw UsageError("problem " + problem.id + " has an empty gold answer");
}

void EngineConfig::validate() const {
  if (segment_length < 1) throw UsageError("segment_length must be >= 1");
  if (max_steps < 1) throw UsageError("max_steps must be >= 1");
  if (answer_marker.empty()) throw UsageError("answer_marker must be nonempty");
}

void validate(const ActionSegment& segment, int segment_length) {
  if (segment.token_count < 1 || segment.token_count > segment_length)
    throw UsageError("segment token_count " + std::to_string(segment.token_count) +
                     " outside [1, " + std::to_string(segment_length) + "]");
  if (segment.token_count < segment_length && !segment.terminal)
    throw UsageError("short segment must be terminal");
}

TrajectoryState::TrajectoryState(ProblemPtr problem, int segment_length, int max_steps)
    : problem_(std::move(problem)), segment_length_(segment_length), max_steps_(max_steps) {
  if (!problem_) throw UsageError("trajectory needs a problem");
  if (segment_length < 1 || max_steps < 1) throw UsageError("invalid trajectory limits");
}

std::string TrajectoryState::response_text() const {
  std::string out;
  for (const auto& s : segments_) out += s.text;
  return out;
}

bool TrajectoryState::operator==(const TrajectoryState& other) const {
  const bool same_problem =
      problem_ == other.problem_ || (problem_ && other.problem_ && *problem_ == *other.problem_);
  return same_problem && segments_ == other.segments_ && tokens_ == other.tokens_ &&
         segment_length_ == other.segment_length_ && max_steps_ == other.max_steps_;
}

TrajectoryState initial_state(ProblemPtr problem, const EngineConfig& config) {
  config.validate();
  return TrajectoryState(std::move(problem), config.segment_length, config.max_steps);
}

TrajectoryState append_action(const TrajectoryState& state, ActionSegment action) {
  if (!state.problem_) throw UsageError("append_action on an empty state");
  if (state.terminal()) throw UsageError("append_action on a terminal state");
  if (state.step_index() >= state.max_steps_)
    throw UsageError("append_action past max_steps=" + std::to_string(state.max_steps_));
  validate(action, state.segment_length_);
  TrajectoryState next = state;
  next.tokens_ += action.token_count;
  next.segments_.push_back(std::move(action));
  return next;
}

namespace {

std::string_view trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_finite(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

std::optional<std::string> extract_final_answer(std::string_view text, std::string_view marker) {
  if (marker.empty()) return std::nullopt;
  const auto pos = text.rfind(marker);
  if (pos == std::string_view::npos) return std::nullopt;
  auto rest = text.substr(pos + marker.size());
  const auto eol = rest.find_first_of("\r\n");
  if (eol != std::string_view::npos) rest = rest.substr(0, eol);
  rest = trim(rest);
  if (rest.empty()) return std::nullopt;
  return std::string(rest);
}

std::string normalize_answer(std::string_view answer) {
  std::string out;
  out.reserve(answer.size());
  bool pending_space = false;
  for (unsigned char c : trim(answer)) {
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  while (!out.empty() && out.back() == '.') out.pop_back();
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

bool answers_match(std::string_view predicted, std::string_view gold) {
  const auto p = normalize_answer(predicted);
  const auto g = normalize_answer(gold);
  if (p.empty() || g.empty()) return false;
  const auto pv = parse_finite(p);
  const auto gv = parse_finite(g);
  if (pv && gv) {
    const double scale = std::max(std::abs(*pv), std::abs(*gv));
    return std::abs(*pv - *gv) <= 1e-6 * scale;
  }
  return p == g;
}

bool is_correct(const TrajectoryState& state, std::string_view marker) {
  if (!state.terminal()) return false;
  const auto answer = extract_final_answer(state.response_text(), marker);
  return answer && answers_match(*answer, state.problem().gold_answer);
}

}  // namespace prmbas
