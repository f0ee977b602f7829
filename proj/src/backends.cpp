#include "prmbas/backends.hpp"

#include <atomic>
#include <exception>
#include <thread>

#include <nlohmann/json.hpp>

#include "prmbas/errors.hpp"
#include "prmbas/http_policy.hpp"
#include "prmbas/seed.hpp"

namespace prmbas {

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::synthetic: return "synthetic";
    case PolicyKind::replay: return "replay";
    case PolicyKind::http: return "http";
  }
  return "?";
}

std::string_view to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::oracle: return "oracle";
    case RewardKind::learned: return "learned";
    case RewardKind::constant: return "constant";
  }
  return "?";
}

PolicyKind policy_kind_from_string(std::string_view text) {
  if (text == "synthetic") return PolicyKind::synthetic;
  if (text == "replay") return PolicyKind::replay;
  if (text == "http") return PolicyKind::http;
  throw UsageError("unknown policy kind: " + std::string(text));
}

RewardKind reward_kind_from_string(std::string_view text) {
  if (text == "oracle") return RewardKind::oracle;
  if (text == "learned") return RewardKind::learned;
  if (text == "constant") return RewardKind::constant;
  throw UsageError("unknown reward kind: " + std::string(text));
}

void PolicyDescriptor::validate() const {
  if (concurrency_limit < 1) throw UsageError("concurrency_limit must be >= 1");
  if ((kind == PolicyKind::http) != !endpoint.empty())
    throw UsageError("endpoint must be set exactly when the policy kind is http");
  if (max_attempts < 1) throw UsageError("max_attempts must be >= 1");
  if (backoff_base_ms < 0) throw UsageError("backoff_base_ms must be >= 0");
}

void RewardDescriptor::validate() const {
  if (!(constant_value >= 0.0 && constant_value <= 1.0))
    throw UsageError("constant reward must lie in [0,1]");
  if (kind == RewardKind::learned && !scorer) throw UsageError("learned reward needs a scorer");
}

void Policy::check_request(const TrajectoryState& state, int count) const {
  if (count < 1) throw UsageError("sample count must be >= 1");
  if (state.finished()) throw UsageError("cannot sample continuations of a finished state");
}

std::vector<double> RewardModel::score_batch(const TrajectoryState& state,
                                             std::span<const ActionSegment> actions) const {
  std::vector<double> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(score(state, a));
  return out;
}

SyntheticPolicy::SyntheticPolicy(std::shared_ptr<const synth::TaskSuite> suite,
                                 EngineConfig config)
    : Policy(std::move(config)), suite_(std::move(suite)) {
  if (!suite_) throw UsageError("synthetic policy needs a task suite");
}

std::vector<ActionSegment> SyntheticPolicy::sample_continuations(const TrajectoryState& state,
                                                                 int count,
                                                                 std::uint64_t seed) const {
  check_request(state, count);
  const auto task = suite_->find(state.problem().id);
  if (!task) throw UnsupportedError("problem " + state.problem().id + " is not a synthetic task");
  const auto position = synth::position_from_state(task, state);
  const auto dist = synth::branch_distribution(position);
  std::vector<ActionSegment> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(hash64(seed, position.step(), i));
    const double u = uniform01(rng);
    int branch = 0;
    double acc = dist[0];
    while (u >= acc && branch + 1 < static_cast<int>(dist.size())) acc += dist[++branch];
    out.push_back(synth::render_segment(position, branch, config().segment_length,
                                        config().answer_marker));
  }
  return out;
}

ReplayPolicy::ReplayPolicy(Script script, EngineConfig config)
    : Policy(std::move(config)), script_(std::move(script)) {
  for (const auto& [problem, prefixes] : script_.entries)
    for (const auto& [prefix, segments] : prefixes) {
      if (segments.empty()) throw ValidationError("replay entry without candidates for " + problem);
      for (const auto& s : segments) validate(s, this->config().segment_length);
    }
}

std::vector<ActionSegment> ReplayPolicy::sample_continuations(const TrajectoryState& state,
                                                              int count, std::uint64_t) const {
  check_request(state, count);
  const std::vector<ActionSegment>* recorded = nullptr;
  if (const auto p = script_.entries.find(state.problem().id); p != script_.entries.end())
    if (const auto it = p->second.find(state.response_text()); it != p->second.end())
      recorded = &it->second;
  if (!recorded || recorded->empty())
    throw BackendError("replay script has no entry for problem " + state.problem().id +
                           " at step " + std::to_string(state.step_index()),
                       1);
  std::vector<ActionSegment> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back((*recorded)[i % recorded->size()]);
  return out;
}

ReplayPolicy::Script ReplayPolicy::script_from_json(const std::string& text) {
  using nlohmann::json;
  Script script;
  try {
    const auto doc = json::parse(text);
    for (const auto& e : doc.at("entries")) {
      auto& list = script.entries[e.at("problem_id").get<std::string>()]
                                 [e.value("prefix", std::string{})];
      for (const auto& c : e.at("candidates"))
        list.push_back(ActionSegment{c.at("text").get<std::string>(),
                                     c.at("token_count").get<int>(),
                                     c.value("terminal", false)});
    }
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 1);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("replay script: ") + e.what());
  }
  return script;
}

double OracleReward::score(const TrajectoryState& state, const ActionSegment& action) const {
  const auto task = suite_ ? suite_->find(state.problem().id) : nullptr;
  if (!task)
    throw UnsupportedError("oracle reward is only defined for synthetic problems (got " +
                           state.problem().id + ")");
  const auto next = append_action(state, action);
  return synth::true_success_prob(synth::position_from_state(task, next));
}

LearnedReward::LearnedReward(std::shared_ptr<const ScorerModel> model) : model_(std::move(model)) {
  if (!model_) throw UsageError("learned reward needs a model");
}

double LearnedReward::score(const TrajectoryState& state, const ActionSegment& action) const {
  const auto features =
      featurize(model_->spec(), compose_state_text(state.problem().prompt, state.response_text()),
                action.text, action.token_count, state.step_index());
  return model_->predict(features);
}

ConstantReward::ConstantReward(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) throw UsageError("constant reward must lie in [0,1]");
}

PolicyPtr make_policy(const PolicyDescriptor& descriptor, const EngineConfig& config,
                      const BackendContext& context) {
  descriptor.validate();
  switch (descriptor.kind) {
    case PolicyKind::synthetic:
      return std::make_shared<SyntheticPolicy>(context.suite, config);
    case PolicyKind::replay:
      if (!context.replay_script) throw UsageError("replay policy needs a script");
      return std::make_shared<ReplayPolicy>(*context.replay_script, config);
    case PolicyKind::http:
      return std::make_shared<HttpPolicy>(descriptor, config);
  }
  throw UsageError("unknown policy kind");
}

RewardPtr make_reward(const RewardDescriptor& descriptor, const BackendContext& context) {
  descriptor.validate();
  switch (descriptor.kind) {
    case RewardKind::oracle:
      if (!context.suite) throw UsageError("oracle reward needs a task suite");
      return std::make_shared<OracleReward>(context.suite);
    case RewardKind::learned:
      return std::make_shared<LearnedReward>(descriptor.scorer);
    case RewardKind::constant:
      return std::make_shared<ConstantReward>(descriptor.constant_value);
  }
  throw UsageError("unknown reward kind");
}

TrajectoryState rollout_to_completion(const Policy& policy, const TrajectoryState& state,
                                      std::uint64_t seed) {
  if (state.finished()) throw UsageError("rollout from a finished state");
  TrajectoryState current = state;
  std::uint64_t stream = seed;
  while (!current.finished()) {
    const int t = current.step_index();
    auto next = policy.sample_continuations(current, 1, stream);
    current = append_action(current, std::move(next.front()));
    stream = hash64(stream, t, 0);
  }
  return current;
}

void parallel_for(std::size_t n, int limit, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, limit)));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace prmbas
