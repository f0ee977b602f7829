#pragma once

// Generation and reward-scoring backends. Search and data construction only
// see the Policy and RewardModel interfaces.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prmbas/core.hpp"
#include "prmbas/scorer.hpp"
#include "prmbas/synthenv.hpp"

namespace prmbas {

enum class PolicyKind { synthetic, replay, http };
enum class RewardKind { oracle, learned, constant };

std::string_view to_string(PolicyKind kind);
std::string_view to_string(RewardKind kind);
PolicyKind policy_kind_from_string(std::string_view text);
RewardKind reward_kind_from_string(std::string_view text);

struct PolicyDescriptor {
  PolicyKind kind = PolicyKind::synthetic;
  double temperature = 0.7;
  std::string endpoint;    // http only, e.g. "http://127.0.0.1:8000/v1/chat/completions"
  std::string model_name;  // http only
  int concurrency_limit = 1;
  /// Send the partial answer as a trailing assistant message to be continued;
  /// otherwise it is appended to the user message.
  bool assistant_prefix = true;
  bool send_seed = true;
  int max_attempts = 3;
  int backoff_base_ms = 250;
  int timeout_ms = 60'000;
  std::optional<std::string> bearer_token;

  void validate() const;
};

struct RewardDescriptor {
  RewardKind kind = RewardKind::oracle;
  std::shared_ptr<const ScorerModel> scorer;  // learned only
  double constant_value = 0.5;                // constant only

  void validate() const;
};

class Policy {
 public:
  explicit Policy(EngineConfig config) : config_(std::move(config)) { config_.validate(); }
  virtual ~Policy() = default;

  /// Exactly `count` candidates in candidate-index order. Candidate i must depend
  /// only on (state, seed, i) for deterministic backends.
  virtual std::vector<ActionSegment> sample_continuations(const TrajectoryState& state, int count,
                                                          std::uint64_t seed) const = 0;
  virtual int concurrency_limit() const { return 1; }

  const EngineConfig& config() const { return config_; }
  TrajectoryState root(ProblemPtr problem) const { return initial_state(std::move(problem), config_); }

 protected:
  void check_request(const TrajectoryState& state, int count) const;

 private:
  EngineConfig config_;
};

using PolicyPtr = std::shared_ptr<const Policy>;

class RewardModel {
 public:
  virtual ~RewardModel() = default;
  /// Reward in [0,1] for taking `action` in `state`.
  virtual double score(const TrajectoryState& state, const ActionSegment& action) const = 0;
  /// Elementwise score(), order preserving.
  virtual std::vector<double> score_batch(const TrajectoryState& state,
                                          std::span<const ActionSegment> actions) const;
};

using RewardPtr = std::shared_ptr<const RewardModel>;

class SyntheticPolicy final : public Policy {
 public:
  SyntheticPolicy(std::shared_ptr<const synth::TaskSuite> suite, EngineConfig config);
  std::vector<ActionSegment> sample_continuations(const TrajectoryState& state, int count,
                                                  std::uint64_t seed) const override;
  const synth::TaskSuite& suite() const { return *suite_; }

 private:
  std::shared_ptr<const synth::TaskSuite> suite_;
};

/// Replays recorded generations. Entries are keyed by (problem id, partial
/// answer text); candidate i of a request is entry i modulo the entry count.
class ReplayPolicy final : public Policy {
 public:
  struct Script {
    // problem id -> partial answer -> recorded candidates
    std::unordered_map<std::string, std::unordered_map<std::string, std::vector<ActionSegment>>>
        entries;
  };

  ReplayPolicy(Script script, EngineConfig config);
  std::vector<ActionSegment> sample_continuations(const TrajectoryState& state, int count,
                                                  std::uint64_t seed) const override;

  static Script script_from_json(const std::string& text);

 private:
  Script script_;
};

class OracleReward final : public RewardModel {
 public:
  explicit OracleReward(std::shared_ptr<const synth::TaskSuite> suite) : suite_(std::move(suite)) {}
  double score(const TrajectoryState& state, const ActionSegment& action) const override;

 private:
  std::shared_ptr<const synth::TaskSuite> suite_;
};

class LearnedReward final : public RewardModel {
 public:
  explicit LearnedReward(std::shared_ptr<const ScorerModel> model);
  double score(const TrajectoryState& state, const ActionSegment& action) const override;

 private:
  std::shared_ptr<const ScorerModel> model_;
};

class ConstantReward final : public RewardModel {
 public:
  explicit ConstantReward(double value);
  double score(const TrajectoryState&, const ActionSegment&) const override { return value_; }

 private:
  double value_;
};

/// Resources a descriptor may refer to.
struct BackendContext {
  std::shared_ptr<const synth::TaskSuite> suite;
  std::optional<ReplayPolicy::Script> replay_script;
};

PolicyPtr make_policy(const PolicyDescriptor& descriptor, const EngineConfig& config,
                      const BackendContext& context);
RewardPtr make_reward(const RewardDescriptor& descriptor, const BackendContext& context);

/// One continuation per step, seeds chained through hash64(seed, step, 0), until
/// the state is terminal or reaches max_steps (then `truncated()` is true).
TrajectoryState rollout_to_completion(const Policy& policy, const TrajectoryState& state,
                                      std::uint64_t seed);

/// Runs fn(i) for i in [0, n) on at most `limit` threads. Exceptions are
/// rethrown in index order after all tasks finish.
void parallel_for(std::size_t n, int limit, const std::function<void(std::size_t)>& fn);

}  // namespace prmbas
