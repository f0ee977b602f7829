#pragma once

// Rollout-based reward labelling. At each step of a problem M_t candidates are
// sampled, each is scored by the fraction of N_t rollouts that reach the gold
// answer, the candidate set is class-balanced, and the best candidate becomes
// the next state.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "prmbas/backends.hpp"
#include "prmbas/core.hpp"

namespace prmbas {

struct StepBudget {
  int candidates = 8;  // M
  int rollouts = 8;    // N
  bool operator==(const StepBudget&) const = default;
};

struct SamplingSchedule {
  /// Budgets for t = 0 .. early.size()-1.
  std::vector<StepBudget> early{{8, 8}, {8, 8}, {8, 8}};
  StepBudget tail{4, 4};

  /// Same budget at every step.
  static SamplingSchedule uniform(int candidates, int rollouts);

  StepBudget at(int t) const;
  void validate() const;
  bool operator==(const SamplingSchedule&) const = default;
};

struct RewardTriplet {
  std::string problem_id;
  int step_index = 0;
  std::string state_text;  // prompt + "\n" + partial answer
  std::string action_text;
  int action_tokens = 0;
  double reward = 0.0;
  int n_rollouts = 1;
  bool chosen = false;
  std::string source;

  bool operator==(const RewardTriplet&) const = default;
};

struct RewardEstimate {
  double reward = 0.0;
  std::vector<bool> outcomes;
};

/// Fraction of `rollouts` continuations of state+action whose final answer
/// matches the gold answer. Truncated rollouts count as failures.
RewardEstimate estimate_action_reward(const TrajectoryState& state, const ActionSegment& action,
                                      const Policy& policy, int rollouts, std::uint64_t seed);

struct BalanceConfig {
  int max_ratio = 3;
  double threshold = 0.5;  // positive iff reward > threshold
  int single_class_cap = 3;
};

/// Class balancing for the candidates of one state. Survivors keep their input
/// order; the chosen triplet always survives.
std::vector<RewardTriplet> balance_candidates(const std::vector<RewardTriplet>& group,
                                              std::uint64_t seed, const BalanceConfig& config = {});

struct ConstructionResult {
  std::vector<RewardTriplet> triplets;
  TrajectoryState trajectory;
  /// Set when the problem was aborted; triplets of completed steps are kept.
  std::optional<std::string> error;
};

ConstructionResult construct_for_problem(const ProblemPtr& problem, const Policy& policy,
                                         const SamplingSchedule& schedule, std::uint64_t seed,
                                         const BalanceConfig& balance = {});

struct ProblemFailure {
  std::string problem_id;
  std::string error;
};

struct Dataset {
  int segment_length = 30;
  std::vector<RewardTriplet> triplets;
  std::vector<ProblemFailure> failures;  // not persisted
};

/// Structural equality of the persisted part.
bool same_contents(const Dataset& a, const Dataset& b);

Dataset construct_dataset(const std::vector<ProblemPtr>& problems, const Policy& policy,
                          const SamplingSchedule& schedule, std::uint64_t seed, int threads = 0,
                          const BalanceConfig& balance = {});

struct StepBucketStats {
  int bucket = 1;
  int step = 0;
  int count = 0;
  double mean = 0.0;
  double variance = 0.0;  // population
};

/// Buckets by the length |y| of each problem's chosen trajectory: bucket n holds
/// (n-1)L <= |y| < nL. Rows are ordered by (bucket, step).
std::vector<StepBucketStats> step_bucket_stats(const Dataset& dataset, int segment_length);

/// Triplets grouped by (problem_id, step_index) in first-appearance order.
std::vector<std::vector<RewardTriplet>> group_by_state(const std::vector<RewardTriplet>& triplets);

std::string dataset_to_jsonl(const Dataset& dataset);
Dataset dataset_from_jsonl(const std::string& text);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Columns: bucket,step,count,mean,variance
std::string stats_to_csv(const std::vector<StepBucketStats>& stats);
std::vector<StepBucketStats> stats_from_csv(const std::string& text);

}  // namespace prmbas
