#pragma once

// Inference strategies under a shared token accountant: single-shot,
// Best-of-N, step-level Best-of-N and beam annealing search (fixed-width beam
// search is the k = 0 case).
//
// Seeds: every strategy consumes one seed per problem and derives candidate
// streams through hash64(parent, step, candidate). A candidate's stream depends
// only on its lineage, so degenerate configurations coincide exactly:
// best_of_n(1) == single_shot and BAS(b0=1, k=0, eps=1) == step-level BoN(1).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prmbas/backends.hpp"
#include "prmbas/core.hpp"

namespace prmbas {

struct BasSchedule {
  int b0 = 12;
  double k = 1.0;
  int epsilon = 2;
  int expansion = 1;

  void validate() const;
  bool operator==(const BasSchedule&) const = default;
};

/// max(b0 - floor(k*t), epsilon).
int beam_size_at(const BasSchedule& schedule, int t);

enum class StrategyKind { single, bon, step_bon, bas };
/// How a completed trajectory is ranked at the end of BAS.
enum class FinalRule { last, mean, min };

std::string_view to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(std::string_view text);
std::string_view to_string(FinalRule rule);
FinalRule final_rule_from_string(std::string_view text);

struct StrategyDescriptor {
  StrategyKind kind = StrategyKind::bas;
  int n = 8;  // bon / step_bon
  BasSchedule schedule;
  FinalRule final_rule = FinalRule::last;

  void validate() const;
  /// Compact label, e.g. "bas(b0=12,k=1,eps=2,exp=1)" or "bon(n=8)".
  std::string label() const;
};

struct SearchResult {
  TrajectoryState trajectory;
  std::optional<std::string> answer;
  std::optional<bool> correct;
  /// Tokens of every candidate ever sampled, kept or discarded.
  std::int64_t tokens_generated = 0;
  /// PRM scores of the chosen actions, one per step.
  std::vector<double> scores;
  std::string strategy;
  /// The winner never reached end-of-sequence.
  bool truncated = false;
  /// Beam-set size at each step (BAS only; step 0 counts root copies).
  std::vector<int> beam_widths;
};

/// Equal trajectory, answer, correctness and token count.
bool same_outcome(const SearchResult& a, const SearchResult& b);

SearchResult single_shot(const ProblemPtr& problem, const Policy& policy, std::uint64_t seed);
SearchResult best_of_n(const ProblemPtr& problem, const Policy& policy, const RewardModel& reward,
                       int n, std::uint64_t seed);
SearchResult step_level_best_of_n(const ProblemPtr& problem, const Policy& policy,
                                  const RewardModel& reward, int n, std::uint64_t seed);
/// Throws SearchError naming the step when no candidate could be generated.
SearchResult beam_anneal_search(const ProblemPtr& problem, const Policy& policy,
                                const RewardModel& reward, const BasSchedule& schedule,
                                std::uint64_t seed, FinalRule final_rule = FinalRule::last);

SearchResult run_strategy(const StrategyDescriptor& strategy, const ProblemPtr& problem,
                          const Policy& policy, const RewardModel& reward, std::uint64_t seed);

struct ProblemOutcome {
  std::string problem_id;
  bool failed = false;
  std::string error;
  std::optional<std::string> answer;
  bool correct = false;
  bool truncated = false;
  std::int64_t tokens = 0;
  std::int64_t single_shot_tokens = 0;
  double token_ratio = 0.0;
  std::vector<double> scores;
};

struct SuiteReport {
  std::string strategy;
  std::uint64_t seed = 0;
  std::vector<ProblemOutcome> outcomes;
  double accuracy = 0.0;
  double single_shot_accuracy = 0.0;
  double mean_tokens = 0.0;
  double mean_token_ratio = 0.0;
  int failures = 0;
};

/// Seed for problem `index` of a suite run.
std::uint64_t problem_seed(std::uint64_t seed, std::size_t index);

/// Runs `strategy` and a paired single-shot baseline with the same per-problem
/// seeds. Problem failures are recorded and count as incorrect.
SuiteReport run_suite(const std::vector<ProblemPtr>& problems, const StrategyDescriptor& strategy,
                      const Policy& policy, const RewardModel& reward, std::uint64_t seed,
                      int threads = 0);

std::string report_to_json(const SuiteReport& report);
SuiteReport report_from_json(const std::string& text);
/// Columns: problem_id,strategy,correct,tokens,token_ratio
std::string report_to_csv(const SuiteReport& report);

}  // namespace prmbas
