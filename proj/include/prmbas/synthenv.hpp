#pragma once

// Synthetic reasoning environment.
//
// A task is a layered decision tree: `depth` steps, `branching` options per
// step, one fully-correct path. The built-in policy follows the correct
// option at step t with probability 1 - slip_prob[t] and otherwise picks one
// of the wrong options uniformly; once off the path it picks uniformly among
// all options. An off-path trajectory still ends correct iff its final option
// is one of the task's "recovering" options, each option being recovering
// independently with probability recovery_prob (drawn once from the task seed).
//
// The prompt carries a key (one word per step naming the correct option), so a
// learned scorer can tell right steps from wrong ones by reading the text, the
// way a process reward model reads reasoning.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "prmbas/core.hpp"

namespace prmbas::synth {

struct SyntheticTask {
  int depth = 1;
  int branching = 2;
  std::vector<int> correct_path;
  std::vector<double> slip_prob;
  double recovery_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const;

  std::string problem_id() const;
  std::string gold_answer() const;
  std::string prompt() const;
  Problem problem() const;

  /// Option `branch` ends an off-path trajectory correctly.
  bool recovers(int branch) const;

  bool operator==(const SyntheticTask&) const = default;
};

using TaskPtr = std::shared_ptr<const SyntheticTask>;

/// Word naming option `index` in prompts and keys.
const std::string& option_word(int index);
inline constexpr int kMaxBranching = 16;

struct OraclePosition {
  TaskPtr task;
  std::vector<int> branch_history;

  int step() const { return static_cast<int>(branch_history.size()); }
  bool at_depth() const { return step() == task->depth; }
  bool on_path() const;
  void validate() const;
};

OraclePosition root_position(TaskPtr task);
OraclePosition advance(const OraclePosition& position, int branch);

/// Deterministic segment for choosing `branch` at `position`. Throws UsageError
/// when the branch is out of range or the position is already at depth.
ActionSegment render_segment(const OraclePosition& position, int branch, int segment_length,
                             std::string_view answer_marker = "Final answer:");

/// Policy distribution over the next option at `position` (sums to 1).
std::vector<double> branch_distribution(const OraclePosition& position);

/// Exact probability that a rollout from `position` under the task's policy ends
/// correct, by backward dynamic programming over the tree.
double true_success_prob(const OraclePosition& position);

/// Correctness of a complete branch sequence.
bool leaf_correct(const SyntheticTask& task, const std::vector<int>& branches);

struct EnumeratedTrajectory {
  std::vector<int> branches;
  bool correct = false;
  double probability = 0.0;
};

inline constexpr std::uint64_t kEnumerationGuard = 10'000;

/// All branch sequences with their policy mass. Throws SizeError when
/// branching^depth exceeds kEnumerationGuard.
std::vector<EnumeratedTrajectory> enumerate_trajectories(const SyntheticTask& task);

/// Recover the branch history from rendered segment texts. Throws UnsupportedError
/// when a segment was not produced by render_segment for this task.
OraclePosition position_from_state(TaskPtr task, const TrajectoryState& state);

/// Immutable collection of tasks addressable by problem id.
class TaskSuite {
 public:
  TaskSuite() = default;
  explicit TaskSuite(std::vector<SyntheticTask> tasks);

  const std::vector<TaskPtr>& tasks() const { return tasks_; }
  std::size_t size() const { return tasks_.size(); }
  /// nullptr when the id is not part of this suite.
  TaskPtr find(const std::string& problem_id) const;
  std::vector<ProblemPtr> problems() const;

 private:
  std::vector<TaskPtr> tasks_;
  std::vector<ProblemPtr> problems_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class VarianceProfile { shaped, flat };

VarianceProfile variance_profile_from_string(std::string_view text);
std::string_view to_string(VarianceProfile profile);

struct GeneratorConfig {
  int min_depth = 5;
  int max_depth = 12;
  int min_branching = 2;
  int max_branching = 4;
  VarianceProfile profile = VarianceProfile::shaped;
  double recovery_prob = 0.0;

  void validate() const;
};

std::vector<SyntheticTask> generate_tasks(std::size_t count, const GeneratorConfig& config,
                                          std::uint64_t seed);

std::string suite_to_json(const std::vector<SyntheticTask>& tasks);
std::vector<SyntheticTask> suite_from_json(const std::string& text);
void write_suite(const std::vector<SyntheticTask>& tasks, const std::filesystem::path& path);
std::vector<SyntheticTask> read_suite(const std::filesystem::path& path);

}  // namespace prmbas::synth
