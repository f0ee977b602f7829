#include "prmbas/synthenv.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prmbas/errors.hpp"
#include "prmbas/seed.hpp"

namespace prmbas::synth {

using nlohmann::json;

namespace {

constexpr std::uint64_t kRecoverSalt = 0x7265636f766572ULL;
constexpr std::uint64_t kAnswerSalt = 0x616e73776572ULL;
constexpr std::uint64_t kTaskSalt = 0x7461736bULL;

const std::array<std::string, kMaxBranching> kOptionWords = {
    "amber", "birch", "cedar",  "dune",  "ember", "fjord",  "garnet", "heron",
    "iris",  "jade",  "kestrel", "larch", "maple", "nickel", "onyx",   "pine"};

std::uint64_t history_hash(std::uint64_t seed, const std::vector<int>& branches) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < branches.size(); ++i) h = hash64(h, i, branches[i]);
  return h;
}

}  // namespace

const std::string& option_word(int index) {
  if (index < 0 || index >= kMaxBranching) throw UsageError("option index out of range");
  return kOptionWords[index];
}

void SyntheticTask::validate() const {
  if (depth < 1) throw UsageError("task depth must be >= 1");
  if (branching < 2 || branching > kMaxBranching)
    throw UsageError("task branching must be in [2, " + std::to_string(kMaxBranching) + "]");
  if (static_cast<int>(correct_path.size()) != depth)
    throw UsageError("correct_path length must equal depth");
  if (static_cast<int>(slip_prob.size()) != depth)
    throw UsageError("slip_prob length must equal depth");
  for (int b : correct_path)
    if (b < 0 || b >= branching) throw UsageError("correct_path entry out of range");
  for (double p : slip_prob)
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("slip_prob entries must lie in [0,1]");
  if (!(recovery_prob >= 0.0 && recovery_prob <= 1.0))
    throw UsageError("recovery_prob must lie in [0,1]");
}

std::string SyntheticTask::problem_id() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn-%016llx", static_cast<unsigned long long>(seed));
  return buf;
}

std::string SyntheticTask::gold_answer() const {
  return std::to_string(100 + hash64(seed, kAnswerSalt, 0) % 900);
}

std::string SyntheticTask::prompt() const {
  std::string key;
  for (int b : correct_path) {
    if (!key.empty()) key += ' ';
    key += option_word(b);
  }
  return "Follow the " + std::to_string(depth) + "-step chain, choosing one of " +
         std::to_string(branching) + " options per step. Key: " + key +
         ". Report the value at the end of the chain.";
}

Problem SyntheticTask::problem() const {
  return Problem{problem_id(), prompt(), std::nullopt, gold_answer(), ProblemSource::synthetic};
}

bool SyntheticTask::recovers(int branch) const {
  std::mt19937_64 rng(hash64(seed, kRecoverSalt, static_cast<std::uint64_t>(branch)));
  return uniform01(rng) < recovery_prob;
}

bool OraclePosition::on_path() const {
  for (std::size_t i = 0; i < branch_history.size(); ++i)
    if (branch_history[i] != task->correct_path[i]) return false;
  return true;
}

void OraclePosition::validate() const {
  if (!task) throw UsageError("position without a task");
  if (step() > task->depth) throw UsageError("branch history longer than depth");
  for (int b : branch_history)
    if (b < 0 || b >= task->branching) throw UsageError("branch history entry out of range");
}

OraclePosition root_position(TaskPtr task) { return OraclePosition{std::move(task), {}}; }

OraclePosition advance(const OraclePosition& position, int branch) {
  if (position.at_depth()) throw UsageError("position already at depth");
  if (branch < 0 || branch >= position.task->branching)
    throw UsageError("branch " + std::to_string(branch) + " out of range");
  OraclePosition next = position;
  next.branch_history.push_back(branch);
  return next;
}

bool leaf_correct(const SyntheticTask& task, const std::vector<int>& branches) {
  if (static_cast<int>(branches.size()) != task.depth) return false;
  if (std::equal(branches.begin(), branches.end(), task.correct_path.begin())) return true;
  return task.recovers(branches.back());
}

ActionSegment render_segment(const OraclePosition& position, int branch, int segment_length,
                             std::string_view answer_marker) {
  const auto next = advance(position, branch);
  const SyntheticTask& task = *position.task;
  std::string text = "Step " + std::to_string(position.step() + 1) + ": choose " +
                     option_word(branch) + ".";
  if (!next.at_depth()) return ActionSegment{text + "\n", segment_length, false};

  std::string answer = task.gold_answer();
  if (!leaf_correct(task, next.branch_history)) {
    const auto gold = std::stoll(answer);
    answer = std::to_string(gold + 1 + static_cast<long long>(
                                           history_hash(task.seed, next.branch_history) % 89));
  }
  text += ' ';
  text += answer_marker;
  text += ' ';
  text += answer;
  return ActionSegment{std::move(text), std::max(1, (segment_length + 1) / 2), true};
}

std::vector<double> branch_distribution(const OraclePosition& position) {
  const SyntheticTask& task = *position.task;
  if (position.at_depth()) throw UsageError("no branches at depth");
  const int b = task.branching;
  std::vector<double> dist(b, 1.0 / b);
  if (position.on_path()) {
    const int t = position.step();
    const double slip = task.slip_prob[t];
    std::fill(dist.begin(), dist.end(), slip / (b - 1));
    dist[task.correct_path[t]] = 1.0 - slip;
  }
  return dist;
}

double true_success_prob(const OraclePosition& position) {
  position.validate();
  const SyntheticTask& task = *position.task;
  const int depth = task.depth;
  const int b = task.branching;

  int recovering = 0;
  for (int j = 0; j < b; ++j) recovering += task.recovers(j) ? 1 : 0;

  if (!position.on_path()) {
    if (position.at_depth()) return task.recovers(position.branch_history.back()) ? 1.0 : 0.0;
    // Uniform choice at every remaining step; only the final option matters.
    return static_cast<double>(recovering) / b;
  }

  // Off-path continuation value after slipping at step t (wrong option chosen
  // uniformly among the b-1 non-key options).
  auto slip_value = [&](int t) {
    if (t + 1 < depth) return static_cast<double>(recovering) / b;
    const int key = task.correct_path[t];
    int wrong_recovering = recovering - (task.recovers(key) ? 1 : 0);
    return static_cast<double>(wrong_recovering) / (b - 1);
  };

  double value = 1.0;  // on-path at depth
  for (int t = depth - 1; t >= position.step(); --t) {
    const double slip = task.slip_prob[t];
    value = (1.0 - slip) * value + slip * slip_value(t);
  }
  return value;
}

std::vector<EnumeratedTrajectory> enumerate_trajectories(const SyntheticTask& task) {
  task.validate();
  std::uint64_t count = 1;
  for (int d = 0; d < task.depth; ++d) {
    count *= static_cast<std::uint64_t>(task.branching);
    if (count > kEnumerationGuard)
      throw SizeError("enumeration of " + std::to_string(task.branching) + "^" +
                      std::to_string(task.depth) + " trajectories exceeds guard " +
                      std::to_string(kEnumerationGuard));
  }

  auto shared = std::make_shared<const SyntheticTask>(task);
  std::vector<EnumeratedTrajectory> out;
  out.reserve(count);
  std::vector<int> digits(task.depth, 0);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t rest = i;
    for (int d = task.depth - 1; d >= 0; --d) {
      digits[d] = static_cast<int>(rest % task.branching);
      rest /= task.branching;
    }
    double mass = 1.0;
    OraclePosition pos = root_position(shared);
    for (int d = 0; d < task.depth; ++d) {
      mass *= branch_distribution(pos)[digits[d]];
      pos.branch_history.push_back(digits[d]);
    }
    out.push_back({digits, leaf_correct(task, digits), mass});
  }
  return out;
}

OraclePosition position_from_state(TaskPtr task, const TrajectoryState& state) {
  OraclePosition pos = root_position(task);
  for (const auto& seg : state.segments()) {
    const std::string_view text = seg.text;
    const auto start = text.find("choose ");
    if (start == std::string_view::npos)
      throw UnsupportedError("segment is not a synthetic rendering: " + seg.text);
    auto word = text.substr(start + 7);
    word = word.substr(0, word.find('.'));
    int branch = -1;
    for (int j = 0; j < task->branching; ++j)
      if (word == option_word(j)) branch = j;
    if (branch < 0 || pos.at_depth())
      throw UnsupportedError("segment does not match task " + task->problem_id());
    pos.branch_history.push_back(branch);
  }
  return pos;
}

TaskSuite::TaskSuite(std::vector<SyntheticTask> tasks) {
  for (auto& t : tasks) {
    t.validate();
    auto problem = std::make_shared<const Problem>(t.problem());
    if (!index_.emplace(problem->id, tasks_.size()).second)
      throw UsageError("duplicate task id " + problem->id);
    tasks_.push_back(std::make_shared<const SyntheticTask>(std::move(t)));
    problems_.push_back(std::move(problem));
  }
}

TaskPtr TaskSuite::find(const std::string& problem_id) const {
  const auto it = index_.find(problem_id);
  return it == index_.end() ? nullptr : tasks_[it->second];
}

std::vector<ProblemPtr> TaskSuite::problems() const { return problems_; }

VarianceProfile variance_profile_from_string(std::string_view text) {
  if (text == "shaped") return VarianceProfile::shaped;
  if (text == "flat") return VarianceProfile::flat;
  throw UsageError("unknown variance profile: " + std::string(text));
}

std::string_view to_string(VarianceProfile profile) {
  return profile == VarianceProfile::shaped ? "shaped" : "flat";
}

void GeneratorConfig::validate() const {
  if (min_depth < 1 || max_depth < min_depth) throw UsageError("invalid depth range");
  if (min_branching < 2 || max_branching < min_branching || max_branching > kMaxBranching)
    throw UsageError("invalid branching range (branching must be >= 2)");
  if (!(recovery_prob >= 0.0 && recovery_prob <= 1.0))
    throw UsageError("recovery_prob must lie in [0,1]");
}

std::vector<SyntheticTask> generate_tasks(std::size_t count, const GeneratorConfig& config,
                                          std::uint64_t seed) {
  config.validate();
  std::vector<SyntheticTask> tasks;
  tasks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticTask task;
    task.seed = hash64(seed, kTaskSalt, i);
    std::mt19937_64 rng(task.seed);
    task.depth = config.min_depth +
                 static_cast<int>(uniform_index(rng, config.max_depth - config.min_depth + 1));
    task.branching =
        config.min_branching +
        static_cast<int>(uniform_index(rng, config.max_branching - config.min_branching + 1));
    task.recovery_prob = config.recovery_prob;
    for (int t = 0; t < task.depth; ++t)
      task.correct_path.push_back(static_cast<int>(uniform_index(rng, task.branching)));
    if (config.profile == VarianceProfile::shaped) {
      // Slips decay from 0.6-0.75 at the first step to a small floor, so sibling
      // rewards spread most at early steps.
      const double first = 0.6 + 0.15 * uniform01(rng);
      const double floor = 0.002 + 0.008 * uniform01(rng);
      for (int t = 0; t < task.depth; ++t)
        task.slip_prob.push_back(floor + (first - floor) * std::exp(-2.0 * t));
    } else {
      const double slip = 0.15 + 0.15 * uniform01(rng);
      task.slip_prob.assign(task.depth, slip);
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

namespace {

json task_to_json(const SyntheticTask& t) {
  return json{{"depth", t.depth},
              {"branching", t.branching},
              {"correct_path", t.correct_path},
              {"slip_prob", t.slip_prob},
              {"recovery_prob", t.recovery_prob},
              {"seed", t.seed}};
}

SyntheticTask task_from_json(const json& j) {
  SyntheticTask t;
  t.depth = j.at("depth").get<int>();
  t.branching = j.at("branching").get<int>();
  t.correct_path = j.at("correct_path").get<std::vector<int>>();
  t.slip_prob = j.at("slip_prob").get<std::vector<double>>();
  t.recovery_prob = j.at("recovery_prob").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.validate();
  return t;
}

}  // namespace

std::string suite_to_json(const std::vector<SyntheticTask>& tasks) {
  json doc{{"format_version", 1}, {"tasks", json::array()}};
  for (const auto& t : tasks) doc["tasks"].push_back(task_to_json(t));
  return doc.dump(1) + "\n";
}

std::vector<SyntheticTask> suite_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 1);
  }
  if (doc.value("format_version", 0) != 1) throw VersionError("task suite format_version != 1");
  std::vector<SyntheticTask> tasks;
  try {
    for (const auto& j : doc.at("tasks")) tasks.push_back(task_from_json(j));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("task suite: ") + e.what());
  } catch (const UsageError& e) {
    throw ValidationError(std::string("task suite: ") + e.what());
  }
  return tasks;
}

void write_suite(const std::vector<SyntheticTask>& tasks, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << suite_to_json(tasks);
  if (!out) throw UsageError("write failed for " + path.string());
}

std::vector<SyntheticTask> read_suite(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return suite_from_json(ss.str());
}

}  // namespace prmbas::synth
