#include "prmbas/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "prmbas/errors.hpp"
#include "prmbas/io.hpp"
#include "prmbas/seed.hpp"

namespace prmbas {

using nlohmann::json;

namespace {
constexpr std::uint64_t kEstimateSalt = 0x657374ULL;
constexpr std::uint64_t kBalanceSalt = 0x62616cULL;
constexpr std::uint64_t kProblemSalt = 0x64617461ULL;
}  // namespace

SamplingSchedule SamplingSchedule::uniform(int candidates, int rollouts) {
  SamplingSchedule s;
  s.early.clear();
  s.tail = {candidates, rollouts};
  return s;
}

StepBudget SamplingSchedule::at(int t) const {
  if (t >= 0 && static_cast<std::size_t>(t) < early.size()) return early[t];
  return tail;
}

void SamplingSchedule::validate() const {
  if (tail.candidates < 1 || tail.rollouts < 1) throw UsageError("schedule budgets must be >= 1");
  for (const auto& b : early)
    if (b.candidates < tail.candidates || b.rollouts < tail.rollouts)
      throw UsageError("early schedule budgets must be >= the tail budget");
}

RewardEstimate estimate_action_reward(const TrajectoryState& state, const ActionSegment& action,
                                      const Policy& policy, int rollouts, std::uint64_t seed) {
  if (rollouts < 1) throw UsageError("rollout count must be >= 1");
  const auto next = append_action(state, action);
  const auto& marker = policy.config().answer_marker;

  RewardEstimate est;
  est.outcomes.assign(rollouts, false);
  if (next.finished()) {
    est.outcomes.assign(rollouts, is_correct(next, marker));
  } else {
    std::vector<char> ok(rollouts, 0);
    parallel_for(rollouts, policy.concurrency_limit(), [&](std::size_t j) {
      try {
        ok[j] = is_correct(rollout_to_completion(policy, next, hash64(seed, 1, j)), marker);
      } catch (const BackendError& e) {
        throw BackendError("rollout " + std::to_string(j) + ": " + e.what(), e.attempts());
      }
    });
    for (int j = 0; j < rollouts; ++j) est.outcomes[j] = ok[j] != 0;
  }
  const auto hits = std::count(est.outcomes.begin(), est.outcomes.end(), true);
  est.reward = static_cast<double>(hits) / rollouts;
  return est;
}

namespace {

// Keeps `keep` of `pool` uniformly at random, always including `forced` if set.
std::vector<std::size_t> subsample(std::vector<std::size_t> pool, std::size_t keep,
                                   std::optional<std::size_t> forced, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (forced) {
    out.push_back(*forced);
    pool.erase(std::find(pool.begin(), pool.end(), *forced));
    keep = keep > 0 ? keep - 1 : 0;
  }
  keep = std::min(keep, pool.size());
  for (std::size_t i = 0; i < keep; ++i) {
    const auto j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace

std::vector<RewardTriplet> balance_candidates(const std::vector<RewardTriplet>& group,
                                              std::uint64_t seed, const BalanceConfig& config) {
  std::vector<std::size_t> pos, neg;
  std::optional<std::size_t> chosen;
  for (std::size_t i = 0; i < group.size(); ++i) {
    (group[i].reward > config.threshold ? pos : neg).push_back(i);
    if (group[i].chosen) chosen = i;
  }
  auto holds = [&](const std::vector<std::size_t>& cls) {
    return chosen && std::find(cls.begin(), cls.end(), *chosen) != cls.end()
               ? chosen
               : std::optional<std::size_t>{};
  };

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  if (!pos.empty() && !neg.empty()) {
    auto& large = pos.size() >= neg.size() ? pos : neg;
    auto& small = pos.size() >= neg.size() ? neg : pos;
    const auto limit = static_cast<std::size_t>(config.max_ratio) * small.size();
    keep = small;
    const auto picked =
        large.size() > limit ? subsample(large, limit, holds(large), rng) : large;
    keep.insert(keep.end(), picked.begin(), picked.end());
  } else {
    auto& only = pos.empty() ? neg : pos;
    const auto cap = static_cast<std::size_t>(config.single_class_cap);
    keep = only.size() > cap ? subsample(only, cap, holds(only), rng) : only;
  }
  std::sort(keep.begin(), keep.end());
  std::vector<RewardTriplet> out;
  for (auto i : keep) out.push_back(group[i]);
  return out;
}

ConstructionResult construct_for_problem(const ProblemPtr& problem, const Policy& policy,
                                         const SamplingSchedule& schedule, std::uint64_t seed,
                                         const BalanceConfig& balance) {
  schedule.validate();
  ConstructionResult result;
  auto state = policy.root(problem);
  std::uint64_t stream = seed;
  const std::string source(to_string(problem->source));

  try {
    while (!state.finished()) {
      const int t = state.step_index();
      const auto budget = schedule.at(t);
      const auto candidates = policy.sample_continuations(state, budget.candidates, stream);

      std::vector<std::optional<double>> rewards(candidates.size());
      std::string last_error;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        try {
          rewards[i] = estimate_action_reward(state, candidates[i], policy, budget.rollouts,
                                              hash64(stream, kEstimateSalt + t, i))
                           .reward;
        } catch (const std::exception& e) {
          last_error = e.what();
        }
      }
      std::optional<std::size_t> best;
      for (std::size_t i = 0; i < candidates.size(); ++i)
        if (rewards[i] && (!best || *rewards[i] > *rewards[*best])) best = i;
      if (!best)
        throw ConstructionError("step " + std::to_string(t) + ": all candidates failed: " +
                                    last_error,
                                t);

      const auto state_text = compose_state_text(problem->prompt, state.response_text());
      std::vector<RewardTriplet> group;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!rewards[i]) continue;
        group.push_back(RewardTriplet{problem->id, t, state_text, candidates[i].text,
                                      candidates[i].token_count, *rewards[i], budget.rollouts,
                                      i == *best, source});
      }
      const auto kept = balance_candidates(group, hash64(stream, kBalanceSalt, t), balance);
      result.triplets.insert(result.triplets.end(), kept.begin(), kept.end());

      stream = hash64(stream, t, *best);
      state = append_action(state, candidates[*best]);
    }
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  result.trajectory = std::move(state);
  return result;
}

bool same_contents(const Dataset& a, const Dataset& b) {
  return a.segment_length == b.segment_length && a.triplets == b.triplets;
}

Dataset construct_dataset(const std::vector<ProblemPtr>& problems, const Policy& policy,
                          const SamplingSchedule& schedule, std::uint64_t seed, int threads,
                          const BalanceConfig& balance) {
  schedule.validate();
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<ConstructionResult> results(problems.size());
  parallel_for(problems.size(), threads, [&](std::size_t i) {
    results[i] = construct_for_problem(problems[i], policy, schedule,
                                       hash64(seed, kProblemSalt, i), balance);
  });

  Dataset ds;
  ds.segment_length = policy.config().segment_length;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    auto& r = results[i];
    ds.triplets.insert(ds.triplets.end(), std::make_move_iterator(r.triplets.begin()),
                       std::make_move_iterator(r.triplets.end()));
    if (r.error) ds.failures.push_back({problems[i]->id, *r.error});
  }
  return ds;
}

std::vector<StepBucketStats> step_bucket_stats(const Dataset& dataset, int segment_length) {
  if (dataset.triplets.empty()) throw UsageError("step_bucket_stats needs a nonempty dataset");
  if (segment_length < 1) throw UsageError("segment length must be >= 1");

  std::map<std::string, long long> length;
  for (const auto& t : dataset.triplets)
    if (t.chosen) length[t.problem_id] += t.action_tokens;

  std::map<std::pair<int, int>, std::vector<double>> cells;
  for (const auto& t : dataset.triplets) {
    const int bucket = static_cast<int>(length[t.problem_id] / segment_length) + 1;
    cells[{bucket, t.step_index}].push_back(t.reward);
  }

  std::vector<StepBucketStats> out;
  for (const auto& [key, values] : cells) {
    StepBucketStats s;
    s.bucket = key.first;
    s.step = key.second;
    s.count = static_cast<int>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / s.count;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.variance = ss / s.count;
    out.push_back(s);
  }
  return out;
}

std::vector<std::vector<RewardTriplet>> group_by_state(const std::vector<RewardTriplet>& triplets) {
  std::vector<std::vector<RewardTriplet>> groups;
  std::map<std::pair<std::string, int>, std::size_t> index;
  for (const auto& t : triplets) {
    const auto [it, inserted] = index.try_emplace({t.problem_id, t.step_index}, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(t);
  }
  return groups;
}

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out =
      json{{"format_version", 1}, {"segment_length", dataset.segment_length}}.dump() + "\n";
  for (const auto& t : dataset.triplets) {
    out += json{{"problem_id", t.problem_id},   {"step_index", t.step_index},
                {"state_text", t.state_text},   {"action_text", t.action_text},
                {"action_tokens", t.action_tokens}, {"reward", t.reward},
                {"n_rollouts", t.n_rollouts},   {"chosen", t.chosen},
                {"source", t.source}}
               .dump();
    out += "\n";
  }
  return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    try {
      if (!header) {
        if (j.value("format_version", 0) != 1)
          throw VersionError("dataset format_version must be 1");
        ds.segment_length = j.at("segment_length").get<int>();
        header = true;
        continue;
      }
      RewardTriplet t;
      t.problem_id = j.at("problem_id").get<std::string>();
      t.step_index = j.at("step_index").get<int>();
      t.state_text = j.at("state_text").get<std::string>();
      t.action_text = j.at("action_text").get<std::string>();
      t.action_tokens = j.at("action_tokens").get<int>();
      t.reward = j.at("reward").get<double>();
      t.n_rollouts = j.at("n_rollouts").get<int>();
      t.chosen = j.at("chosen").get<bool>();
      t.source = j.value("source", std::string{});
      if (!(t.reward >= 0.0 && t.reward <= 1.0))
        throw ValidationError("line " + std::to_string(line_no) + ": reward outside [0,1]");
      if (t.n_rollouts < 1 || t.step_index < 0 || t.action_tokens < 1)
        throw ValidationError("line " + std::to_string(line_no) + ": invalid counts");
      ds.triplets.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (!header) throw ParseError("missing dataset header", std::max(line_no, 1));
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  io::write_file(path, dataset_to_jsonl(dataset));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return dataset_from_jsonl(io::read_file(path));
}

std::string stats_to_csv(const std::vector<StepBucketStats>& stats) {
  std::string out = "bucket,step,count,mean,variance\n";
  for (const auto& s : stats)
    out += std::to_string(s.bucket) + "," + std::to_string(s.step) + "," +
           std::to_string(s.count) + "," + io::format_double(s.mean) + "," +
           io::format_double(s.variance) + "\n";
  return out;
}

std::vector<StepBucketStats> stats_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<StepBucketStats> out;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream row(line);
    StepBucketStats s;
    char c1, c2, c3, c4;
    if (!(row >> s.bucket >> c1 >> s.step >> c2 >> s.count >> c3 >> s.mean >> c4 >> s.variance))
      throw ParseError("malformed stats row", line_no);
    out.push_back(s);
  }
  return out;
}

}  // namespace prmbas
