#include "prmbas/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "prmbas/errors.hpp"
#include "prmbas/io.hpp"
#include "prmbas/seed.hpp"

namespace prmbas {

using nlohmann::json;

void BasSchedule::validate() const {
  if (epsilon < 1) throw UsageError("epsilon must be >= 1");
  if (b0 < epsilon) throw UsageError("b0 must be >= epsilon");
  if (!(k >= 0.0) || !std::isfinite(k)) throw UsageError("annealing rate k must be >= 0");
  if (expansion < 1) throw UsageError("expansion must be >= 1");
}

int beam_size_at(const BasSchedule& schedule, int t) {
  if (t < 0) throw UsageError("step index must be >= 0");
  const double decrement = std::floor(schedule.k * static_cast<double>(t));
  if (decrement >= static_cast<double>(schedule.b0)) return schedule.epsilon;
  return std::max(schedule.b0 - static_cast<int>(decrement), schedule.epsilon);
}

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::single: return "single";
    case StrategyKind::bon: return "bon";
    case StrategyKind::step_bon: return "step-bon";
    case StrategyKind::bas: return "bas";
  }
  return "?";
}

StrategyKind strategy_kind_from_string(std::string_view text) {
  if (text == "single") return StrategyKind::single;
  if (text == "bon") return StrategyKind::bon;
  if (text == "step-bon" || text == "step_bon") return StrategyKind::step_bon;
  if (text == "bas" || text == "beam") return StrategyKind::bas;
  throw UsageError("unknown strategy: " + std::string(text));
}

std::string_view to_string(FinalRule rule) {
  switch (rule) {
    case FinalRule::last: return "last";
    case FinalRule::mean: return "mean";
    case FinalRule::min: return "min";
  }
  return "?";
}

FinalRule final_rule_from_string(std::string_view text) {
  if (text == "last") return FinalRule::last;
  if (text == "mean") return FinalRule::mean;
  if (text == "min") return FinalRule::min;
  throw UsageError("unknown final rule: " + std::string(text));
}

void StrategyDescriptor::validate() const {
  if ((kind == StrategyKind::bon || kind == StrategyKind::step_bon) && n < 1)
    throw UsageError("n must be >= 1");
  if (kind == StrategyKind::bas) schedule.validate();
}

std::string StrategyDescriptor::label() const {
  std::ostringstream out;
  switch (kind) {
    case StrategyKind::single: out << "single"; break;
    case StrategyKind::bon: out << "bon(n=" << n << ")"; break;
    case StrategyKind::step_bon: out << "step-bon(n=" << n << ")"; break;
    case StrategyKind::bas:
      out << "bas(b0=" << schedule.b0 << ",k=" << io::format_double(schedule.k)
          << ",eps=" << schedule.epsilon << ",exp=" << schedule.expansion;
      if (final_rule != FinalRule::last) out << ",final=" << to_string(final_rule);
      out << ")";
      break;
  }
  return out.str();
}

bool same_outcome(const SearchResult& a, const SearchResult& b) {
  return a.trajectory == b.trajectory && a.answer == b.answer && a.correct == b.correct &&
         a.tokens_generated == b.tokens_generated;
}

namespace {

SearchResult finish(TrajectoryState state, std::int64_t tokens, std::vector<double> scores,
                    std::string strategy) {
  SearchResult r;
  const auto& marker = "Final answer:";
  r.answer = state.terminal() ? extract_final_answer(state.response_text(), marker) : std::nullopt;
  r.correct = r.answer ? answers_match(*r.answer, state.problem().gold_answer) : false;
  r.truncated = state.truncated();
  r.trajectory = std::move(state);
  r.tokens_generated = tokens;
  r.scores = std::move(scores);
  r.strategy = std::move(strategy);
  return r;
}

SearchResult finish(const Policy& policy, TrajectoryState state, std::int64_t tokens,
                    std::vector<double> scores, std::string strategy) {
  auto r = finish(std::move(state), tokens, std::move(scores), std::move(strategy));
  r.answer = r.trajectory.terminal()
                 ? extract_final_answer(r.trajectory.response_text(), policy.config().answer_marker)
                 : std::nullopt;
  r.correct = r.answer ? answers_match(*r.answer, r.trajectory.problem().gold_answer) : false;
  return r;
}

std::size_t argmax_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

TrajectoryState prefix_state(const TrajectoryState& state, int steps) {
  TrajectoryState out(state.problem_ptr(), state.segment_length(), state.max_steps());
  for (int i = 0; i < steps; ++i) out = append_action(out, state.segments()[i]);
  return out;
}

std::int64_t sum_tokens(const std::vector<ActionSegment>& segments) {
  std::int64_t n = 0;
  for (const auto& s : segments) n += s.token_count;
  return n;
}

}  // namespace

SearchResult single_shot(const ProblemPtr& problem, const Policy& policy, std::uint64_t seed) {
  auto state = rollout_to_completion(policy, policy.root(problem), seed);
  const auto tokens = state.tokens_generated();
  return finish(policy, std::move(state), tokens, {}, "single");
}

SearchResult best_of_n(const ProblemPtr& problem, const Policy& policy, const RewardModel& reward,
                       int n, std::uint64_t seed) {
  if (n < 1) throw UsageError("best_of_n needs n >= 1");
  const auto root = policy.root(problem);
  const auto firsts = policy.sample_continuations(root, n, seed);

  std::vector<TrajectoryState> finals(n);
  parallel_for(static_cast<std::size_t>(n), policy.concurrency_limit(), [&](std::size_t i) {
    auto s = append_action(root, firsts[i]);
    finals[i] = s.finished() ? s : rollout_to_completion(policy, s, hash64(seed, 0, i));
  });

  std::int64_t tokens = 0;
  std::vector<double> final_scores(n);
  for (int i = 0; i < n; ++i) {
    const auto& s = finals[i];
    tokens += s.tokens_generated();
    final_scores[i] = reward.score(prefix_state(s, s.step_index() - 1), s.segments().back());
  }
  // Prefer rollouts that finished properly; among the rest the same rule applies.
  std::vector<double> rank = final_scores;
  const bool any_terminal =
      std::any_of(finals.begin(), finals.end(), [](const auto& s) { return s.terminal(); });
  if (any_terminal)
    for (int i = 0; i < n; ++i)
      if (!finals[i].terminal()) rank[i] = -1.0;
  const auto best = argmax_first(rank);
  return finish(policy, finals[best], tokens, {final_scores[best]},
                "bon(n=" + std::to_string(n) + ")");
}

SearchResult step_level_best_of_n(const ProblemPtr& problem, const Policy& policy,
                                  const RewardModel& reward, int n, std::uint64_t seed) {
  if (n < 1) throw UsageError("step_level_best_of_n needs n >= 1");
  auto state = policy.root(problem);
  std::uint64_t stream = seed;
  std::int64_t tokens = 0;
  std::vector<double> scores;
  while (!state.finished()) {
    const int t = state.step_index();
    const auto candidates = policy.sample_continuations(state, n, stream);
    const auto s = reward.score_batch(state, candidates);
    tokens += sum_tokens(candidates);
    const auto best = argmax_first(s);
    scores.push_back(s[best]);
    stream = hash64(stream, t, best);
    state = append_action(state, candidates[best]);
  }
  return finish(policy, std::move(state), tokens, std::move(scores),
                "step-bon(n=" + std::to_string(n) + ")");
}

namespace {

struct Beam {
  TrajectoryState state;
  std::uint64_t stream = 0;
  std::vector<int> lineage;
  std::vector<double> scores;
  bool pooled = false;
};

double final_value(const Beam& b, FinalRule rule) {
  if (b.scores.empty()) return 0.0;
  switch (rule) {
    case FinalRule::last: return b.scores.back();
    case FinalRule::mean:
      return std::accumulate(b.scores.begin(), b.scores.end(), 0.0) / b.scores.size();
    case FinalRule::min: return *std::min_element(b.scores.begin(), b.scores.end());
  }
  return 0.0;
}

}  // namespace

SearchResult beam_anneal_search(const ProblemPtr& problem, const Policy& policy,
                                const RewardModel& reward, const BasSchedule& schedule,
                                std::uint64_t seed, FinalRule final_rule) {
  schedule.validate();
  std::vector<Beam> beams{Beam{policy.root(problem), seed, {}, {}, false}};
  std::vector<Beam> pool;
  std::vector<int> widths;
  std::int64_t tokens = 0;

  for (int t = 0;; ++t) {
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < beams.size(); ++i)
      if (!beams[i].state.finished()) live.push_back(i);
    if (live.empty()) break;
    widths.push_back(t == 0 ? beam_size_at(schedule, 0) : static_cast<int>(beams.size()));

    // At t = 0 the root stands in for b0 copies of itself.
    const int per_beam = t == 0 ? beam_size_at(schedule, 0) * schedule.expansion : schedule.expansion;
    std::vector<std::vector<ActionSegment>> proposals(live.size());
    std::vector<std::vector<double>> proposal_scores(live.size());
    parallel_for(live.size(), policy.concurrency_limit(), [&](std::size_t j) {
      const auto& parent = beams[live[j]];
      proposals[j] = policy.sample_continuations(parent.state, per_beam, parent.stream);
      proposal_scores[j] = reward.score_batch(parent.state, proposals[j]);
    });

    std::vector<Beam> contenders;
    for (auto& b : beams)
      if (b.state.finished()) contenders.push_back(std::move(b));
    std::size_t produced = 0;
    for (std::size_t j = 0; j < live.size(); ++j) {
      const auto& parent = beams[live[j]];
      for (std::size_t c = 0; c < proposals[j].size(); ++c) {
        const auto& action = proposals[j][c];
        tokens += action.token_count;
        Beam child{append_action(parent.state, action), hash64(parent.stream, t, c),
                   parent.lineage, parent.scores, false};
        child.lineage.push_back(static_cast<int>(c));
        child.scores.push_back(proposal_scores[j][c]);
        contenders.push_back(std::move(child));
        ++produced;
      }
    }
    if (produced == 0) throw SearchError("no candidates generated at step " + std::to_string(t), t);

    std::stable_sort(contenders.begin(), contenders.end(), [](const Beam& a, const Beam& b) {
      if (a.scores.back() != b.scores.back()) return a.scores.back() > b.scores.back();
      return a.lineage < b.lineage;
    });
    const auto keep =
        std::min<std::size_t>(contenders.size(), static_cast<std::size_t>(beam_size_at(schedule, t + 1)));
    contenders.resize(keep);
    for (auto& b : contenders)
      if (b.state.finished() && !b.pooled) {
        b.pooled = true;
        pool.push_back(b);
      }
    beams = std::move(contenders);
  }

  if (pool.empty()) throw SearchError("search produced no finished trajectory", 0);
  const bool any_terminal =
      std::any_of(pool.begin(), pool.end(), [](const Beam& b) { return b.state.terminal(); });
  const Beam* best = nullptr;
  for (const auto& b : pool) {
    if (any_terminal && !b.state.terminal()) continue;
    if (!best) {
      best = &b;
      continue;
    }
    const double vb = final_value(b, final_rule);
    const double vbest = final_value(*best, final_rule);
    if (vb > vbest ||
        (vb == vbest && std::pair(b.state.step_index(), b.lineage) <
                            std::pair(best->state.step_index(), best->lineage)))
      best = &b;
  }

  StrategyDescriptor d;
  d.kind = StrategyKind::bas;
  d.schedule = schedule;
  d.final_rule = final_rule;
  auto result = finish(policy, best->state, tokens, best->scores, d.label());
  result.beam_widths = std::move(widths);
  return result;
}

SearchResult run_strategy(const StrategyDescriptor& strategy, const ProblemPtr& problem,
                          const Policy& policy, const RewardModel& reward, std::uint64_t seed) {
  strategy.validate();
  switch (strategy.kind) {
    case StrategyKind::single: return single_shot(problem, policy, seed);
    case StrategyKind::bon: return best_of_n(problem, policy, reward, strategy.n, seed);
    case StrategyKind::step_bon:
      return step_level_best_of_n(problem, policy, reward, strategy.n, seed);
    case StrategyKind::bas:
      return beam_anneal_search(problem, policy, reward, strategy.schedule, seed,
                                strategy.final_rule);
  }
  throw UsageError("unknown strategy");
}

std::uint64_t problem_seed(std::uint64_t seed, std::size_t index) {
  return hash64(seed, 0x7375697465ULL, index);
}

SuiteReport run_suite(const std::vector<ProblemPtr>& problems, const StrategyDescriptor& strategy,
                      const Policy& policy, const RewardModel& reward, std::uint64_t seed,
                      int threads) {
  if (problems.empty()) throw UsageError("run_suite needs at least one problem");
  strategy.validate();
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  SuiteReport report;
  report.strategy = strategy.label();
  report.seed = seed;
  report.outcomes.resize(problems.size());
  std::vector<char> single_correct(problems.size(), 0);

  parallel_for(problems.size(), threads, [&](std::size_t i) {
    auto& o = report.outcomes[i];
    o.problem_id = problems[i]->id;
    const auto s = problem_seed(seed, i);
    try {
      const auto baseline = single_shot(problems[i], policy, s);
      const auto result = run_strategy(strategy, problems[i], policy, reward, s);
      o.answer = result.answer;
      o.correct = result.correct.value_or(false);
      o.truncated = result.truncated;
      o.tokens = result.tokens_generated;
      o.single_shot_tokens = baseline.tokens_generated;
      o.token_ratio = baseline.tokens_generated > 0
                          ? static_cast<double>(result.tokens_generated) / baseline.tokens_generated
                          : 0.0;
      o.scores = result.scores;
      single_correct[i] = baseline.correct.value_or(false) ? 1 : 0;
    } catch (const std::exception& e) {
      o.failed = true;
      o.error = e.what();
    }
  });

  std::size_t ok = 0;
  double correct = 0, single = 0, tokens = 0, ratio = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& o = report.outcomes[i];
    if (o.failed) {
      ++report.failures;
      continue;
    }
    ++ok;
    correct += o.correct ? 1 : 0;
    single += single_correct[i];
    tokens += static_cast<double>(o.tokens);
    ratio += o.token_ratio;
  }
  const double n = static_cast<double>(problems.size());
  report.accuracy = correct / n;
  report.single_shot_accuracy = single / n;
  report.mean_tokens = ok ? tokens / ok : 0.0;
  report.mean_token_ratio = ok ? ratio / ok : 0.0;
  return report;
}

std::string report_to_json(const SuiteReport& r) {
  json outcomes = json::array();
  for (const auto& o : r.outcomes) {
    json j{{"problem_id", o.problem_id}, {"failed", o.failed},
           {"correct", o.correct},       {"truncated", o.truncated},
           {"tokens", o.tokens},         {"single_shot_tokens", o.single_shot_tokens},
           {"token_ratio", o.token_ratio}, {"scores", o.scores}};
    j["answer"] = o.answer ? json(*o.answer) : json(nullptr);
    if (o.failed) j["error"] = o.error;
    outcomes.push_back(std::move(j));
  }
  json doc{{"format_version", 1},
           {"strategy", r.strategy},
           {"seed", r.seed},
           {"accuracy", r.accuracy},
           {"single_shot_accuracy", r.single_shot_accuracy},
           {"mean_tokens", r.mean_tokens},
           {"mean_token_ratio", r.mean_token_ratio},
           {"failures", r.failures},
           {"problems", std::move(outcomes)}};
  return doc.dump(1) + "\n";
}

SuiteReport report_from_json(const std::string& text) {
  SuiteReport r;
  try {
    const auto doc = json::parse(text);
    if (doc.value("format_version", 0) != 1) throw VersionError("report format_version != 1");
    r.strategy = doc.at("strategy").get<std::string>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.accuracy = doc.at("accuracy").get<double>();
    r.single_shot_accuracy = doc.at("single_shot_accuracy").get<double>();
    r.mean_tokens = doc.at("mean_tokens").get<double>();
    r.mean_token_ratio = doc.at("mean_token_ratio").get<double>();
    r.failures = doc.at("failures").get<int>();
    for (const auto& j : doc.at("problems")) {
      ProblemOutcome o;
      o.problem_id = j.at("problem_id").get<std::string>();
      o.failed = j.at("failed").get<bool>();
      o.correct = j.at("correct").get<bool>();
      o.truncated = j.at("truncated").get<bool>();
      o.tokens = j.at("tokens").get<std::int64_t>();
      o.single_shot_tokens = j.at("single_shot_tokens").get<std::int64_t>();
      o.token_ratio = j.at("token_ratio").get<double>();
      o.scores = j.at("scores").get<std::vector<double>>();
      if (!j.at("answer").is_null()) o.answer = j.at("answer").get<std::string>();
      o.error = j.value("error", std::string{});
      r.outcomes.push_back(std::move(o));
    }
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 1);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
  return r;
}

std::string report_to_csv(const SuiteReport& r) {
  std::string out = "problem_id,strategy,correct,tokens,token_ratio\n";
  for (const auto& o : r.outcomes) {
    out += o.problem_id;
    out += ",\"" + r.strategy + "\",";
    out += o.correct ? "1" : "0";
    out += "," + std::to_string(o.tokens) + "," + io::format_double(o.token_ratio) + "\n";
  }
  return out;
}

}  // namespace prmbas
