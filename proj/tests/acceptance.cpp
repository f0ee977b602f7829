// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "prmbas/datagen.hpp"
#include "prmbas/http_policy.hpp"
#include "prmbas/io.hpp"
#include "prmbas/prmtrain.hpp"
#include "prmbas/search.hpp"
#include "prmbas/seed.hpp"
#include "stub_server.hpp"

using namespace prmbas;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << x;
  return out.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct World {
  std::shared_ptr<const synth::TaskSuite> suite;
  std::shared_ptr<SyntheticPolicy> policy;
  std::shared_ptr<OracleReward> oracle;

  World(std::size_t n, const synth::GeneratorConfig& cfg, std::uint64_t seed) {
    suite = std::make_shared<const synth::TaskSuite>(synth::generate_tasks(n, cfg, seed));
    policy = std::make_shared<SyntheticPolicy>(suite, EngineConfig{});
    oracle = std::make_shared<OracleReward>(suite);
  }
};

// 1. Beam schedule against the closed form.
Verdict schedule_fidelity() {
  std::mt19937_64 rng(1);
  int mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const int eps = 1 + static_cast<int>(uniform_index(rng, 8));
    const int b0 = eps + static_cast<int>(uniform_index(rng, 30));
    // Integer rates and quarter steps keep k*t exact.
    const double k = static_cast<double>(uniform_index(rng, 17)) / 4.0;
    const int t = static_cast<int>(uniform_index(rng, 40));
    const long double want = std::max<long double>(b0 - std::floor(static_cast<long double>(k) * t), eps);
    if (beam_size_at({b0, k, eps, 1}, t) != static_cast<int>(want)) ++mismatches;
  }
  std::vector<int> seq;
  for (int t = 0; t < 14; ++t) seq.push_back(beam_size_at(BasSchedule{}, t));
  const std::vector<int> want{12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 2, 2, 2};
  return {mismatches == 0 && seq == want,
          std::to_string(mismatches) + " mismatches in 10000 draws; default sequence " +
              (seq == want ? "12,11,...,3,2,2" : "wrong")};
}

// 2. Analytic gradient against long double central differences.
Verdict gradient_oracle() {
  FeatureSpec spec;
  spec.max_steps = 4;
  spec.vocabulary = 4;
  spec.ngram_buckets = 8;
  std::mt19937_64 rng(2);
  const double h = 1e-5;
  double worst = 0.0;
  const double lambdas[] = {0.0, 0.1, 1.0};
  const double deltas[] = {0.0, 0.3};
  for (int draw = 0; draw < 100; ++draw) {
    ScorerModel model(spec, {5, 3}, rng());
    const auto batch = testing::random_batch(rng, model.feature_dim());
    TrainingConfig cfg;
    cfg.features = spec;
    cfg.lambda = lambdas[draw % 3];
    cfg.delta = deltas[(draw / 3) % 2];
    const auto grad = loss_gradient(model, batch, cfg);
    std::vector<double> w(model.weights().begin(), model.weights().end());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double w0 = w[i];
      w[i] = w0 + h;
      const auto up = testing::reference_loss(model, w, batch, cfg.lambda, cfg.delta);
      w[i] = w0 - h;
      const auto down = testing::reference_loss(model, w, batch, cfg.lambda, cfg.delta);
      w[i] = w0;
      const double fd = static_cast<double>((up - down) / (2.0L * h));
      const double tol = std::max(1e-5 * std::max(std::abs(fd), std::abs(grad[i])), 1e-8);
      worst = std::max(worst, std::abs(grad[i] - fd) / tol);
    }
  }
  return {worst <= 1.0, "worst error / tolerance " + fmt(worst)};
}

// 3. Full-width BAS under the exact reward against enumeration.
Verdict brute_force_equivalence() {
  synth::GeneratorConfig cfg;
  cfg.min_depth = 1;
  cfg.max_depth = 3;
  cfg.min_branching = 2;
  cfg.max_branching = 3;
  World w(50, cfg, 3);
  int agree = 0;
  for (std::size_t i = 0; i < w.suite->size(); ++i) {
    const auto& task = *w.suite->tasks()[i];
    double best = 0.0;
    for (const auto& e : synth::enumerate_trajectories(task))
      if (e.probability > 0) best = std::max(best, e.correct ? 1.0 : 0.0);
    const int width = std::max(static_cast<int>(std::pow(task.branching, task.depth)), 64);
    const auto r = beam_anneal_search(w.suite->problems()[i], *w.policy, *w.oracle,
                                      {width, 0.0, width, 1}, hash64(3, 0, i));
    const auto pos = synth::position_from_state(w.suite->tasks()[i], r.trajectory);
    const double achieved = pos.at_depth() && synth::leaf_correct(task, pos.branch_history) ? 1.0 : 0.0;
    agree += achieved == best;
  }
  return {agree == 50, std::to_string(agree) + "/50 tasks reach the enumerated optimum"};
}

// 4 and 5. Strategy ordering and token parity on the default suite.
std::pair<Verdict, Verdict> ordering_and_parity() {
  int ordered = 0, parity = 0;
  std::string detail4, detail5;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    World w(200, synth::GeneratorConfig{}, seed);
    const auto problems = w.suite->problems();
    StrategyDescriptor bas;
    StrategyDescriptor step;
    step.kind = StrategyKind::step_bon;
    StrategyDescriptor bon;
    bon.kind = StrategyKind::bon;
    const auto rb = run_suite(problems, bas, *w.policy, *w.oracle, seed);
    const auto rs = run_suite(problems, step, *w.policy, *w.oracle, seed);
    const auto rn = run_suite(problems, bon, *w.policy, *w.oracle, seed);
    const bool matched = std::abs(rb.mean_token_ratio / rn.mean_token_ratio - 1.0) <= 0.1;
    const bool ok = rb.accuracy >= rs.accuracy && rs.accuracy >= rb.single_shot_accuracy &&
                    rb.accuracy >= rn.accuracy && matched && rb.failures == 0;
    ordered += ok;
    const bool in_range = rb.mean_token_ratio >= 6.0 && rb.mean_token_ratio <= 10.0;
    parity += in_range;
    detail4 += " s" + std::to_string(seed) + ":" + fmt(rb.accuracy, 3) + "/" + fmt(rs.accuracy, 3) +
               "/" + fmt(rn.accuracy, 3) + "/" + fmt(rb.single_shot_accuracy, 3) + (ok ? "" : "!");
    detail5 += " " + fmt(rb.mean_token_ratio, 3) + "(bon " + fmt(rn.mean_token_ratio, 3) + ")";
  }
  return {{ordered >= 4, std::to_string(ordered) + "/5 seeds ordered; bas/step-bon8/bon8/single" + detail4},
          {parity == 5, "bas token ratio per seed" + detail5}};
}

// 6. Dataset invariants and estimator convergence.
Verdict data_construction() {
  synth::GeneratorConfig cfg;
  World w(50, cfg, 6);
  const auto problems = w.suite->problems();
  const SamplingSchedule schedule;
  std::vector<ConstructionResult> results(problems.size());
  parallel_for(problems.size(), 8, [&](std::size_t i) {
    results[i] = construct_for_problem(problems[i], *w.policy, schedule, hash64(6, 1, i));
  });

  int bad_quanta = 0, bad_balance = 0, bad_chosen = 0, groups_seen = 0;
  for (const auto& r : results) {
    if (r.error) return {false, "construction failed: " + *r.error};
    for (const auto& g : group_by_state(r.triplets)) {
      ++groups_seen;
      int pos = 0, chosen = 0;
      for (const auto& t : g) {
        const double c = t.reward * t.n_rollouts;
        bad_quanta += std::abs(c - std::round(c)) > 1e-9;
        pos += t.reward > 0.5;
        chosen += t.chosen;
      }
      const int neg = static_cast<int>(g.size()) - pos;
      const bool balanced = pos > 0 && neg > 0 ? std::max(pos, neg) <= 3 * std::min(pos, neg)
                                               : g.size() <= 3;
      bad_balance += !balanced;
      bad_chosen += chosen != 1;
    }
  }

  // Estimator error against the exact value along the constructed trajectories.
  struct Probe {
    TrajectoryState state;
    ActionSegment action;
    double truth;
  };
  std::vector<Probe> probes;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& traj = results[i].trajectory;
    auto state = w.policy->root(problems[i]);
    for (const auto& seg : traj.segments()) {
      const auto next = append_action(state, seg);
      const double truth =
          synth::true_success_prob(synth::position_from_state(w.suite->tasks()[i], next));
      if (!next.finished() && truth > 0.02 && truth < 0.98) probes.push_back({state, seg, truth});
      state = next;
    }
  }
  std::vector<double> xs, ys;
  std::string rmse_detail;
  for (int n : {8, 64, 512}) {
    std::vector<double> sq(probes.size());
    parallel_for(probes.size(), 8, [&](std::size_t j) {
      double acc = 0.0;
      for (int rep = 0; rep < 4; ++rep) {
        const auto est = estimate_action_reward(probes[j].state, probes[j].action, *w.policy, n,
                                                hash64(600 + n, rep, j));
        acc += (est.reward - probes[j].truth) * (est.reward - probes[j].truth);
      }
      sq[j] = acc / 4;
    });
    const double rmse = std::sqrt(std::accumulate(sq.begin(), sq.end(), 0.0) / sq.size());
    xs.push_back(std::log(n));
    ys.push_back(std::log(rmse));
    rmse_detail += " " + fmt(rmse, 3);
  }
  const double xm = (xs[0] + xs[1] + xs[2]) / 3, ym = (ys[0] + ys[1] + ys[2]) / 3;
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 3; ++i) {
    sxy += (xs[i] - xm) * (ys[i] - ym);
    sxx += (xs[i] - xm) * (xs[i] - xm);
  }
  const double slope = sxy / sxx;
  const bool ok = bad_quanta == 0 && bad_balance == 0 && bad_chosen == 0 &&
                  std::abs(slope + 0.5) <= 0.15;
  return {ok, std::to_string(groups_seen) + " groups, violations quanta/balance/chosen " +
                  std::to_string(bad_quanta) + "/" + std::to_string(bad_balance) + "/" +
                  std::to_string(bad_chosen) + "; " + std::to_string(probes.size()) +
                  " probes, rmse" + rmse_detail + ", slope " + fmt(slope, 3)};
}

// 7. Variance and mean of step rewards by length bucket.
Verdict step_statistics() {
  synth::GeneratorConfig cfg;
  cfg.min_depth = 3;
  cfg.max_depth = 6;
  World w(1000, cfg, 7);
  const auto ds = construct_dataset(w.suite->problems(), *w.policy, SamplingSchedule{}, 7);
  if (!ds.failures.empty()) return {false, "construction failures"};
  const auto stats = step_bucket_stats(ds, ds.segment_length);
  bool ok = true;
  std::string detail;
  for (int bucket = 3; bucket <= 6; ++bucket) {
    std::vector<StepBucketStats> rows;
    for (const auto& s : stats)
      if (s.bucket == bucket) rows.push_back(s);
    if (rows.size() < 2) {
      ok = false;
      detail += " bucket " + std::to_string(bucket) + " missing;";
      continue;
    }
    bool monotone = true;
    for (std::size_t i = 1; i < rows.size(); ++i) monotone = monotone && rows[i].mean >= rows[i - 1].mean;
    const bool shrinks = rows.front().variance > rows.back().variance;
    ok = ok && monotone && shrinks;
    detail += " n=" + std::to_string(bucket) + ": var " + fmt(rows.front().variance, 3) + "->" +
              fmt(rows.back().variance, 3) + ", mean " + fmt(rows.front().mean, 3) + "->" +
              fmt(rows.back().mean, 3) + (monotone ? "" : " (non-monotone)") + ";";
  }
  return {ok, detail};
}

// First `limit` triplets, cut at a state-group boundary.
Dataset truncate_groups(const Dataset& ds, std::size_t limit) {
  Dataset out;
  out.segment_length = ds.segment_length;
  for (const auto& g : group_by_state(ds.triplets)) {
    if (out.triplets.size() + g.size() > limit) break;
    out.triplets.insert(out.triplets.end(), g.begin(), g.end());
  }
  return out;
}

Dataset build_dataset(std::size_t tasks, const synth::GeneratorConfig& cfg, std::uint64_t seed) {
  World w(tasks, cfg, seed);
  return construct_dataset(w.suite->problems(), *w.policy, SamplingSchedule{}, seed);
}

// 8. A scorer trained on constructed data ranks held-out steps and helps search.
Verdict learned_prm() {
  std::vector<double> accs, gains;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto train_set = truncate_groups(build_dataset(80, {}, 800 + seed), 2000);
    const auto held_out = build_dataset(30, {}, 900 + seed);
    TrainingConfig cfg;
    cfg.seed = seed;
    const auto model = std::make_shared<const ScorerModel>(train(train_set, cfg).model);
    accs.push_back(evaluate_scorer(*model, held_out).pairwise_accuracy);

    World w(200, synth::GeneratorConfig{}, 1000 + seed);
    LearnedReward reward(model);
    const auto r = run_suite(w.suite->problems(), StrategyDescriptor{}, *w.policy, reward, seed);
    gains.push_back(r.accuracy - r.single_shot_accuracy);
    detail += " s" + std::to_string(seed) + ":" + std::to_string(train_set.triplets.size()) +
              "tr acc " + fmt(accs.back(), 3) + " gain " + fmt(gains.back(), 3) + ";";
  }
  const double acc = median(accs), gain = median(gains);
  return {acc >= 0.9 && gain >= 0.05,
          "median pairwise accuracy " + fmt(acc, 3) + ", median gain " + fmt(gain, 3) + ";" + detail};
}

// 9. Soft against hard labels, and the rank term against none.
Verdict ablations() {
  synth::GeneratorConfig cfg;
  cfg.recovery_prob = 0.3;
  std::vector<double> diffs, rank_gain;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto train_set = build_dataset(200, cfg, 1100 + seed);
    const auto held_out = build_dataset(100, cfg, 1200 + seed);
    TrainingConfig soft;
    soft.seed = seed;
    soft.learning_rate = 0.1;
    soft.epochs = 10;
    TrainingConfig hard = soft;
    hard.label_mode = LabelMode::hard;
    TrainingConfig no_rank = soft;
    no_rank.lambda = 0.0;
    const auto ms = evaluate_scorer(train(train_set, soft).model, held_out);
    const auto mh = evaluate_scorer(train(train_set, hard).model, held_out);
    const auto m0 = evaluate_scorer(train(train_set, no_rank).model, held_out);
    diffs.push_back(mh.value_loss - ms.value_loss);
    rank_gain.push_back(ms.pairwise_accuracy - m0.pairwise_accuracy);
    detail += " s" + std::to_string(seed) + ": soft " + fmt(ms.value_loss) + " hard " +
              fmt(mh.value_loss) + ", acc " + fmt(ms.pairwise_accuracy) + " vs " +
              fmt(m0.pairwise_accuracy) + ";";
  }
  const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / diffs.size();
  double ss = 0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double se = std::sqrt(ss / (diffs.size() - 1) / diffs.size());
  const double rank_median = median(rank_gain);
  return {mean >= 2 * se && mean > 0 && rank_median >= 0.0,
          "hard-soft value loss " + fmt(mean) + " (se " + fmt(se) + "), median accuracy gain of rank term " +
              fmt(rank_median) + ";" + detail};
}

// 10. Wire format, parsing and ordering under delays against a local stub.
Verdict http_conformance() {
  const auto fixture = [](const std::string& name) {
    return io::read_file(std::string(PRMBAS_FIXTURES) + "/http/" + name);
  };
  auto problem = std::make_shared<const Problem>(
      Problem{"q1", "What is 17 + 25? Reply with a number.", std::nullopt, "42", ProblemSource::ingested});
  EngineConfig cfg;
  const auto root = initial_state(problem, cfg);
  const auto partial = append_action(
      root, {"First add the tens: 10 + 20 = 30. Then the ones: 7 + 5 = 12, so 30 + 12.", 30, false});

  testing::StubServer server([&](const std::string&, int) {
    return testing::StubReply{200, fixture("response_three.json")};
  });
  PolicyDescriptor d;
  d.kind = PolicyKind::http;
  d.endpoint = server.endpoint();
  d.model_name = "stub-model";
  HttpPolicy policy(d, cfg);
  const auto segs = policy.sample_continuations(root, 3, 123456789);
  bool ok = server.bodies().size() == 1 && server.bodies()[0] == fixture("request_root.json");
  ok = ok && build_request_body(d, cfg, partial, 2, (std::uint64_t{1} << 40) + 5) == fixture("request_prefix.json");
  ok = ok && segs.size() == 3 && segs[0].token_count == 30 && !segs[0].terminal &&
       segs[2].text == "Final answer: 41" && segs[2].terminal;
  const bool wire = ok;

  // Delays derived from the request; candidates must come back in index order.
  std::atomic<bool> delays{false};
  testing::StubServer slow([&](const std::string& body, int) {
    const auto doc = nlohmann::json::parse(body);
    const int n = doc.at("n").get<int>();
    const auto seed = doc.at("seed").get<std::uint64_t>();
    nlohmann::json choices = nlohmann::json::array();
    for (int i = n - 1; i >= 0; --i)
      choices.push_back({{"index", i},
                         {"message", {{"role", "assistant"},
                                      {"content", "Final answer: " + std::to_string(hash64(seed, 0, i) % 50)}}},
                         {"finish_reason", "stop"}});
    const int delay = delays ? static_cast<int>(hash64(seed, 1, 0) % 30) : 0;
    return testing::StubReply{200, nlohmann::json{{"choices", choices}}.dump(), delay};
  });
  auto ds = d;
  ds.endpoint = slow.endpoint();
  ds.concurrency_limit = 8;
  HttpPolicy slow_policy(ds, cfg);
  std::vector<std::vector<ActionSegment>> calm(16), noisy(16);
  parallel_for(16, 8, [&](std::size_t i) { calm[i] = slow_policy.sample_continuations(root, 5, i); });
  delays = true;
  parallel_for(16, 8, [&](std::size_t i) { noisy[i] = slow_policy.sample_continuations(root, 5, i); });
  const bool ordering = calm == noisy;
  return {wire && ordering, std::string("wire format ") + (wire ? "exact" : "MISMATCH") +
                                ", ordering under delays " + (ordering ? "stable" : "CHANGED")};
}

}  // namespace

int main() {
  using Clock = std::chrono::steady_clock;
  int failures = 0;
  auto report = [&](int id, const char* name, const Verdict& v, double seconds) {
    std::cout << "criterion " << id << " (" << name << "): " << (v.pass ? "PASS" : "FAIL") << " ["
              << fmt(seconds, 3) << " s] " << v.detail << std::endl;
    failures += !v.pass;
  };
  auto timed = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, v, std::chrono::duration<double>(Clock::now() - t0).count());
  };

  timed(1, "schedule fidelity", schedule_fidelity);
  timed(2, "gradient oracle", gradient_oracle);
  timed(3, "brute-force equivalence", brute_force_equivalence);
  {
    const auto t0 = Clock::now();
    std::pair<Verdict, Verdict> v;
    try {
      v = ordering_and_parity();
    } catch (const std::exception& e) {
      v.first = v.second = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    report(4, "strategy ordering", v.first, s);
    report(5, "token parity", v.second, s);
  }
  timed(6, "data construction", data_construction);
  timed(7, "step statistics", step_statistics);
  timed(8, "learned scorer", learned_prm);
  timed(9, "label and rank ablations", ablations);
  timed(10, "http conformance", http_conformance);

  std::cout << (failures == 0 ? "all criteria PASS" : std::to_string(failures) + " criteria FAIL")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
