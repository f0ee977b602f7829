#include "prmbas/prmtrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "prmbas/errors.hpp"
#include "prmbas/io.hpp"
#include "prmbas/seed.hpp"

namespace prmbas {

namespace {
constexpr double kClamp = 1e-12;
constexpr std::uint64_t kInitSalt = 0x696e6974ULL;
constexpr std::uint64_t kShuffleSalt = 0x73687566ULL;

void check_shapes(const Grouped& predictions, const Grouped& targets) {
  if (predictions.size() != targets.size()) throw UsageError("group count mismatch");
  for (std::size_t g = 0; g < predictions.size(); ++g) {
    if (predictions[g].empty()) throw UsageError("empty group");
    if (predictions[g].size() != targets[g].size()) throw UsageError("group size mismatch");
  }
}

double bce(double r, double p) {
  p = std::clamp(p, kClamp, 1.0 - kClamp);
  return -(r * std::log(p) + (1.0 - r) * std::log(1.0 - p));
}

// -log sigmoid(d), stable for large |d|.
double neg_log_sigmoid(double d) { return d >= 0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d)); }

}  // namespace

std::string_view to_string(LabelMode mode) { return mode == LabelMode::soft ? "soft" : "hard"; }

LabelMode label_mode_from_string(std::string_view text) {
  if (text == "soft") return LabelMode::soft;
  if (text == "hard") return LabelMode::hard;
  throw UsageError("unknown label mode: " + std::string(text));
}

void TrainingConfig::validate() const {
  if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
  if (!(delta >= 0.0 && delta < 1.0)) throw UsageError("delta must lie in [0,1)");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw UsageError("learning rate must be finite and >= 0");
  if (!(hard_threshold > 0.0 && hard_threshold < 1.0))
    throw UsageError("hard threshold must lie in (0,1)");
  for (int h : hidden_dims)
    if (h < 1) throw UsageError("hidden widths must be >= 1");
  features.validate();
}

double value_loss(const Grouped& predictions, const Grouped& targets) {
  check_shapes(predictions, targets);
  if (predictions.empty()) throw UsageError("value_loss needs at least one group");
  double outer = 0.0;
  for (std::size_t g = 0; g < predictions.size(); ++g) {
    double inner = 0.0;
    for (std::size_t i = 0; i < predictions[g].size(); ++i)
      inner += bce(targets[g][i], predictions[g][i]);
    outer += inner / predictions[g].size();
  }
  return outer / predictions.size();
}

std::vector<std::pair<int, int>> pair_set(const std::vector<double>& targets, double delta) {
  std::vector<std::pair<int, int>> pairs;
  const int n = static_cast<int>(targets.size());
  for (int m = 0; m < n; ++m)
    for (int k = 0; k < n; ++k)
      if (targets[m] - targets[k] > delta) pairs.emplace_back(m, k);
  return pairs;
}

double rank_loss(const Grouped& predictions, const Grouped& targets, double delta) {
  check_shapes(predictions, targets);
  double outer = 0.0;
  bool any = false;
  for (std::size_t g = 0; g < predictions.size(); ++g) {
    const auto pairs = pair_set(targets[g], delta);
    if (pairs.empty()) continue;
    any = true;
    double inner = 0.0;
    for (auto [m, n] : pairs) inner += neg_log_sigmoid(predictions[g][m] - predictions[g][n]);
    outer += inner / pairs.size();
  }
  return any ? outer / predictions.size() : 0.0;
}

double total_loss(double value, double rank, double lambda) { return value + lambda * rank; }

std::vector<double> apply_label_mode(const std::vector<double>& targets,
                                     const TrainingConfig& config) {
  if (config.label_mode == LabelMode::soft) return targets;
  std::vector<double> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i)
    out[i] = targets[i] > config.hard_threshold ? 1.0 : 0.0;
  return out;
}

std::vector<FeatureGroup> featurize_groups(const std::vector<std::vector<RewardTriplet>>& groups,
                                           const FeatureSpec& spec, const TrainingConfig& config) {
  std::vector<FeatureGroup> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    FeatureGroup fg;
    std::vector<double> raw;
    for (const auto& t : g) {
      fg.features.push_back(
          featurize(spec, t.state_text, t.action_text, t.action_tokens, t.step_index));
      raw.push_back(t.reward);
    }
    fg.targets = apply_label_mode(raw, config);
    out.push_back(std::move(fg));
  }
  return out;
}

namespace {

Grouped predict_groups(const ScorerModel& model, const std::vector<FeatureGroup>& batch) {
  Grouped preds;
  preds.reserve(batch.size());
  for (const auto& g : batch) {
    std::vector<double> p;
    p.reserve(g.features.size());
    for (const auto& f : g.features) {
      const double z = model.logit(f);
      if (!std::isfinite(z)) throw NumericError("non-finite output logit");
      p.push_back(sigmoid(z));
    }
    preds.push_back(std::move(p));
  }
  return preds;
}

Grouped targets_of(const std::vector<FeatureGroup>& batch) {
  Grouped t;
  for (const auto& g : batch) t.push_back(g.targets);
  return t;
}

}  // namespace

LossBreakdown evaluate_loss(const ScorerModel& model, const std::vector<FeatureGroup>& batch,
                            const TrainingConfig& config) {
  const auto preds = predict_groups(model, batch);
  const auto targets = targets_of(batch);
  LossBreakdown l;
  l.value = value_loss(preds, targets);
  l.rank = rank_loss(preds, targets, config.delta);
  l.total = total_loss(l.value, l.rank, config.effective_lambda());
  return l;
}

std::vector<double> loss_gradient(const ScorerModel& model, const std::vector<FeatureGroup>& batch,
                                  const TrainingConfig& config, LossBreakdown* loss) {
  if (batch.empty()) throw UsageError("loss_gradient needs a nonempty batch");
  const auto preds = predict_groups(model, batch);
  const auto targets = targets_of(batch);
  const double lambda = config.effective_lambda();
  const double groups = static_cast<double>(batch.size());

  bool any_pairs = false;
  std::vector<std::vector<std::pair<int, int>>> pairs(batch.size());
  for (std::size_t g = 0; g < batch.size(); ++g) {
    pairs[g] = pair_set(targets[g], config.delta);
    any_pairs = any_pairs || !pairs[g].empty();
  }

  std::vector<double> grad(model.parameter_count(), 0.0);
  for (std::size_t g = 0; g < batch.size(); ++g) {
    const auto& p = preds[g];
    const std::size_t m = p.size();
    // Rank term as d/dp, chained through p = sigmoid(z) below; the BCE term is
    // taken directly in z.
    std::vector<double> dp(m, 0.0);
    if (lambda != 0.0 && any_pairs && !pairs[g].empty()) {
      const double scale = lambda / (groups * pairs[g].size());
      for (auto [a, b] : pairs[g]) {
        const double w = (1.0 - sigmoid(p[a] - p[b])) * scale;
        dp[a] -= w;
        dp[b] += w;
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      double upstream = dp[i] * p[i] * (1.0 - p[i]);
      if (p[i] > kClamp && p[i] < 1.0 - kClamp)
        upstream += (p[i] - targets[g][i]) / (static_cast<double>(m) * groups);
      if (!std::isfinite(upstream)) throw NumericError("non-finite gradient at the output logit");
      model.accumulate_gradient(batch[g].features[i], upstream, grad);
    }
  }

  const auto blocks = model.blocks();
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    const auto w_end = b.weight_offset + static_cast<std::size_t>(b.rows) * b.cols;
    for (auto i = b.weight_offset; i < w_end; ++i)
      if (!std::isfinite(grad[i]))
        throw NumericError("non-finite gradient in layer " + std::to_string(k) + " weights");
    for (auto i = b.bias_offset; i < b.bias_offset + b.rows; ++i)
      if (!std::isfinite(grad[i]))
        throw NumericError("non-finite gradient in layer " + std::to_string(k) + " bias");
  }

  if (loss) {
    loss->value = value_loss(preds, targets);
    loss->rank = rank_loss(preds, targets, config.delta);
    loss->total = total_loss(loss->value, loss->rank, lambda);
  }
  return grad;
}

TrainingResult train(const Dataset& dataset, const TrainingConfig& config) {
  config.validate();
  const auto groups = group_by_state(dataset.triplets);
  if (groups.empty()) throw UsageError("training needs a nonempty dataset");
  if (config.include_rank &&
      std::none_of(groups.begin(), groups.end(), [](const auto& g) { return g.size() > 1; }))
    throw UsageError("rank loss needs at least one multi-candidate group");

  FeatureSpec spec = config.features;
  spec.segment_length = dataset.segment_length;
  const auto data = featurize_groups(groups, spec, config);

  TrainingResult result{ScorerModel(spec, config.hidden_dims, hash64(config.seed, kInitSalt, 0)),
                        {}};
  auto& model = result.model;
  std::vector<std::size_t> order(data.size());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(hash64(config.seed, kShuffleSalt, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      std::vector<FeatureGroup> batch;
      const auto end = std::min(order.size(), start + config.batch_size);
      for (auto i = start; i < end; ++i) batch.push_back(data[order[i]]);
      LossBreakdown l;
      std::vector<double> grad;
      try {
        grad = loss_gradient(model, batch, config, &l);
      } catch (const NumericError& e) {
        throw TrainingError(std::string("diverged: ") + e.what(), epoch, batch_index);
      }
      if (!std::isfinite(l.total))
        throw TrainingError("diverged: non-finite batch loss", epoch, batch_index);
      auto w = model.mutable_weights();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config.learning_rate * grad[i];
      if (!std::all_of(w.begin(), w.end(), [](double x) { return std::isfinite(x); }))
        throw TrainingError("diverged: non-finite weights after update", epoch, batch_index);
    }
    LossBreakdown l;
    try {
      l = evaluate_loss(model, data, config);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("diverged: ") + e.what(), epoch, batch_index);
    }
    if (!std::isfinite(l.total))
      throw TrainingError("diverged: non-finite epoch loss", epoch, batch_index);
    result.history.push_back({epoch + 1, l.value, l.rank, l.total});
  }
  return result;
}

ScorerMetrics evaluate_scorer(const ScorerModel& model, const Dataset& held_out, double delta) {
  return evaluate_predictor(
      [&](const RewardTriplet& t) {
        return model.predict(
            featurize(model.spec(), t.state_text, t.action_text, t.action_tokens, t.step_index));
      },
      held_out, delta);
}

ScorerMetrics evaluate_predictor(const std::function<double(const RewardTriplet&)>& predict,
                                 const Dataset& held_out, double delta) {
  if (held_out.triplets.empty()) throw UsageError("evaluate_scorer needs a nonempty dataset");
  const auto groups = group_by_state(held_out.triplets);
  ScorerMetrics m;
  m.calibration.assign(10, {});

  Grouped preds, targets;
  long double correct = 0.0;
  for (const auto& g : groups) {
    std::vector<double> p, r;
    // Identical candidates are one action; pool their rollouts.
    std::map<std::string, std::pair<double, double>> merged;  // text -> (successes, rollouts)
    std::map<std::string, double> merged_pred;
    for (const auto& t : g) {
      const double pred = predict(t);
      p.push_back(pred);
      r.push_back(t.reward);
      auto& acc = merged[t.action_text];
      acc.first += t.reward * t.n_rollouts;
      acc.second += t.n_rollouts;
      merged_pred[t.action_text] = pred;

      const int bin = std::min(9, static_cast<int>(pred * 10.0));
      auto& c = m.calibration[bin];
      c.mean_prediction += pred;
      c.mean_target += t.reward;
      ++c.count;
    }
    std::vector<double> mr, mp;
    for (const auto& [text, acc] : merged) {
      mr.push_back(acc.first / acc.second);
      mp.push_back(merged_pred[text]);
    }
    for (auto [a, b] : pair_set(mr, delta)) {
      ++m.pair_count;
      correct += mp[a] > mp[b] ? 1.0 : (mp[a] == mp[b] ? 0.5 : 0.0);
    }
    preds.push_back(std::move(p));
    targets.push_back(std::move(r));
  }
  for (auto& c : m.calibration)
    if (c.count > 0) {
      c.mean_prediction /= c.count;
      c.mean_target /= c.count;
    }
  m.value_loss = value_loss(preds, targets);
  m.pairwise_accuracy = m.pair_count > 0 ? static_cast<double>(correct / m.pair_count) : 0.0;
  return m;
}

std::string history_to_csv(const std::vector<EpochLoss>& history) {
  std::string out = "epoch,value_loss,rank_loss,total\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + "," + io::format_double(e.value) + "," +
           io::format_double(e.rank) + "," + io::format_double(e.total) + "\n";
  return out;
}

std::vector<EpochLoss> history_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<EpochLoss> out;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream row(line);
    EpochLoss e;
    char c1, c2, c3;
    if (!(row >> e.epoch >> c1 >> e.value >> c2 >> e.rank >> c3 >> e.total))
      throw ParseError("malformed loss history row", line_no);
    out.push_back(e);
  }
  return out;
}

}  // namespace prmbas
