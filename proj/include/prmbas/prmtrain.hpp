#pragma once

// PRM objective and trainer. Predictions and targets are grouped by state:
// group g holds the candidates of one (problem, step).
//
//   value = mean_g mean_i BCE(r_gi, p_gi)
//   rank  = mean_g mean_{(m,n) in S_g} -log sigmoid(p_gm - p_gn),
//           S_g = {(m,n) : r_gm - r_gn > delta}
//   total = value + lambda * rank
//
// A group with no pairs contributes 0 to the rank term but still counts in its
// denominator; rank is 0 when no group has a pair.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "prmbas/datagen.hpp"
#include "prmbas/scorer.hpp"

namespace prmbas {

using Grouped = std::vector<std::vector<double>>;

enum class LabelMode { soft, hard };
std::string_view to_string(LabelMode mode);
LabelMode label_mode_from_string(std::string_view text);

struct TrainingConfig {
  double lambda = 0.1;
  double delta = 0.3;
  int epochs = 2;
  int batch_size = 4;  // state groups per step
  double learning_rate = 1.0;
  LabelMode label_mode = LabelMode::soft;
  double hard_threshold = 0.5;
  bool include_rank = true;
  std::uint64_t seed = 0;
  std::vector<int> hidden_dims{32};
  FeatureSpec features;

  void validate() const;
  double effective_lambda() const { return include_rank ? lambda : 0.0; }
};

double value_loss(const Grouped& predictions, const Grouped& targets);
std::vector<std::pair<int, int>> pair_set(const std::vector<double>& targets, double delta);
double rank_loss(const Grouped& predictions, const Grouped& targets, double delta);
double total_loss(double value, double rank, double lambda);
std::vector<double> apply_label_mode(const std::vector<double>& targets,
                                     const TrainingConfig& config);

/// Features and (label-mode adjusted) targets of one state group.
struct FeatureGroup {
  std::vector<std::vector<double>> features;
  std::vector<double> targets;
};

std::vector<FeatureGroup> featurize_groups(const std::vector<std::vector<RewardTriplet>>& groups,
                                           const FeatureSpec& spec, const TrainingConfig& config);

struct LossBreakdown {
  double value = 0.0;
  double rank = 0.0;
  double total = 0.0;
};

LossBreakdown evaluate_loss(const ScorerModel& model, const std::vector<FeatureGroup>& batch,
                            const TrainingConfig& config);

/// Analytic gradient of the total loss over `batch`. Throws NumericError naming
/// the parameter block on a non-finite value.
std::vector<double> loss_gradient(const ScorerModel& model, const std::vector<FeatureGroup>& batch,
                                  const TrainingConfig& config, LossBreakdown* loss = nullptr);

struct EpochLoss {
  int epoch = 0;
  double value = 0.0;
  double rank = 0.0;
  double total = 0.0;
};

struct TrainingResult {
  ScorerModel model;
  std::vector<EpochLoss> history;  // full-dataset loss after each epoch
};

/// Mini-batch gradient descent over shuffled state groups. Throws TrainingError
/// with the epoch and batch index when the loss stops being finite.
TrainingResult train(const Dataset& dataset, const TrainingConfig& config);

struct CalibrationBin {
  int count = 0;
  double mean_prediction = 0.0;
  double mean_target = 0.0;
};

struct ScorerMetrics {
  double value_loss = 0.0;
  double pairwise_accuracy = 0.0;
  int pair_count = 0;
  std::vector<CalibrationBin> calibration;  // 10 equal-width bins over [0,1]
};

/// Pairwise accuracy counts pairs whose soft targets differ by more than delta;
/// a tied prediction scores one half. Candidates with identical text in the same
/// state are merged first, pooling their rollouts.
ScorerMetrics evaluate_scorer(const ScorerModel& model, const Dataset& held_out,
                              double delta = 0.3);
/// Same metrics for an arbitrary predictor.
ScorerMetrics evaluate_predictor(const std::function<double(const RewardTriplet&)>& predict,
                                 const Dataset& held_out, double delta = 0.3);

/// Columns: epoch,value_loss,rank_loss,total
std::string history_to_csv(const std::vector<EpochLoss>& history);
std::vector<EpochLoss> history_from_csv(const std::string& text);

}  // namespace prmbas
