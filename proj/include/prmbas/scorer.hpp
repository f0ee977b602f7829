#pragma once

// Feature map and MLP reward head.
//
// A (state, candidate action) pair is mapped to a fixed-length vector:
//   [ step one-hot (max_steps) | token fraction | key/choice history counts |
//     key/choice candidate one-hot | hashed character n-grams of the action ]
// The key/choice blocks read the "Key: ..." line of a prompt and the
// "choose <word>" phrases of the segments; for text without either they are
// zero and only the generic blocks carry signal.
//
// The head is a tanh MLP with one logit output; predict() returns sigmoid(logit).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prmbas {

struct FeatureSpec {
  int max_steps = 20;
  int segment_length = 30;
  int ngram = 3;
  int ngram_buckets = 64;
  /// Size of the option vocabulary used by the key/choice blocks.
  int vocabulary = 16;

  int history_offset() const { return max_steps + 1; }
  int candidate_offset() const { return history_offset() + vocabulary * vocabulary; }
  int ngram_offset() const { return candidate_offset() + vocabulary * vocabulary; }
  int dim() const { return ngram_offset() + ngram_buckets; }

  void validate() const;
  bool operator==(const FeatureSpec&) const = default;
};

/// `state_text` is the prompt followed by the partial answer; `step_index` is the
/// index t of the candidate action.
std::vector<double> featurize(const FeatureSpec& spec, std::string_view state_text,
                              std::string_view action_text, int action_tokens, int step_index);

/// Prompt and partial answer joined the way datasets store them.
std::string compose_state_text(std::string_view prompt, std::string_view response_text);

class ScorerModel {
 public:
  ScorerModel() = default;
  /// Random initialisation: weights ~ N(0, 1/fan_in), biases 0.
  ScorerModel(FeatureSpec spec, std::vector<int> hidden_dims, std::uint64_t seed);
  ScorerModel(FeatureSpec spec, std::vector<int> hidden_dims, std::vector<double> weights);

  const FeatureSpec& spec() const { return spec_; }
  const std::vector<int>& hidden_dims() const { return hidden_; }
  int feature_dim() const { return spec_.dim(); }
  std::span<const double> weights() const { return weights_; }
  std::span<double> mutable_weights() { return weights_; }
  std::size_t parameter_count() const { return weights_.size(); }

  /// Width of every layer, input first and the scalar output last.
  std::vector<int> layer_widths() const;
  /// Offsets of each layer's weight matrix and bias inside the flat vector.
  struct Block {
    std::size_t weight_offset;
    std::size_t bias_offset;
    int rows;
    int cols;
  };
  std::vector<Block> blocks() const;

  /// Pre-sigmoid output.
  double logit(std::span<const double> features) const;
  double predict(std::span<const double> features) const;

  /// Backpropagate d(loss)/d(logit) = `upstream` into `grad` (accumulating).
  void accumulate_gradient(std::span<const double> features, double upstream,
                           std::span<double> grad) const;

  bool operator==(const ScorerModel&) const = default;

 private:
  static std::size_t count_parameters(const FeatureSpec& spec, const std::vector<int>& hidden);

  FeatureSpec spec_;
  std::vector<int> hidden_;
  std::vector<double> weights_;
};

std::string model_to_json(const ScorerModel& model);
ScorerModel model_from_json(const std::string& text);
void write_model(const ScorerModel& model, const std::filesystem::path& path);
ScorerModel read_model(const std::filesystem::path& path);

double sigmoid(double x);

}  // namespace prmbas
