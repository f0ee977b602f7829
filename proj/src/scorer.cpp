#include "prmbas/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "prmbas/errors.hpp"
#include "prmbas/io.hpp"
#include "prmbas/kernels.hpp"
#include "prmbas/synthenv.hpp"

namespace prmbas {

using nlohmann::json;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void FeatureSpec::validate() const {
  if (max_steps < 1 || segment_length < 1 || ngram < 1 || ngram_buckets < 1 || vocabulary < 2 ||
      vocabulary > synth::kMaxBranching)
    throw UsageError("invalid feature spec");
}

namespace {

int vocab_index(std::string_view word, int vocabulary) {
  for (int i = 0; i < vocabulary; ++i)
    if (word == synth::option_word(i)) return i;
  return -1;
}

std::vector<int> parse_key(std::string_view text, int vocabulary) {
  std::vector<int> key;
  const auto pos = text.find("Key: ");
  if (pos == std::string_view::npos) return key;
  auto rest = text.substr(pos + 5);
  rest = rest.substr(0, rest.find_first_of(".\n"));
  while (!rest.empty()) {
    const auto sp = rest.find(' ');
    key.push_back(vocab_index(rest.substr(0, sp), vocabulary));
    if (sp == std::string_view::npos) break;
    rest.remove_prefix(sp + 1);
  }
  return key;
}

std::vector<int> parse_choices(std::string_view text, int vocabulary) {
  std::vector<int> out;
  std::size_t pos = 0;
  while ((pos = text.find("choose ", pos)) != std::string_view::npos) {
    pos += 7;
    auto word = text.substr(pos);
    word = word.substr(0, word.find_first_of(". \n"));
    out.push_back(vocab_index(word, vocabulary));
  }
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string compose_state_text(std::string_view prompt, std::string_view response_text) {
  std::string out(prompt);
  out += '\n';
  out += response_text;
  return out;
}

std::vector<double> featurize(const FeatureSpec& spec, std::string_view state_text,
                              std::string_view action_text, int action_tokens, int step_index) {
  std::vector<double> f(static_cast<std::size_t>(spec.dim()), 0.0);
  const int step = std::clamp(step_index, 0, spec.max_steps - 1);
  f[step] = 1.0;
  f[spec.max_steps] = static_cast<double>(action_tokens) / spec.segment_length;

  const int v = spec.vocabulary;
  const auto key = parse_key(state_text, v);
  const auto history = parse_choices(state_text, v);
  for (std::size_t u = 0; u < history.size() && u < key.size(); ++u)
    if (key[u] >= 0 && history[u] >= 0)
      f[spec.history_offset() + key[u] * v + history[u]] += 1.0;

  const auto candidate = parse_choices(action_text, v);
  const std::size_t u = history.size();
  if (!candidate.empty() && u < key.size() && key[u] >= 0 && candidate.front() >= 0)
    f[spec.candidate_offset() + key[u] * v + candidate.front()] = 1.0;

  if (static_cast<int>(action_text.size()) >= spec.ngram) {
    const std::size_t count = action_text.size() - spec.ngram + 1;
    const double w = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto b = fnv1a(action_text.substr(i, spec.ngram)) % spec.ngram_buckets;
      f[spec.ngram_offset() + b] += w;
    }
  }
  return f;
}

std::size_t ScorerModel::count_parameters(const FeatureSpec& spec,
                                          const std::vector<int>& hidden) {
  std::size_t n = 0;
  int in = spec.dim();
  for (int h : hidden) {
    n += static_cast<std::size_t>(h) * in + h;
    in = h;
  }
  return n + in + 1;
}

ScorerModel::ScorerModel(FeatureSpec spec, std::vector<int> hidden_dims, std::uint64_t seed)
    : spec_(spec), hidden_(std::move(hidden_dims)) {
  spec_.validate();
  for (int h : hidden_)
    if (h < 1) throw UsageError("hidden widths must be >= 1");
  weights_.assign(count_parameters(spec_, hidden_), 0.0);
  std::mt19937_64 rng(seed);
  for (const auto& b : blocks()) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(b.cols)));
    for (int i = 0; i < b.rows * b.cols; ++i) weights_[b.weight_offset + i] = dist(rng);
  }
}

ScorerModel::ScorerModel(FeatureSpec spec, std::vector<int> hidden_dims,
                         std::vector<double> weights)
    : spec_(spec), hidden_(std::move(hidden_dims)), weights_(std::move(weights)) {
  spec_.validate();
  if (weights_.size() != count_parameters(spec_, hidden_))
    throw ValidationError("weight count " + std::to_string(weights_.size()) +
                          " does not match architecture (" +
                          std::to_string(count_parameters(spec_, hidden_)) + ")");
}

std::vector<int> ScorerModel::layer_widths() const {
  std::vector<int> w{spec_.dim()};
  w.insert(w.end(), hidden_.begin(), hidden_.end());
  w.push_back(1);
  return w;
}

std::vector<ScorerModel::Block> ScorerModel::blocks() const {
  std::vector<Block> out;
  const auto widths = layer_widths();
  std::size_t offset = 0;
  for (std::size_t l = 1; l < widths.size(); ++l) {
    Block b{offset, offset + static_cast<std::size_t>(widths[l]) * widths[l - 1], widths[l],
            widths[l - 1]};
    offset = b.bias_offset + widths[l];
    out.push_back(b);
  }
  return out;
}

double ScorerModel::logit(std::span<const double> features) const {
  if (static_cast<int>(features.size()) != spec_.dim())
    throw UsageError("feature vector has wrong length");
  std::vector<double> a(features.begin(), features.end());
  std::vector<double> z;
  const auto bl = blocks();
  const std::span<const double> w(weights_);
  for (std::size_t l = 0; l < bl.size(); ++l) {
    const auto& b = bl[l];
    z.assign(b.rows, 0.0);
    kernels::gemv(w.subspan(b.weight_offset, static_cast<std::size_t>(b.rows) * b.cols),
                  w.subspan(b.bias_offset, b.rows), a, z);
    if (l + 1 < bl.size())
      for (auto& x : z) x = std::tanh(x);
    a.swap(z);
  }
  return a[0];
}

double ScorerModel::predict(std::span<const double> features) const {
  return sigmoid(logit(features));
}

void ScorerModel::accumulate_gradient(std::span<const double> features, double upstream,
                                      std::span<double> grad) const {
  if (grad.size() != weights_.size()) throw UsageError("gradient buffer has wrong length");
  const auto bl = blocks();
  const std::span<const double> w(weights_);
  std::vector<std::vector<double>> acts;
  acts.emplace_back(features.begin(), features.end());
  for (std::size_t l = 0; l < bl.size(); ++l) {
    const auto& b = bl[l];
    std::vector<double> z(b.rows);
    kernels::gemv(w.subspan(b.weight_offset, static_cast<std::size_t>(b.rows) * b.cols),
                  w.subspan(b.bias_offset, b.rows), acts.back(), z);
    if (l + 1 < bl.size())
      for (auto& x : z) x = std::tanh(x);
    acts.push_back(std::move(z));
  }

  std::vector<double> delta{upstream};
  for (std::size_t l = bl.size(); l-- > 0;) {
    const auto& b = bl[l];
    const auto& input = acts[l];
    const std::size_t wsize = static_cast<std::size_t>(b.rows) * b.cols;
    kernels::ger(1.0, delta, input, grad.subspan(b.weight_offset, wsize));
    kernels::axpy(1.0, delta, grad.subspan(b.bias_offset, b.rows));
    if (l == 0) break;
    std::vector<double> back(b.cols, 0.0);
    kernels::gemv_t_acc(w.subspan(b.weight_offset, wsize), delta, back);
    for (int i = 0; i < b.cols; ++i) back[i] *= 1.0 - input[i] * input[i];
    delta.swap(back);
  }
}

std::string model_to_json(const ScorerModel& model) {
  const auto& s = model.spec();
  json doc{{"format_version", 1},
           {"feature", {{"kind", "key-choice-ngram"},
                        {"max_steps", s.max_steps},
                        {"segment_length", s.segment_length},
                        {"ngram", s.ngram},
                        {"ngram_buckets", s.ngram_buckets},
                        {"vocabulary", s.vocabulary}}},
           {"hidden_dims", model.hidden_dims()},
           {"weights", io::encode_doubles(model.weights())}};
  return doc.dump(1) + "\n";
}

ScorerModel model_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 1);
  }
  if (doc.value("format_version", 0) != 1) throw VersionError("checkpoint format_version != 1");
  try {
    const auto& f = doc.at("feature");
    if (f.at("kind") != "key-choice-ngram")
      throw ValidationError("checkpoint: unknown feature kind " + f.at("kind").dump());
    FeatureSpec spec;
    spec.max_steps = f.at("max_steps").get<int>();
    spec.segment_length = f.at("segment_length").get<int>();
    spec.ngram = f.at("ngram").get<int>();
    spec.ngram_buckets = f.at("ngram_buckets").get<int>();
    spec.vocabulary = f.at("vocabulary").get<int>();
    return ScorerModel(spec, doc.at("hidden_dims").get<std::vector<int>>(),
                       io::decode_doubles(doc.at("weights").get<std::string>()));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

void write_model(const ScorerModel& model, const std::filesystem::path& path) {
  io::write_file(path, model_to_json(model));
}

ScorerModel read_model(const std::filesystem::path& path) {
  return model_from_json(io::read_file(path));
}

}  // namespace prmbas
