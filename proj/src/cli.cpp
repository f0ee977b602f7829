#include "prmbas/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <istream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prmbas/backends.hpp"
#include "prmbas/datagen.hpp"
#include "prmbas/errors.hpp"
#include "prmbas/io.hpp"
#include "prmbas/prmtrain.hpp"
#include "prmbas/search.hpp"
#include "prmbas/synthenv.hpp"

namespace prmbas::cli {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const UsageError*>(&error)) return kUsage;
  if (dynamic_cast<const BackendError*>(&error) || dynamic_cast<const ProtocolError*>(&error))
    return kBackend;
  if (dynamic_cast<const ParseError*>(&error) || dynamic_cast<const VersionError*>(&error) ||
      dynamic_cast<const ValidationError*>(&error) || dynamic_cast<const SizeError*>(&error))
    return kDataValidation;
  if (dynamic_cast<const TrainingError*>(&error) || dynamic_cast<const NumericError*>(&error))
    return kDivergence;
  return kFailure;
}

std::string manifest_to_json(const RunManifest& m) {
  json config = json::object();
  for (const auto& [k, v] : m.config) config[k] = v;
  auto files = [](const std::vector<FileRecord>& records) {
    json a = json::array();
    for (const auto& r : records) a.push_back({{"path", r.path}, {"sha256", r.sha256}});
    return a;
  };
  json doc{{"format_version", 1},  {"command", m.command},          {"config", config},
           {"seed", m.seed},       {"inputs", files(m.inputs)},     {"outputs", files(m.outputs)},
           {"started", m.started}, {"finished", m.finished}};
  return doc.dump(1) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  RunManifest m;
  try {
    const auto doc = json::parse(text);
    if (doc.value("format_version", 0) != 1) throw VersionError("manifest format_version != 1");
    m.command = doc.at("command").get<std::string>();
    for (const auto& [k, v] : doc.at("config").items()) m.config.emplace_back(k, v.get<std::string>());
    m.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& r : doc.at("inputs")) m.inputs.push_back({r.at("path"), r.at("sha256")});
    for (const auto& r : doc.at("outputs")) m.outputs.push_back({r.at("path"), r.at("sha256")});
    m.started = doc.at("started").get<std::string>();
    m.finished = doc.at("finished").get<std::string>();
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 1);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  return m;
}

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// JSON config files. Top-level scalars apply to the selected command; an object
// keyed by a command name applies to that command. A run manifest is accepted
// as well, replaying its recorded options.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json doc;
    try {
      doc = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CLI::ConversionError("config must be a JSON object");
    const auto selected = root_->get_subcommands();
    const std::string active = selected.empty() ? std::string{} : selected.front()->get_name();

    if (doc.contains("command") && doc.contains("config")) {
      if (doc["command"] != active)
        throw CLI::ConversionError("manifest was written by '" + doc["command"].get<std::string>() +
                                   "', not '" + active + "'");
      doc = doc["config"];
    }
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : doc.items()) {
      if (value.is_object()) {
        for (const auto& [k, v] : value.items()) items.push_back(item({key}, k, v));
      } else if (!active.empty()) {
        items.push_back(item({active}, key, value));
      }
    }
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  }

  static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& name,
                              const json& value) {
    CLI::ConfigItem it;
    it.parents = std::move(parents);
    it.name = name;
    if (value.is_array())
      for (const auto& v : value) it.inputs.push_back(scalar(v));
    else
      it.inputs.push_back(scalar(value));
    return it;
  }

  const CLI::App* root_;
};

struct EngineOptions {
  int segment_length = 30;
  int max_steps = 20;
  std::string policy = "synthetic";
  std::string endpoint;
  std::string model_name;
  double temperature = 0.7;
  int concurrency = 1;
  int timeout_ms = 60'000;
  bool no_assistant_prefix = false;
  std::string replay_script;
  int threads = 0;
  std::uint64_t seed = 0;
};

void add_engine_options(CLI::App* sub, EngineOptions& o) {
  sub->add_option("--segment-length", o.segment_length, "Tokens per action segment");
  sub->add_option("--max-steps", o.max_steps, "Step cap per trajectory");
  sub->add_option("--policy", o.policy, "synthetic | replay | http");
  sub->add_option("--endpoint", o.endpoint, "Chat-completions URL (http policy)");
  sub->add_option("--model-name", o.model_name, "Model name sent to the endpoint");
  sub->add_option("--temperature", o.temperature, "Sampling temperature (http policy)");
  sub->add_option("--concurrency", o.concurrency, "Concurrent requests per beam step");
  sub->add_option("--timeout-ms", o.timeout_ms, "Per-request timeout");
  sub->add_flag("--no-assistant-prefix", o.no_assistant_prefix,
                "Put the partial answer in the user turn");
  sub->add_option("--replay-script", o.replay_script, "Recorded generations (replay policy)");
  sub->add_option("--threads", o.threads, "Worker threads, 0 = all cores");
  sub->add_option("--seed", o.seed, "Root seed");
}

EngineConfig engine_config(const EngineOptions& o) {
  EngineConfig c;
  c.segment_length = o.segment_length;
  c.max_steps = o.max_steps;
  c.validate();
  return c;
}

PolicyPtr make_policy_from(const EngineOptions& o, BackendContext& context) {
  PolicyDescriptor d;
  d.kind = policy_kind_from_string(o.policy);
  d.endpoint = o.endpoint;
  d.model_name = o.model_name;
  d.temperature = o.temperature;
  d.concurrency_limit = o.concurrency;
  d.timeout_ms = o.timeout_ms;
  d.assistant_prefix = !o.no_assistant_prefix;
  if (const char* token = std::getenv(kTokenVariable); token && *token) d.bearer_token = token;
  if (d.kind == PolicyKind::replay) {
    if (o.replay_script.empty()) throw UsageError("--replay-script is required for --policy replay");
    context.replay_script = ReplayPolicy::script_from_json(io::read_file(o.replay_script));
  }
  return make_policy(d, engine_config(o), context);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

FileRecord record(const fs::path& path) { return {path.string(), io::sha256_file(path)}; }

std::vector<std::pair<std::string, std::string>> snapshot(const CLI::App* sub) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const CLI::Option* opt : sub->get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "manifest") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      for (std::size_t i = 0; i < r.size(); ++i) value += (i ? "," : "") + r[i];
      if (opt->get_type_size() == 0 && value.empty()) value = "true";
    } else {
      value = opt->get_default_str();
    }
    out.emplace_back(name, value);
  }
  std::sort(out.begin(), out.end());
  return out;
}

class Command {
 public:
  Command(CLI::App* sub, std::string name) : sub_(sub), name_(std::move(name)) {
    sub_->add_option("--manifest", manifest_path_, "Manifest path (default: <out>.manifest.json)");
  }
  virtual ~Command() = default;
  CLI::App* app() const { return sub_; }

  int execute(std::ostream& out) {
    RunManifest m;
    m.command = name_;
    m.started = utc_now();
    m.config = snapshot(sub_);
    const int code = run(out, m);
    m.finished = utc_now();
    fs::path path = manifest_path_.empty() ? fs::path(m.outputs.at(0).path + ".manifest.json")
                                           : fs::path(manifest_path_);
    io::write_file(path, manifest_to_json(m));
    return code;
  }

 protected:
  virtual int run(std::ostream& out, RunManifest& manifest) = 0;

  CLI::App* sub_;
  std::string name_;
  std::string manifest_path_;
};

std::shared_ptr<const synth::TaskSuite> load_suite(const std::string& path, RunManifest& m) {
  require(path, "--tasks");
  auto suite = std::make_shared<const synth::TaskSuite>(synth::read_suite(path));
  m.inputs.push_back(record(path));
  return suite;
}

class GenTasks final : public Command {
 public:
  explicit GenTasks(CLI::App* sub) : Command(sub, "gen-tasks") {
    sub->add_option("--count", count_, "Number of tasks");
    sub->add_option("--min-depth", config_.min_depth);
    sub->add_option("--max-depth", config_.max_depth);
    sub->add_option("--min-branching", config_.min_branching);
    sub->add_option("--max-branching", config_.max_branching);
    sub->add_option("--profile", profile_, "shaped | flat slip profile");
    sub->add_option("--recovery", config_.recovery_prob, "Chance an off-path final step recovers");
    sub->add_option("--seed", seed_, "Root seed");
    sub->add_option("--out", out_, "Suite JSON path");
  }

 protected:
  int run(std::ostream& out, RunManifest& m) override {
    require(out_, "--out");
    if (count_ < 1) throw UsageError("--count must be >= 1");
    config_.profile = synth::variance_profile_from_string(profile_);
    const auto tasks = synth::generate_tasks(static_cast<std::size_t>(count_), config_, seed_);
    synth::write_suite(tasks, out_);
    m.seed = seed_;
    m.outputs.push_back(record(out_));
    out << "wrote " << tasks.size() << " tasks to " << out_ << "\n";
    return kOk;
  }

 private:
  int count_ = 200;
  synth::GeneratorConfig config_;
  std::string profile_ = "shaped";
  std::uint64_t seed_ = 0;
  std::string out_;
};

class ConstructData final : public Command {
 public:
  explicit ConstructData(CLI::App* sub) : Command(sub, "construct-data") {
    add_engine_options(sub, engine_);
    sub->add_option("--tasks", tasks_, "Suite JSON");
    sub->add_option("--early-m", early_.candidates, "Candidates per early step");
    sub->add_option("--early-n", early_.rollouts, "Rollouts per early candidate");
    sub->add_option("--cutoff", cutoff_, "Number of early steps");
    sub->add_option("--tail-m", tail_.candidates, "Candidates per later step");
    sub->add_option("--tail-n", tail_.rollouts, "Rollouts per later candidate");
    sub->add_option("--out", out_, "Dataset JSONL path");
    sub->add_option("--stats", stats_, "Step statistics CSV (default: <out>.stats.csv)");
  }

 protected:
  int run(std::ostream& out, RunManifest& m) override {
    require(out_, "--out");
    BackendContext context;
    context.suite = load_suite(tasks_, m);
    const auto policy = make_policy_from(engine_, context);
    SamplingSchedule schedule;
    schedule.early.assign(std::max(cutoff_, 0), early_);
    schedule.tail = tail_;

    const auto problems = context.suite->problems();
    const auto ds = construct_dataset(problems, *policy, schedule, engine_.seed, engine_.threads);
    write_dataset(ds, out_);
    const auto stats_path = stats_.empty() ? out_ + ".stats.csv" : stats_;
    io::write_file(stats_path, stats_to_csv(ds.triplets.empty()
                                                ? std::vector<StepBucketStats>{}
                                                : step_bucket_stats(ds, ds.segment_length)));
    m.seed = engine_.seed;
    m.outputs.push_back(record(out_));
    m.outputs.push_back(record(stats_path));

    out << "triplets " << ds.triplets.size() << ", failed problems " << ds.failures.size() << "/"
        << problems.size() << "\n";
    for (const auto& f : ds.failures) out << "  " << f.problem_id << ": " << f.error << "\n";
    return ds.failures.size() * 10 > problems.size() ? kBackend : kOk;
  }

 private:
  EngineOptions engine_;
  std::string tasks_;
  StepBudget early_{8, 8};
  StepBudget tail_{4, 4};
  int cutoff_ = 3;
  std::string out_;
  std::string stats_;
};

class TrainPrm final : public Command {
 public:
  explicit TrainPrm(CLI::App* sub) : Command(sub, "train-prm") {
    sub->add_option("--data", data_, "Training dataset JSONL");
    sub->add_option("--held-out", held_out_, "Optional evaluation dataset JSONL");
    sub->add_option("--lambda", config_.lambda, "Rank-loss weight");
    sub->add_option("--delta", config_.delta, "Rank margin");
    sub->add_option("--epochs", config_.epochs);
    sub->add_option("--batch-size", config_.batch_size, "State groups per update");
    sub->add_option("--lr", config_.learning_rate, "Learning rate");
    sub->add_option("--label-mode", label_mode_, "soft | hard");
    sub->add_option("--hard-threshold", config_.hard_threshold);
    sub->add_flag("--no-rank", no_rank_, "Train on the value loss only");
    sub->add_option("--hidden", config_.hidden_dims, "Hidden layer widths")->delimiter(',');
    sub->add_option("--seed", config_.seed, "Initialisation and shuffling seed");
    sub->add_option("--out", out_, "Checkpoint JSON path");
    sub->add_option("--history", history_, "Loss history CSV (default: <out>.loss.csv)");
  }

 protected:
  int run(std::ostream& out, RunManifest& m) override {
    require(data_, "--data");
    require(out_, "--out");
    config_.label_mode = label_mode_from_string(label_mode_);
    config_.include_rank = !no_rank_;
    const auto ds = read_dataset(data_);
    m.inputs.push_back(record(data_));
    const auto result = train(ds, config_);
    write_model(result.model, out_);
    const auto history_path = history_.empty() ? out_ + ".loss.csv" : history_;
    io::write_file(history_path, history_to_csv(result.history));
    m.seed = config_.seed;
    m.outputs.push_back(record(out_));
    m.outputs.push_back(record(history_path));

    for (const auto& e : result.history)
      out << "epoch " << e.epoch << ": value " << e.value << " rank " << e.rank << " total "
          << e.total << "\n";
    if (!held_out_.empty()) {
      const auto metrics = evaluate_scorer(result.model, read_dataset(held_out_), config_.delta);
      m.inputs.push_back(record(held_out_));
      out << "held-out value_loss " << metrics.value_loss << " pairwise_accuracy "
          << metrics.pairwise_accuracy << " (" << metrics.pair_count << " pairs)\n";
    }
    return kOk;
  }

 private:
  TrainingConfig config_;
  std::string label_mode_ = "soft";
  bool no_rank_ = false;
  std::string data_;
  std::string held_out_;
  std::string out_;
  std::string history_;
};

struct RewardOptions {
  std::string kind = "oracle";
  std::string checkpoint;
  double constant = 0.5;
};

void add_reward_options(CLI::App* sub, RewardOptions& o) {
  sub->add_option("--reward", o.kind, "oracle | learned | constant");
  sub->add_option("--checkpoint", o.checkpoint, "Scorer checkpoint (learned reward)");
  sub->add_option("--constant", o.constant, "Score of the constant reward");
}

RewardPtr make_reward_from(const RewardOptions& o, const BackendContext& context, RunManifest& m) {
  RewardDescriptor d;
  d.kind = reward_kind_from_string(o.kind);
  d.constant_value = o.constant;
  if (d.kind == RewardKind::learned) {
    require(o.checkpoint, "--checkpoint");
    d.scorer = std::make_shared<const ScorerModel>(read_model(o.checkpoint));
    m.inputs.push_back(record(o.checkpoint));
  }
  return make_reward(d, context);
}

class Search final : public Command {
 public:
  explicit Search(CLI::App* sub) : Command(sub, "search") {
    add_engine_options(sub, engine_);
    add_reward_options(sub, reward_);
    sub->add_option("--tasks", tasks_, "Suite JSON");
    sub->add_option("--strategy", strategy_, "single | bon | step-bon | bas");
    sub->add_option("--n", d_.n, "Samples for bon / step-bon");
    sub->add_option("--b0", d_.schedule.b0, "Initial beam width");
    sub->add_option("--k", d_.schedule.k, "Annealing rate");
    sub->add_option("--eps", d_.schedule.epsilon, "Minimum beam width");
    sub->add_option("--expansion", d_.schedule.expansion, "Candidates per beam");
    sub->add_option("--final-rule", final_rule_, "last | mean | min");
    sub->add_option("--out", out_, "Report JSON path");
    sub->add_option("--csv", csv_, "Per-problem CSV path");
  }

 protected:
  int run(std::ostream& out, RunManifest& m) override {
    require(out_, "--out");
    d_.kind = strategy_kind_from_string(strategy_);
    d_.final_rule = final_rule_from_string(final_rule_);
    d_.validate();
    BackendContext context;
    context.suite = load_suite(tasks_, m);
    const auto policy = make_policy_from(engine_, context);
    const auto reward = make_reward_from(reward_, context, m);
    const auto report =
        run_suite(context.suite->problems(), d_, *policy, *reward, engine_.seed, engine_.threads);
    io::write_file(out_, report_to_json(report));
    m.seed = engine_.seed;
    m.outputs.push_back(record(out_));
    if (!csv_.empty()) {
      io::write_file(csv_, report_to_csv(report));
      m.outputs.push_back(record(csv_));
    }
    out << report.strategy << ": accuracy " << report.accuracy << " (single-shot "
        << report.single_shot_accuracy << "), mean token ratio " << report.mean_token_ratio
        << ", failures " << report.failures << "\n";
    return kOk;
  }

 private:
  EngineOptions engine_;
  RewardOptions reward_;
  std::string tasks_;
  std::string strategy_ = "bas";
  std::string final_rule_ = "last";
  StrategyDescriptor d_;
  std::string out_;
  std::string csv_;
};

class TtsCurve final : public Command {
 public:
  explicit TtsCurve(CLI::App* sub) : Command(sub, "tts-curve") {
    add_engine_options(sub, engine_);
    add_reward_options(sub, reward_);
    sub->add_option("--tasks", tasks_, "Suite JSON");
    sub->add_option("--b0-max", b0_max_, "BAS grid uses b0 = 1..b0-max");
    sub->add_option("--eps-list", eps_, "BAS grid epsilons")->delimiter(',');
    sub->add_option("--k", k_, "BAS annealing rate");
    sub->add_option("--bon-list", bon_, "Best-of-N grid")->delimiter(',');
    sub->add_option("--out", out_, "Curve CSV path");
  }

 protected:
  int run(std::ostream& out, RunManifest& m) override {
    require(out_, "--out");
    BackendContext context;
    context.suite = load_suite(tasks_, m);
    const auto policy = make_policy_from(engine_, context);
    const auto reward = make_reward_from(reward_, context, m);
    const auto problems = context.suite->problems();

    std::vector<StrategyDescriptor> grid;
    for (int eps : eps_)
      for (int b0 = 1; b0 <= b0_max_; ++b0) {
        StrategyDescriptor d;
        d.kind = StrategyKind::bas;
        d.schedule = {b0, k_, eps, 1};
        grid.push_back(d);
      }
    for (int n : bon_) {
      StrategyDescriptor d;
      d.kind = StrategyKind::bon;
      d.n = n;
      grid.push_back(d);
    }

    struct Row {
      std::string strategy, config, error;
      double ratio = 0.0, accuracy = 0.0, single = 0.0;
      int failures = 0;
    };
    std::vector<Row> rows;
    for (const auto& d : grid) {
      Row r{std::string(to_string(d.kind)), d.label(), {}};
      try {
        d.validate();
        const auto rep = run_suite(problems, d, *policy, *reward, engine_.seed, engine_.threads);
        r.ratio = rep.mean_token_ratio;
        r.accuracy = rep.accuracy;
        r.single = rep.single_shot_accuracy;
        r.failures = rep.failures;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      out << r.config << ": ratio " << r.ratio << " accuracy " << r.accuracy
          << (r.error.empty() ? "" : " error: " + r.error) << "\n";
      rows.push_back(std::move(r));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.ratio < b.ratio; });

    std::string csv = "strategy,config,mean_token_ratio,accuracy,single_shot_accuracy,failures,error\n";
    for (const auto& r : rows)
      csv += r.strategy + ",\"" + r.config + "\"," + io::format_double(r.ratio) + "," +
             io::format_double(r.accuracy) + "," + io::format_double(r.single) + "," +
             std::to_string(r.failures) + ",\"" + r.error + "\"\n";
    io::write_file(out_, csv);
    m.seed = engine_.seed;
    m.outputs.push_back(record(out_));
    return kOk;
  }

 private:
  EngineOptions engine_;
  RewardOptions reward_;
  std::string tasks_;
  int b0_max_ = 14;
  std::vector<int> eps_{1, 2};
  double k_ = 1.0;
  std::vector<int> bon_{1, 2, 4, 8, 16};
  std::string out_;
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Process-reward data construction, training and beam annealing search", "prmbas"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "JSON file of option values (a run manifest also works)");
  app.config_formatter(std::make_shared<JsonConfig>(&app));

  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(std::make_unique<GenTasks>(app.add_subcommand("gen-tasks", "Generate a synthetic task suite")));
  commands.push_back(std::make_unique<ConstructData>(
      app.add_subcommand("construct-data", "Label candidate steps by rollouts")));
  commands.push_back(std::make_unique<TrainPrm>(app.add_subcommand("train-prm", "Train the step scorer")));
  commands.push_back(std::make_unique<Search>(app.add_subcommand("search", "Run a search strategy on a suite")));
  commands.push_back(std::make_unique<TtsCurve>(
      app.add_subcommand("tts-curve", "Accuracy versus token ratio over strategy grids")));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  for (auto& c : commands) {
    if (!c->app()->parsed()) continue;
    try {
      return c->execute(out);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return exit_code_for(e);
    }
  }
  return kUsage;
}

}  // namespace prmbas::cli
