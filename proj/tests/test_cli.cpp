#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "prmbas/cli.hpp"
#include "prmbas/datagen.hpp"
#include "prmbas/io.hpp"
#include "prmbas/search.hpp"

using namespace prmbas;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "prmbas_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PRMBAS_CLI) + " " + args + " > " + path("last.log") + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_log() { return io::read_file(path("last.log")); }

int lines(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

void make_suite(const std::string& name, int count, int seed = 7) {
  REQUIRE(run_cli("gen-tasks --count " + std::to_string(count) + " --min-depth 3 --max-depth 5 --seed " +
                  std::to_string(seed) + " --out " + path(name)) == 0);
}

}  // namespace

TEST_CASE("gen-tasks is reproducible and writes a manifest") {
  make_suite("a.json", 20);
  make_suite("b.json", 20);
  CHECK(io::sha256_file(path("a.json")) == io::sha256_file(path("b.json")));
  REQUIRE(run_cli("gen-tasks --count 20 --min-depth 3 --max-depth 5 --seed 8 --out " + path("c.json")) == 0);
  CHECK(io::sha256_file(path("a.json")) != io::sha256_file(path("c.json")));

  const auto m = cli::manifest_from_json(io::read_file(path("a.json.manifest.json")));
  CHECK(m.command == "gen-tasks");
  CHECK(m.seed == 7);
  REQUIRE(m.outputs.size() == 1);
  CHECK(m.outputs[0].sha256 == io::sha256_file(path("a.json")));
  const auto has = [&](const std::string& k, const std::string& v) {
    return std::find(m.config.begin(), m.config.end(), std::pair{k, v}) != m.config.end();
  };
  CHECK(has("count", "20"));
  CHECK(has("profile", "shaped"));
  CHECK(has("max-branching", "4"));
  CHECK_FALSE(m.started.empty());
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run_cli("gen-tasks --min-branching 1 --out " + path("bad.json")) == 2);
  CHECK(last_log().find("error") != std::string::npos);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("gen-tasks --count notanumber --out " + path("x.json")) == 2);
  CHECK(run_cli("gen-tasks") == 2);
  CHECK(run_cli("search --tasks " + path("a.json") + " --strategy mcts --out " + path("r.json")) == 2);
  CHECK(run_cli("--help") == 0);
  CHECK(last_log().find("tts-curve") != std::string::npos);
}

TEST_CASE("full pipeline through a learned scorer") {
  make_suite("train.json", 30);
  make_suite("eval.json", 10, 9);
  REQUIRE(run_cli("construct-data --tasks " + path("train.json") + " --seed 1 --out " + path("train.jsonl")) == 0);
  const auto ds = read_dataset(path("train.jsonl"));
  CHECK_FALSE(ds.triplets.empty());
  CHECK(fs::exists(path("train.jsonl.stats.csv")));
  const auto dm = cli::manifest_from_json(io::read_file(path("train.jsonl.manifest.json")));
  REQUIRE(dm.inputs.size() == 1);
  CHECK(dm.inputs[0].sha256 == io::sha256_file(path("train.json")));
  CHECK(dm.outputs.size() == 2);

  REQUIRE(run_cli("train-prm --data " + path("train.jsonl") + " --held-out " + path("train.jsonl") +
              " --epochs 2 --hidden 16,8 --out " + path("prm.json")) == 0);
  CHECK(last_log().find("pairwise_accuracy") != std::string::npos);
  CHECK(lines(io::read_file(path("prm.json.loss.csv"))) == 3);

  REQUIRE(run_cli("search --tasks " + path("eval.json") + " --reward learned --checkpoint " +
              path("prm.json") + " --b0 4 --seed 3 --out " + path("report.json") + " --csv " +
              path("report.csv")) == 0);
  const auto report = report_from_json(io::read_file(path("report.json")));
  CHECK(report.outcomes.size() == 10);
  CHECK(report.failures == 0);
  CHECK(report.strategy == "bas(b0=4,k=1,eps=2,exp=1)");
  CHECK(lines(io::read_file(path("report.csv"))) == 11);
  const auto sm = cli::manifest_from_json(io::read_file(path("report.json.manifest.json")));
  CHECK(sm.inputs.size() == 2);
}

TEST_CASE("tts-curve covers the default grids") {
  make_suite("curve.json", 6);
  REQUIRE(run_cli("tts-curve --tasks " + path("curve.json") + " --seed 2 --out " + path("curve.csv")) == 0);
  const auto csv = io::read_file(path("curve.csv"));
  CHECK(csv.rfind("strategy,config,mean_token_ratio,accuracy,single_shot_accuracy,failures,error\n", 0) == 0);
  CHECK(lines(csv) == 1 + 2 * 14 + 5);
  CHECK(csv.find("\"bas(b0=14,k=1,eps=1,exp=1)\"") != std::string::npos);
  CHECK(csv.find("\"bon(n=16)\"") != std::string::npos);
  // b0 below eps is an invalid grid point and is reported, not fatal.
  CHECK(csv.find("\"bas(b0=1,k=1,eps=2,exp=1)\",0,0,0,0,\"b0 must be >= epsilon\"") != std::string::npos);

  // Rows are ordered by token ratio.
  std::istringstream in(csv);
  std::string row;
  std::getline(in, row);
  double prev = -1.0;
  while (std::getline(in, row)) {
    const auto close = row.find("\",");
    const double ratio = std::stod(row.substr(close + 2));
    CHECK(ratio >= prev);
    prev = ratio;
  }
}

TEST_CASE("config files and manifests replay a run") {
  make_suite("cfg.json", 8);
  REQUIRE(run_cli("search --tasks " + path("cfg.json") + " --strategy bon --n 4 --seed 5 --out " +
              path("flags.json")) == 0);

  nlohmann::json cfg{{"tasks", path("cfg.json")}, {"strategy", "bon"}, {"n", 4}, {"seed", 5},
                     {"out", path("from_config.json")}};
  io::write_file(path("cfg_file.json"), cfg.dump());
  REQUIRE(run_cli("--config " + path("cfg_file.json") + " search") == 0);
  CHECK(io::read_file(path("flags.json")) == io::read_file(path("from_config.json")));

  nlohmann::json nested{{"search", {{"tasks", path("cfg.json")}, {"strategy", "bon"}, {"n", 4},
                                    {"seed", 5}, {"out", path("nested.json")}}}};
  io::write_file(path("nested_cfg.json"), nested.dump());
  REQUIRE(run_cli("--config " + path("nested_cfg.json") + " search") == 0);
  CHECK(io::read_file(path("flags.json")) == io::read_file(path("nested.json")));

  // Replaying the manifest with a new output path reproduces the report.
  REQUIRE(run_cli("--config " + path("flags.json.manifest.json") + " search --out " + path("replayed.json")) == 0);
  CHECK(io::read_file(path("flags.json")) == io::read_file(path("replayed.json")));
  // Explicit flags win over file values.
  REQUIRE(run_cli("--config " + path("flags.json.manifest.json") + " search --n 2 --out " + path("n2.json")) == 0);
  CHECK(report_from_json(io::read_file(path("n2.json"))).strategy == "bon(n=2)");

  CHECK(run_cli("--config " + path("flags.json.manifest.json") + " gen-tasks --out " + path("z.json")) == 2);
  io::write_file(path("broken.json"), "{not json");
  CHECK(run_cli("--config " + path("broken.json") + " search") == 2);
}

TEST_CASE("error classes map to exit codes") {
  io::write_file(path("corrupt.jsonl"), "{\"format_version\":1,\"segment_length\":30}\n{broken\n");
  CHECK(run_cli("train-prm --data " + path("corrupt.jsonl") + " --out " + path("m.json")) == 4);
  CHECK(last_log().find("line 2") != std::string::npos);
  io::write_file(path("future.json"), R"({"format_version":7,"tasks":[]})");
  CHECK(run_cli("search --tasks " + path("future.json") + " --out " + path("r.json")) == 4);

  make_suite("small.json", 12);
  REQUIRE(run_cli("construct-data --tasks " + path("small.json") + " --early-m 2 --early-n 2 --tail-m 2 --tail-n 2 --out " +
              path("small.jsonl")) == 0);
  CHECK(run_cli("train-prm --data " + path("small.jsonl") + " --lr 1e308 --lambda 1000 --out " + path("m.json")) == 5);

  make_suite("remote.json", 3);
  CHECK(run_cli("construct-data --tasks " + path("remote.json") +
            " --policy http --endpoint http://127.0.0.1:1/v1/chat/completions --out " +
            path("remote.jsonl")) == 3);
}
