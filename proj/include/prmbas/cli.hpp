#pragma once

// Command-line driver: gen-tasks, construct-data, train-prm, search, tts-curve.
// Each command writes a run manifest next to its primary output.

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace prmbas::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kBackend = 3,
  kDataValidation = 4,
  kDivergence = 5,
};

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& error);

/// Environment variable holding the bearer token for HTTP backends.
inline constexpr const char* kTokenVariable = "PRMBAS_API_KEY";

struct FileRecord {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  /// Every option of the command with its effective value.
  std::vector<std::pair<std::string, std::string>> config;
  std::uint64_t seed = 0;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  std::string started;  // ISO-8601 UTC
  std::string finished;
};

std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const std::string& text);

/// Parses and runs one command. A manifest may be passed to --config to replay
/// its run; explicit flags override file values.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace prmbas::cli
