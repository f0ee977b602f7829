#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prmbas {

/// Contract violation by the caller (bad arguments, illegal transitions).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Generation backend failed after exhausting its retries.
class BackendError : public std::runtime_error {
 public:
  BackendError(const std::string& what, int attempts)
      : std::runtime_error(what), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

/// A backend answered, but the body did not follow the wire format.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation is not defined for this kind of input (e.g. oracle reward on an ingested problem).
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input that breaks a domain invariant (reward outside [0,1], ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch, int batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

class SearchError : public std::runtime_error {
 public:
  SearchError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class ConstructionError : public std::runtime_error {
 public:
  ConstructionError(const std::string& what, int step)
      : std::runtime_error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

}  // namespace prmbas
