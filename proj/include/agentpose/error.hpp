#pragma once

#include <stdexcept>
#include <string>

namespace agentpose {

// Exit codes used by the CLI; each error type maps onto one of them.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kIo = 3,
  kNumeric = 4,
};

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Undefined metric (e.g. PCK with no visible keypoints).
struct UndefinedMetric : std::domain_error {
  using std::domain_error::domain_error;
};

}  // namespace agentpose
