#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace instructpt {

enum class ErrorCode {
  SentinelCollision,
  InvalidSentinels,
  InvalidPair,
  MissingContext,
  AmbiguousContext,
  MixedDatasets,
  InvalidArgument,
  InsufficientDocuments,
  PromptTooLong,
  BackendError,
  NoPriorOutputs,
  EmptyChain,
  TemplateSlotMissing,
  MalformedTemplate,
  SourceUnreadable,
  StreamUnreadable,
  EmptyTextDomains,
  EmptyUnion,
  ConfigInvalid,
  SchemaViolation,
  StageFailed,
  Io,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Carries every violation found, not only the first.
class ConfigInvalid : public Error {
 public:
  explicit ConfigInvalid(std::vector<std::string> violations);

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

}  // namespace instructpt
