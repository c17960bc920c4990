#include "instructpt/error.hpp"

namespace instructpt {
namespace {

std::string join_violations(const std::vector<std::string>& violations) {
  std::string out = "invalid configuration";
  for (const auto& v : violations) {
    out += "\n  - ";
    out += v;
  }
  return out;
}

}  // namespace

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::SentinelCollision: return "SentinelCollision";
    case ErrorCode::InvalidSentinels: return "InvalidSentinels";
    case ErrorCode::InvalidPair: return "InvalidPair";
    case ErrorCode::MissingContext: return "MissingContext";
    case ErrorCode::AmbiguousContext: return "AmbiguousContext";
    case ErrorCode::MixedDatasets: return "MixedDatasets";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientDocuments: return "InsufficientDocuments";
    case ErrorCode::PromptTooLong: return "PromptTooLong";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::NoPriorOutputs: return "NoPriorOutputs";
    case ErrorCode::EmptyChain: return "EmptyChain";
    case ErrorCode::TemplateSlotMissing: return "TemplateSlotMissing";
    case ErrorCode::MalformedTemplate: return "MalformedTemplate";
    case ErrorCode::SourceUnreadable: return "SourceUnreadable";
    case ErrorCode::StreamUnreadable: return "StreamUnreadable";
    case ErrorCode::EmptyTextDomains: return "EmptyTextDomains";
    case ErrorCode::EmptyUnion: return "EmptyUnion";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::StageFailed: return "StageFailed";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

ConfigInvalid::ConfigInvalid(std::vector<std::string> violations)
    : Error(ErrorCode::ConfigInvalid, join_violations(violations)),
      violations_(std::move(violations)) {}

}  // namespace instructpt
