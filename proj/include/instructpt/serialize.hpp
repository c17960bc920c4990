#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "instructpt/template_engine.hpp"

namespace instructpt {

using json = nlohmann::json;

// One raw corpus line: {"id": string, "text": string, "domains": [string]?}.
// Other fields are kept in `line` and survive passthrough untouched.
struct RawDocument {
  std::string id;
  std::string text;
  std::vector<std::string> domains;
  std::string line;
};

json pair_to_json(const InstructionResponsePair& pair);
InstructionResponsePair pair_from_json(const json& j);

json example_to_json(const SynthesisExample& ex);
SynthesisExample example_from_json(const json& j);

json sentinels_to_json(const SentinelConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected. Validates the result.
SentinelConfig sentinels_from_json(const json& j);
SentinelConfig load_sentinel_config(const std::filesystem::path& path);

RawDocument raw_document_from_line(const std::string& line, std::size_t line_no);
std::vector<RawDocument> load_corpus(const std::string& path);

// Parses each non-blank line; throws SchemaViolation naming the line on bad JSON.
std::vector<json> read_jsonl(const std::string& path);

// Compact single-line dump with stable key order.
std::string dump_line(const json& j);

// Integer >= 0, whether the JSON value is stored signed or unsigned.
inline bool is_non_negative_integer(const json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

}  // namespace instructpt
