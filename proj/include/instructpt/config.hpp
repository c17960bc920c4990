#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "instructpt/serialize.hpp"
#include "instructpt/synthesis.hpp"
#include "instructpt/template_engine.hpp"

namespace instructpt {

struct BackendSettings {
  std::string url = "stub:";
  std::size_t in_flight = 16;
  std::size_t max_new_tokens = 700;
  double temperature = 0.0;
  std::size_t max_retries = 3;
  std::size_t initial_delay_ms = 1000;
};

struct PipelineConfig {
  std::filesystem::path corpus;
  std::filesystem::path out_dir;
  SentinelConfig sentinels;
  std::size_t num_rounds = 2;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  BackendSettings backend;
  SanitizePolicy sanitize = SanitizePolicy::Reject;
  std::optional<std::filesystem::path> template_pool;  // built-in pool when unset
  std::optional<std::filesystem::path> mix_spec;       // augmented + passthrough at 1x when unset
  std::string token_counter = "words";
  std::size_t tuning_max_len = 2048;
  std::size_t inference_max_len = 4096;
};

// Relative paths resolve against base_dir. Collects every violation and throws
// ConfigInvalid listing them all; paths must exist.
PipelineConfig config_from_json(const json& j, const std::filesystem::path& base_dir);

// Throws ConfigInvalid (unreadable or unparsable files included).
PipelineConfig validate_config(const std::filesystem::path& path);

// Re-checks invariants after command-line overrides.
void check_config(const PipelineConfig& cfg);

json config_to_json(const PipelineConfig& cfg);

SynthesisOptions synthesis_options(const PipelineConfig& cfg);

}  // namespace instructpt
