#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "instructpt/serialize.hpp"

namespace instructpt {

// Positive rational repeat factor, kept exact so residual draws are reproducible.
struct Repeat {
  std::uint64_t num = 1;
  std::uint64_t den = 1;

  std::uint64_t whole() const { return num / den; }
  std::uint64_t residual() const { return num % den; }  // out of den
  std::string str() const;
  bool operator==(const Repeat&) const = default;
};

// Accepts "4", "2.5", "5/2", or a JSON number. Throws InvalidArgument unless > 0.
Repeat parse_repeat(const std::string& text);
Repeat repeat_from_json(const json& j);

enum class SourceRole { Augmented, Raw, TuningData, GeneralInstructions };

std::string_view source_role_name(SourceRole role);
SourceRole source_role_from_name(std::string_view name);

struct MixSource {
  std::string stream_id;
  std::string path;  // "-" for stdin
  Repeat repeat;
  SourceRole role = SourceRole::Raw;
};

struct MixSpec {
  std::vector<MixSource> sources;
  std::uint64_t seed = 0;
  std::size_t memory_limit_bytes = 256u << 20;  // spill sorted runs to disk beyond this
  std::filesystem::path spill_dir;              // defaults to the system temp dir
};

// {"seed", "sources": [{"stream_id", "path", "repeat", "role"}], "memory_limit_bytes"?}.
// Relative paths resolve against base_dir. Throws ConfigInvalid listing every problem.
MixSpec mix_spec_from_json(const json& j, const std::filesystem::path& base_dir = {});
MixSpec load_mix_spec(const std::filesystem::path& path);

struct SourceCount {
  std::string stream_id;
  std::string role;
  std::string repeat;
  std::size_t documents = 0;
  std::size_t emitted = 0;
};

struct MixManifest {
  std::uint64_t seed = 0;
  std::vector<SourceCount> sources;
  std::size_t total = 0;
  std::size_t spilled_runs = 0;
  std::string output_sha256;
};

json mix_manifest_to_json(const MixManifest& m);

// Emits every document floor(repeat) times plus once more with probability
// frac(repeat), then writes all emissions in one seeded global order.
// Throws SourceUnreadable.
MixManifest mix(const MixSpec& spec, const std::string& out_path);

}  // namespace instructpt
