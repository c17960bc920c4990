#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "instructpt/backend.hpp"
#include "instructpt/config.hpp"
#include "instructpt/mixer.hpp"
#include "instructpt/synthesis.hpp"

namespace instructpt {

struct PipelineOptions {
  std::optional<std::size_t> stop_after_round;  // simulate an interruption between rounds
  CompletionBackend* backend = nullptr;         // overrides cfg.backend.url when set
};

struct StageOutcome {
  std::string name;
  bool skipped = false;  // inputs and recorded outputs verified unchanged
};

struct PipelineResult {
  std::vector<StageOutcome> stages;
  bool complete = false;
  SynthesisSummary synthesis;
  std::size_t augmented_documents = 0;
  std::size_t mixed_lines = 0;
  std::filesystem::path manifest;
};

// Stages: synthesize (plan + rounds) -> assemble -> mix. Layout under out_dir:
//   synthesis/            see run_synthesis
//   augmented.jsonl       one assembled M-shot document per chain
//   mixed.jsonl           mixed pre-training stream
//   mix_manifest.json
//   pipeline_manifest.json  effective config, per-stage input digests and output hashes
// A stage is skipped when its input digest matches the manifest and every
// recorded output still hashes to its recorded value. Stage errors are rethrown
// with the stage name prefixed.
PipelineResult run_pipeline(const PipelineConfig& cfg, const PipelineOptions& opts = {});

// The mix spec the pipeline uses: the configured file with "@augmented",
// "@passthrough" and "@raw" paths resolved, or augmented + passthrough at 1x.
MixSpec pipeline_mix_spec(const PipelineConfig& cfg, const std::filesystem::path& augmented,
                          const std::filesystem::path& passthrough);

}  // namespace instructpt
