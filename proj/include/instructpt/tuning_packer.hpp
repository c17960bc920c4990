#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "instructpt/serialize.hpp"
#include "instructpt/template_engine.hpp"
#include "instructpt/token_counter.hpp"

namespace instructpt {

enum class SegmentKind { Context, Pairs, Sentinel };

std::string_view segment_kind_name(SegmentKind kind);
SegmentKind segment_kind_from_name(std::string_view name);

struct Segment {
  std::size_t begin = 0;  // byte offsets into PackedSequence::text, half-open
  std::size_t end = 0;
  SegmentKind kind = SegmentKind::Sentinel;

  bool operator==(const Segment&) const = default;
};

// Several same-dataset examples rendered back to back, with segments tiling the text.
struct PackedSequence {
  std::string text;
  std::vector<Segment> segments;
  std::vector<std::string> source_ids;
  std::size_t token_count = 0;

  bool operator==(const PackedSequence&) const = default;
};

struct SkippedExample {
  std::string source_id;
  std::string reason;
};

struct PackResult {
  std::vector<PackedSequence> sequences;
  std::vector<SkippedExample> skipped;
};

// The `cap` examples with most pairs; ties go to the smaller source_id.
std::vector<SynthesisExample> select_tuning_subset(std::vector<SynthesisExample> dataset, std::size_t cap);

// Rendered example plus its segmentation, offsets relative to the example start.
struct RenderedExample {
  std::string text;
  std::vector<Segment> segments;
};

RenderedExample render_example_segments(const SynthesisExample& ex, const SentinelConfig& cfg);

// Shuffles with the seed, then greedily fills each sequence while the token
// count of the concatenation stays within max_len. Examples longer than
// max_len on their own are skipped and reported. All examples must share a
// dataset_id (MixedDatasets otherwise).
PackResult pack_tuning_sequences(const std::vector<SynthesisExample>& dataset, std::size_t max_len,
                                 const TokenCounter& counter, const SentinelConfig& cfg, std::uint64_t seed);

// Groups by dataset_id, caps each group with select_tuning_subset, and packs
// each group independently. Groups are processed in dataset_id order.
PackResult pack_all_datasets(const std::vector<SynthesisExample>& examples, std::size_t max_len,
                             std::size_t cap, const TokenCounter& counter, const SentinelConfig& cfg,
                             std::uint64_t seed);

// Spans that carry tuning loss: the Pairs segments, in order.
std::vector<std::pair<std::size_t, std::size_t>> loss_mask(const PackedSequence& seq);

// Throws InvalidArgument if segments do not tile the text.
void check_tiling(const PackedSequence& seq);

json packed_to_json(const PackedSequence& seq);
PackedSequence packed_from_json(const json& j);
json skip_to_json(const SkippedExample& s);

}  // namespace instructpt
