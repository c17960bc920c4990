#include "instructpt/tuning_packer.hpp"

#include <algorithm>
#include <map>

#include "instructpt/error.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

std::string_view segment_kind_name(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::Context: return "context";
    case SegmentKind::Pairs: return "pairs";
    case SegmentKind::Sentinel: return "sentinel";
  }
  return "sentinel";
}

SegmentKind segment_kind_from_name(std::string_view name) {
  if (name == "context") return SegmentKind::Context;
  if (name == "pairs") return SegmentKind::Pairs;
  if (name == "sentinel") return SegmentKind::Sentinel;
  throw Error(ErrorCode::SchemaViolation, "unknown segment kind '" + std::string(name) + "'");
}

std::vector<SynthesisExample> select_tuning_subset(std::vector<SynthesisExample> dataset, std::size_t cap) {
  std::stable_sort(dataset.begin(), dataset.end(), [](const SynthesisExample& a, const SynthesisExample& b) {
    if (a.pairs.size() != b.pairs.size()) return a.pairs.size() > b.pairs.size();
    return a.source_id < b.source_id;
  });
  if (dataset.size() > cap) dataset.resize(cap);
  return dataset;
}

namespace {

void append_segment(std::vector<Segment>& segs, std::size_t begin, std::size_t end, SegmentKind kind) {
  if (begin == end) return;
  if (!segs.empty() && segs.back().kind == kind && segs.back().end == begin) {
    segs.back().end = end;
    return;
  }
  segs.push_back({begin, end, kind});
}

void append_rendered(PackedSequence& seq, const RenderedExample& r, const std::string& source_id) {
  const std::size_t base = seq.text.size();
  seq.text += r.text;
  for (const auto& s : r.segments) append_segment(seq.segments, base + s.begin, base + s.end, s.kind);
  seq.source_ids.push_back(source_id);
}

}  // namespace

RenderedExample render_example_segments(const SynthesisExample& ex, const SentinelConfig& cfg) {
  RenderedExample r;
  auto emit = [&](std::string_view piece, SegmentKind kind) {
    const std::size_t begin = r.text.size();
    r.text += piece;
    append_segment(r.segments, begin, r.text.size(), kind);
  };
  if (contains_sentinel(ex.text, cfg)) {
    throw Error(ErrorCode::SentinelCollision, "text of '" + ex.source_id + "' contains a reserved sentinel");
  }
  emit(cfg.example_open + " " + cfg.context_open + " ", SegmentKind::Sentinel);
  emit(ex.text, SegmentKind::Context);
  emit(" " + cfg.context_close, SegmentKind::Sentinel);
  if (!ex.pairs.empty()) {
    emit(cfg.joiner, SegmentKind::Sentinel);
    emit(render_pairs(ex.pairs, cfg), SegmentKind::Pairs);
  }
  emit(" " + cfg.example_close, SegmentKind::Sentinel);
  return r;
}

PackResult pack_tuning_sequences(const std::vector<SynthesisExample>& dataset, std::size_t max_len,
                                 const TokenCounter& counter, const SentinelConfig& cfg, std::uint64_t seed) {
  if (max_len == 0) throw Error(ErrorCode::InvalidArgument, "max_len must be positive");
  for (const auto& ex : dataset) {
    if (ex.dataset_id != dataset.front().dataset_id) {
      throw Error(ErrorCode::MixedDatasets, "examples from datasets '" + dataset.front().dataset_id + "' and '" +
                                                ex.dataset_id + "' cannot share a tuning sequence");
    }
  }

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SeededRng rng(derive_seed(seed, "pack"));
  rng.shuffle(order);

  PackResult result;
  PackedSequence current;
  auto flush = [&] {
    if (current.source_ids.empty()) return;
    current.token_count = counter.count(current.text);
    result.sequences.push_back(std::move(current));
    current = PackedSequence{};
  };

  for (std::size_t idx : order) {
    const auto& ex = dataset[idx];
    auto rendered = render_example_segments(ex, cfg);
    if (counter.count(rendered.text) > max_len) {
      result.skipped.push_back({ex.source_id, "ExampleTooLong"});
      continue;
    }
    if (!current.source_ids.empty() && counter.count(current.text + rendered.text) > max_len) flush();
    append_rendered(current, rendered, ex.source_id);
  }
  flush();

  for (const auto& seq : result.sequences) {
    if (seq.token_count > max_len) {
      throw Error(ErrorCode::InvalidArgument, "packed sequence exceeds the token budget");
    }
  }
  return result;
}

PackResult pack_all_datasets(const std::vector<SynthesisExample>& examples, std::size_t max_len, std::size_t cap,
                             const TokenCounter& counter, const SentinelConfig& cfg, std::uint64_t seed) {
  std::map<std::string, std::vector<SynthesisExample>> groups;
  for (const auto& ex : examples) groups[ex.dataset_id].push_back(ex);
  PackResult all;
  for (auto& [dataset_id, group] : groups) {
    auto subset = select_tuning_subset(std::move(group), cap);
    auto packed = pack_tuning_sequences(subset, max_len, counter, cfg, derive_seed(seed, dataset_id));
    for (auto& s : packed.sequences) all.sequences.push_back(std::move(s));
    for (auto& s : packed.skipped) all.skipped.push_back(std::move(s));
  }
  return all;
}

std::vector<std::pair<std::size_t, std::size_t>> loss_mask(const PackedSequence& seq) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (const auto& s : seq.segments) {
    if (s.kind == SegmentKind::Pairs) spans.emplace_back(s.begin, s.end);
  }
  return spans;
}

void check_tiling(const PackedSequence& seq) {
  std::size_t cursor = 0;
  for (const auto& s : seq.segments) {
    if (s.begin != cursor || s.end <= s.begin) {
      throw Error(ErrorCode::InvalidArgument, "segments do not tile the text at byte " + std::to_string(cursor));
    }
    cursor = s.end;
  }
  if (cursor != seq.text.size()) {
    throw Error(ErrorCode::InvalidArgument, "segments end at byte " + std::to_string(cursor) + " of " +
                                                std::to_string(seq.text.size()));
  }
}

json packed_to_json(const PackedSequence& seq) {
  json segs = json::array();
  for (const auto& s : seq.segments) segs.push_back({s.begin, s.end, std::string(segment_kind_name(s.kind))});
  return {{"text", seq.text}, {"segments", segs}, {"source_ids", seq.source_ids}, {"token_count", seq.token_count}};
}

PackedSequence packed_from_json(const json& j) {
  PackedSequence seq;
  try {
    seq.text = j.at("text").get<std::string>();
    for (const auto& s : j.at("segments")) {
      seq.segments.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(),
                              segment_kind_from_name(s.at(2).get<std::string>())});
    }
    seq.source_ids = j.at("source_ids").get<std::vector<std::string>>();
    seq.token_count = j.at("token_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("packed sequence: ") + e.what());
  }
  return seq;
}

json skip_to_json(const SkippedExample& s) { return {{"source_id", s.source_id}, {"reason", s.reason}}; }

}  // namespace instructpt
