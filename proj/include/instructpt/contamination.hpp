#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "instructpt/serialize.hpp"

namespace instructpt {

// ASCII lowercase, every whitespace run collapsed to one space. Not trimmed.
std::string normalize_for_contam(std::string_view text);

struct ContamEvidence {
  std::size_t probe_offset = 0;  // in the normalized example
  std::size_t length = 0;
  std::size_t doc = 0;           // index into the indexed documents
  std::size_t doc_offset = 0;    // in the normalized document
};

// Fingerprints of every length-L window starting at a multiple of `stride` in
// each normalized training document. A probe of length L + stride - 1 that
// occurs in a document contains exactly one such aligned window, so looking
// up the probe's `stride` windows finds it; each candidate is then confirmed
// by comparing the whole probe against the stored text.
class SubstringIndex {
 public:
  SubstringIndex(std::size_t window, std::size_t stride);

  void add(std::string_view text);   // normalizes
  void build(std::size_t threads = 0);  // 0: hardware concurrency

  std::size_t window() const { return window_; }
  std::size_t stride() const { return stride_; }
  std::size_t probe_length() const { return window_ + stride_ - 1; }
  std::size_t documents() const { return docs_.size(); }
  std::size_t postings() const { return postings_.size(); }
  std::size_t indexed_bytes() const { return bytes_; }
  const std::string& document(std::size_t i) const { return docs_.at(i); }

  // probe must already be normalized and exactly probe_length() long.
  std::optional<ContamEvidence> find_probe(std::string_view probe) const;

  // Any length, by scanning every document. Used for short examples.
  std::optional<ContamEvidence> scan(std::string_view needle) const;

 private:
  struct Posting {
    std::uint64_t fp;
    std::uint32_t doc;
    std::uint32_t offset;
  };

  std::size_t window_;
  std::size_t stride_;
  std::vector<std::string> docs_;
  std::vector<Posting> postings_;
  std::size_t bytes_ = 0;
  bool built_ = false;
};

std::uint64_t window_fingerprint(std::string_view window);

struct ContamConfig {
  std::size_t window = 50;   // L, characters after normalization
  std::size_t stride = 1;    // s
  std::size_t samples = 0;   // k probes per example; 0 checks every offset
  std::uint64_t seed = 0;
  std::size_t threads = 0;

  static ContamConfig exhaustive(std::size_t window = 50);
  static ContamConfig fast(std::size_t window = 50);  // k = 3, s = 16
  std::string mode() const;
};

// Probe start offsets checked for a normalized example of this length.
// Examples shorter than the probe length yield {0} and are probed whole.
std::vector<std::size_t> probe_offsets(std::size_t length, const ContamConfig& cfg, std::uint64_t example_seed);

struct ExampleCheck {
  bool contaminated = false;
  std::optional<ContamEvidence> evidence;
};

// Empty (after normalization) examples are never contaminated.
ExampleCheck check_example(std::string_view example_text, const SubstringIndex& index, const ContamConfig& cfg,
                           std::uint64_t example_seed);

struct EvalExample {
  std::string id;
  std::string text;
};

struct EvalSet {
  std::string dataset_id;
  std::vector<EvalExample> examples;
};

struct DatasetContamination {
  std::string dataset_id;
  std::size_t total = 0;
  std::size_t contaminated = 0;
  std::vector<std::string> contaminated_ids;
  std::vector<ContamEvidence> evidence;  // parallel to contaminated_ids
};

struct StreamContamination {
  std::string stream_id;
  std::size_t documents = 0;
  std::size_t bytes = 0;
  std::vector<DatasetContamination> per_dataset;
};

struct ContaminationReport {
  ContamConfig config;
  std::vector<StreamContamination> streams;
};

struct TrainingStream {
  std::string stream_id;
  std::vector<std::string> paths;  // JSONL with a "text" field per line
};

// Each example's probes depend only on the seed, the dataset and the example
// id, so every stream is checked with the same probes.
std::vector<DatasetContamination> check_eval_sets(const std::vector<EvalSet>& eval_sets,
                                                  const SubstringIndex& index, const ContamConfig& cfg);

// Throws StreamUnreadable.
ContaminationReport contamination_report(const std::vector<EvalSet>& eval_sets,
                                         const std::vector<TrainingStream>& streams, const ContamConfig& cfg);

struct DatasetDelta {
  std::string dataset_id;
  std::size_t raw = 0;
  std::size_t augmented = 0;
  long long delta = 0;  // augmented - raw
};

std::vector<DatasetDelta> contamination_delta(const ContaminationReport& report, const std::string& augmented_stream,
                                              const std::string& raw_stream);

json contamination_report_to_json(const ContaminationReport& report, const std::vector<DatasetDelta>& deltas = {});

// One example per line: {"id"?, "text"}; missing ids become the line number.
EvalSet load_eval_set(const std::string& path, const std::string& dataset_id);

}  // namespace instructpt
