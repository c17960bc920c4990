#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "instructpt/backend.hpp"
#include "instructpt/serialize.hpp"
#include "instructpt/template_engine.hpp"
#include "instructpt/token_counter.hpp"

namespace instructpt {

// Round m synthesizes for partitions[m]; documents of round m are conditioned
// on chains ending in round m-1.
struct RoundPlan {
  std::size_t num_rounds = 1;
  std::vector<std::vector<std::string>> partitions;
  std::size_t max_prompt_tokens = std::numeric_limits<std::size_t>::max();
  std::uint64_t seed = 0;
};

// Near-equal split: the first n % rounds partitions get one extra document.
std::vector<std::size_t> partition_sizes(std::size_t n, std::size_t rounds);

// floor(n * fraction), tolerant of binary rounding (10 * 0.2 == 2).
std::size_t conversion_count(std::size_t n, double fraction);

struct ConversionSplit {
  std::vector<std::string> selected;     // seeded sample, in corpus order
  std::vector<std::string> passthrough;  // the rest, in corpus order
};

ConversionSplit select_for_conversion(const std::vector<std::string>& doc_ids, double fraction, std::uint64_t seed);

// Seeded shuffle, then contiguous near-equal partitions. A zero prompt budget
// means unlimited. Throws InsufficientDocuments.
RoundPlan plan_rounds(const std::vector<std::string>& doc_ids, std::size_t num_rounds, std::uint64_t seed,
                      std::size_t max_prompt_tokens = 0);

struct ChainState {
  std::vector<SynthesisExample> history;  // oldest round first
};

struct InferencePrompt {
  std::string text;
  std::size_t history_used = 0;  // entries kept after oldest-first eviction
};

// Rendered history followed by the open context stub for current_text.
// Drops whole history entries oldest-first until the prompt fits the budget;
// throws PromptTooLong when the bare stub alone does not fit.
InferencePrompt build_inference_prompt_ex(const ChainState& state, std::string_view current_text,
                                          const SentinelConfig& cfg, std::size_t budget,
                                          const TokenCounter& counter);
std::string build_inference_prompt(const ChainState& state, std::string_view current_text,
                                   const SentinelConfig& cfg, std::size_t budget, const TokenCounter& counter);

// prior_chains are the completed chains ending in round round_idx - 1 (each
// one's last entry is the prior-round example). After a seeded permutation of
// prior_chains, the i-th document of partitions[round_idx] is anchored on
// prior_chains[perm[i % prior]]. Round 0 yields empty histories.
// Throws NoPriorOutputs when round_idx > 0 and prior_chains is empty.
std::map<std::string, ChainState> assign_chains(const RoundPlan& plan, std::size_t round_idx,
                                                const std::vector<ChainState>& prior_chains, std::uint64_t seed);

enum class DocStatus { Ok, EmptySynthesis, BackendFailed, PromptTooLong, SentinelCollision };

std::string_view doc_status_name(DocStatus status);
DocStatus doc_status_from_name(std::string_view name);

// Outcome for one document in one round.
struct SynthesisRecord {
  std::string doc_id;
  std::size_t round = 0;
  DocStatus status = DocStatus::Ok;
  SynthesisExample example;               // text (sanitized) and parsed pairs
  std::vector<std::string> history_ids;   // full anchor chain, oldest first
  std::size_t history_used = 0;           // entries that fit into the prompt
  std::size_t attempts = 0;
  std::vector<ParseIssue> issues;
  std::string error;
  std::string prompt;
  std::string generation;
};

json record_to_json(const SynthesisRecord& r);  // without prompt/generation
SynthesisRecord record_from_json(const json& j);

struct SynthesisLimits {
  std::size_t in_flight = 16;
  std::size_t max_new_tokens = 700;
  double temperature = 0.0;
  RetryPolicy retry;
  SanitizePolicy sanitize = SanitizePolicy::Reject;
};

// Completed rounds, keyed by document. Chains are rebuilt from history_ids.
class ChainStore {
 public:
  void add_round(std::vector<SynthesisRecord> records);
  std::size_t rounds() const { return rounds_.size(); }
  const std::vector<SynthesisRecord>& round(std::size_t m) const { return rounds_.at(m); }
  const SynthesisRecord* find(const std::string& doc_id) const;

  // History plus the document's own example.
  std::vector<SynthesisExample> chain_of(const std::string& doc_id) const;

  // Successful chains ending in round m, in partition order.
  std::vector<ChainState> chains_ending_in(std::size_t m) const;

  // Successful chains that no later successful document extended, ordered by
  // round then partition order.
  std::vector<std::vector<SynthesisExample>> leaf_chains() const;

 private:
  std::vector<std::vector<SynthesisRecord>> rounds_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> index_;
};

struct RoundReport {
  std::vector<SynthesisRecord> records;  // partition order
  std::size_t ok = 0;
  std::size_t failed = 0;
};

// Runs one round over partitions[round_idx]. Backend calls run concurrently
// under limits.in_flight; records come back in partition order regardless of
// completion order. Per-document failures are recorded, never thrown.
RoundReport synthesize_round(const RoundPlan& plan, std::size_t round_idx,
                             const std::map<std::string, std::string>& corpus, const ChainStore& chains,
                             CompletionBackend& backend, const SentinelConfig& cfg, const TokenCounter& counter,
                             const SynthesisLimits& limits);

struct SynthesisOptions {
  std::size_t num_rounds = 2;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::size_t inference_max_len = 4096;
  std::string backend_url;  // recorded in the config hash
  SynthesisLimits limits;
  std::optional<std::size_t> stop_after_round;  // stop once this many rounds are persisted
};

struct SynthesisSummary {
  std::size_t rounds_completed = 0;
  std::size_t rounds_resumed = 0;
  bool complete = false;
  std::size_t documents_ok = 0;
  std::size_t documents_failed = 0;
  std::size_t chains = 0;
  std::size_t passthrough = 0;
  std::size_t pairs = 0;
};

// Output directory layout:
//   synthesis_manifest.json   plan, seed, config hash, per-round file hashes
//   round_<m>.jsonl           one SynthesisRecord per document, partition order
//   prompts_<m>.jsonl         {"doc_id", "prompt", "generation"} per document
//   chains.jsonl              {"chain": [example...]} per final chain
//   passthrough.jsonl         raw lines of documents not converted
// Rerunning with the same inputs resumes after the last persisted round.
SynthesisSummary run_synthesis(const std::vector<RawDocument>& corpus, const SynthesisOptions& options,
                               CompletionBackend& backend, const SentinelConfig& cfg, const TokenCounter& counter,
                               const std::filesystem::path& out_dir);

// Reads chains.jsonl.
std::vector<std::vector<SynthesisExample>> load_chains(const std::string& path);

}  // namespace instructpt
