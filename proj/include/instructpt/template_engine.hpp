#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace instructpt {

enum class PairFormat { FreeForm, MultipleChoice, FreeFormCoT, MultipleChoiceCoT };

std::string_view pair_format_name(PairFormat format);
PairFormat pair_format_from_name(std::string_view name);

constexpr bool has_options(PairFormat f) {
  return f == PairFormat::MultipleChoice || f == PairFormat::MultipleChoiceCoT;
}
constexpr bool has_cot(PairFormat f) {
  return f == PairFormat::FreeFormCoT || f == PairFormat::MultipleChoiceCoT;
}

struct InstructionResponsePair {
  std::string instruction;
  std::string response;
  PairFormat format = PairFormat::FreeForm;
  std::vector<std::string> options;  // non-empty iff has_options(format)
  std::string cot;                   // non-empty iff has_cot(format)

  bool operator==(const InstructionResponsePair&) const = default;
};

struct SynthesisExample {
  std::string text;
  std::vector<InstructionResponsePair> pairs;
  std::string source_id;
  std::string dataset_id;

  bool operator==(const SynthesisExample&) const = default;
};

// Reserved delimiter strings of the synthesizer's surface format.
struct SentinelConfig {
  std::string example_open = "<s>";
  std::string example_close = "</s>";
  std::string context_open = "<CON>";
  std::string context_close = "</CON>";
  std::string que = "<QUE>";
  std::string ans = "<ANS>";
  std::string end = "</END>";
  std::string joiner = "\n\n";

  // Throws InvalidSentinels unless all eight are non-empty and pairwise distinct.
  void validate() const;

  // The seven delimiters that may not appear inside data fields (the joiner is
  // ordinary whitespace and is allowed).
  std::array<std::string_view, 7> reserved() const;

  bool operator==(const SentinelConfig&) const = default;
};

// Markers fixed by the pair templates.
inline constexpr std::string_view kOptionsHeader = "Options:";
inline constexpr std::string_view kOptionPrefix = "- ";
inline constexpr std::string_view kStepByStep = "Let's think step by step.";
inline constexpr std::string_view kAnswerMarker = "Therefore, the answer is";

enum class SanitizePolicy { Reject, Escape };

// Returns text unchanged when it holds no sentinel. Otherwise throws
// SentinelCollision (Reject) or breaks every sentinel by inserting a space
// after its first character (Escape).
std::string sanitize_text(std::string_view text, const SentinelConfig& cfg,
                          SanitizePolicy policy = SanitizePolicy::Reject);

bool contains_sentinel(std::string_view text, const SentinelConfig& cfg);

// Throws InvalidPair when the pair breaks its format invariants or holds content
// that would not parse back to the same pair, and SentinelCollision when a field
// holds a sentinel.
void validate_pair(const InstructionResponsePair& pair, const SentinelConfig& cfg);

std::string render_pair(const InstructionResponsePair& pair, const SentinelConfig& cfg = {});

// The pair block alone: rendered pairs joined by cfg.joiner.
std::string render_pairs(const std::vector<InstructionResponsePair>& pairs,
                         const SentinelConfig& cfg = {});

std::string render_example(const SynthesisExample& ex, const SentinelConfig& cfg = {});

// "<s> <CON> text </CON>" + joiner: the open stub the synthesizer continues from.
std::string render_context_stub(std::string_view text, const SentinelConfig& cfg = {});

enum class ParseIssueKind {
  TruncatedPair,      // "<QUE>" with no closing "</END>" before the next pair or end of input
  MissingAnswer,      // "<QUE> ... </END>" without "<ANS>"
  MissingCotMarker,   // step-by-step question whose answer lacks the answer marker
  MalformedOptions,   // "Options:" block with a line not starting with "- "
  StraySentinel,      // a parsed field would contain a reserved sentinel
  AmbiguousContent,   // parsed pair would not render back to itself (raised by callers that validate)
};

std::string_view parse_issue_name(ParseIssueKind kind);

struct ParseIssue {
  ParseIssueKind kind;
  std::size_t offset;  // byte offset of the offending span in the parsed input
  std::string detail;
};

struct ParsedPairs {
  std::vector<InstructionResponsePair> pairs;
  std::vector<ParseIssue> issues;
};

// Never throws on arbitrary input.
ParsedPairs parse_pairs(std::string_view raw, const SentinelConfig& cfg = {});

// Parses one rendered example. Throws MissingContext / AmbiguousContext.
// source_id and dataset_id are not part of the surface format and come back empty.
SynthesisExample parse_example(std::string_view raw, const SentinelConfig& cfg = {},
                               std::vector<ParseIssue>* issues = nullptr);

}  // namespace instructpt
