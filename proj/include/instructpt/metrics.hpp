#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "instructpt/assembler.hpp"
#include "instructpt/serialize.hpp"
#include "instructpt/template_engine.hpp"

namespace instructpt {

struct F1Options {
  bool remove_articles = false;  // drop "a", "an", "the" after lowercasing
};

// Lowercase, ASCII punctuation removed, whitespace collapsed, trimmed.
std::string normalize_answer(std::string_view text, const F1Options& opts = {});
std::vector<std::string> answer_tokens(std::string_view text, const F1Options& opts = {});

// Multiset token F1. Both empty after normalization: 1. Exactly one empty: 0.
double token_f1(std::string_view pred, std::string_view gold, const F1Options& opts = {});

struct EvalReport {
  std::vector<double> per_item;
  double mean = 0.0;  // 0 when count == 0
  std::size_t count = 0;
};

EvalReport make_report(std::vector<double> scores);
EvalReport response_accuracy(const std::vector<std::pair<std::string, std::string>>& items,
                             const F1Options& opts = {});

// 0.7 -> "70.0"
std::string format_percent(double fraction);

json eval_report_to_json(const EvalReport& r);

enum class PairQualityMode { Match, Concat };

// instruction + " " + response
std::string flatten_pair(const InstructionResponsePair& pair);

struct PairMatch {
  std::size_t pred = 0;
  std::size_t gold = 0;
  double f1 = 0.0;
};

// Repeatedly takes the highest-F1 remaining (pred, gold) pair; ties go to the
// lowest pred index, then the lowest gold index.
std::vector<PairMatch> greedy_pair_matching(const std::vector<InstructionResponsePair>& pred,
                                            const std::vector<InstructionResponsePair>& gold,
                                            const F1Options& opts = {});

// Match: sum of matched F1 / max(|pred|, |gold|). Concat: F1 of the two
// flattened sets joined by spaces. Empty vs empty: 1.
double pair_set_quality(const std::vector<InstructionResponsePair>& pred,
                        const std::vector<InstructionResponsePair>& gold,
                        PairQualityMode mode = PairQualityMode::Match, const F1Options& opts = {});

// Text, synthesized pairs, then the test instruction left open for the
// response, laid out with the entry's templates. With no pairs this is the
// text followed by the instruction alone.
std::string build_helpfulness_prompt(std::string_view text, const std::vector<InstructionResponsePair>& pairs,
                                     std::string_view test_instruction, const TemplateEntry& entry);

// Same layout, but the pairs come from a seeded choice of another document.
// Needs at least two documents.
std::string build_random_context_prompt(const std::vector<SynthesisExample>& docs, std::size_t target,
                                        std::string_view test_instruction, const TemplateEntry& entry,
                                        std::uint64_t seed);

struct DomainLabelSet {
  std::string doc_id;
  std::set<std::string> text_domains;
  std::set<std::string> instruction_domains;
};

// |text ∩ instruction| / |text|. Throws EmptyTextDomains.
double domain_coverage(const DomainLabelSet& d);
// |text ∩ instruction| / |text ∪ instruction|. Throws EmptyUnion.
double domain_overlap(const DomainLabelSet& d);
// Mean coverage over rows with two or more text domains; nullopt when there are none.
std::optional<double> coverage_multidomain_mean(const std::vector<DomainLabelSet>& rows);

struct DomainReport {
  std::size_t rows = 0;
  std::optional<double> coverage;               // over rows with text domains
  std::optional<double> coverage_multidomain;
  std::optional<double> overlap;                // over rows with a non-empty union
  std::size_t rows_without_text_domains = 0;
  std::size_t multidomain_rows = 0;
};

DomainReport domain_report(const std::vector<DomainLabelSet>& rows);
json domain_report_to_json(const DomainReport& r);  // missing aggregates are null

// {"doc_id" | "id", "text_domains": [...], "instruction_domains": [...]} per line.
DomainLabelSet domain_labels_from_json(const json& j);
std::vector<DomainLabelSet> load_domain_labels(const std::string& path);

}  // namespace instructpt
