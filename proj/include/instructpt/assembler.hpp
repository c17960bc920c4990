#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "instructpt/serialize.hpp"
#include "instructpt/template_engine.hpp"
#include "instructpt/token_counter.hpp"

namespace instructpt {

// One formatting style. Slots are written as {name}; braces that do not name a
// slot are literal text. Substitution is single pass, so slot-like text inside
// inserted content is never expanded.
struct TemplateEntry {
  std::string id;
  std::string concat;  // {text} and {pairs}, once each
  std::string pair;    // {instruction}, {options}, {cot}, {response}, once each
  std::string options_block = "\nOptions:\n{list}";
  std::string option_line = "- {option}";  // {option} required, {label} (a, b, c, ...) optional
  std::string cot_block = "Let's think first: {cot}\n";
  std::string pair_joiner = "\n\n";
  std::string shot_joiner = "\n\n";
};

struct TemplatePool {
  std::vector<TemplateEntry> entries;
};

struct AugmentedDocument {
  std::string text;
  std::size_t shots = 0;
  std::vector<std::string> source_ids;
  std::vector<std::string> template_ids;  // one per shot
  std::size_t token_count = 0;
};

// Throws TemplateSlotMissing naming the entry and slot.
void check_template_entry(const TemplateEntry& entry);

// Throws MalformedTemplate with the entry index on the first bad entry, on an
// empty pool, or on duplicate ids.
TemplatePool template_pool_from_json(const json& j);
TemplatePool load_template_pool(const std::filesystem::path& path);
json template_pool_to_json(const TemplatePool& pool);

// The six-entry pool shipped in data/templates/default_pool.json.
const TemplatePool& default_template_pool();

// "a", "b", ..., "z", "aa", "ab", ...
std::string option_label(std::size_t index);

std::string render_pair_with_template(const InstructionResponsePair& pair, const TemplateEntry& entry);

// The pair template cut just before its answer part, for prompting a model
// with a test instruction.
std::string render_instruction_prefix(const InstructionResponsePair& pair, const TemplateEntry& entry);

// The entry's concat template around an already rendered pairs block.
std::string render_concat(std::string_view text, std::string_view pairs_block, const TemplateEntry& entry);

std::string render_shot(const SynthesisExample& ex, const TemplateEntry& entry);

// Index of the pool entry a document built from these sources uses.
std::size_t choose_template(const std::vector<std::string>& source_ids, std::size_t pool_size,
                            std::uint64_t seed);

// Throws EmptyChain, InvalidArgument (element without pairs), TemplateSlotMissing.
AugmentedDocument assemble_mshot(const std::vector<SynthesisExample>& chain, const TemplatePool& pool,
                                 std::uint64_t seed, const TokenCounter& counter = WordCounter{});

// {"text", "meta": {"shots", "source_ids", "template_id", "token_count"}}
json augmented_to_json(const AugmentedDocument& doc);

}  // namespace instructpt
