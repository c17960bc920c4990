#include "instructpt/assembler.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "instructpt/default_pool.hpp"
#include "instructpt/error.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

namespace {

std::size_t count_slot(std::string_view tmpl, std::string_view slot) {
  const std::string token = "{" + std::string(slot) + "}";
  std::size_t n = 0;
  for (auto pos = tmpl.find(token); pos != std::string_view::npos; pos = tmpl.find(token, pos + token.size())) {
    ++n;
  }
  return n;
}

std::string substitute(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

void require_once(const TemplateEntry& e, std::string_view field, std::string_view tmpl, std::string_view slot) {
  const auto n = count_slot(tmpl, slot);
  if (n != 1) {
    throw Error(ErrorCode::TemplateSlotMissing, "template '" + e.id + "' field '" + std::string(field) +
                                                    "' must contain {" + std::string(slot) + "} exactly once, found " +
                                                    std::to_string(n));
  }
}

std::string render_options(const InstructionResponsePair& pair, const TemplateEntry& entry) {
  if (pair.options.empty()) return {};
  std::string list;
  for (std::size_t i = 0; i < pair.options.size(); ++i) {
    if (i) list += '\n';
    list += substitute(entry.option_line, {{"label", option_label(i)}, {"option", pair.options[i]}});
  }
  return substitute(entry.options_block, {{"list", list}});
}

}  // namespace

void check_template_entry(const TemplateEntry& e) {
  if (e.id.empty()) throw Error(ErrorCode::TemplateSlotMissing, "template id is empty");
  require_once(e, "concat", e.concat, "text");
  require_once(e, "concat", e.concat, "pairs");
  for (auto slot : {"instruction", "options", "cot", "response"}) require_once(e, "pair", e.pair, slot);
  require_once(e, "options_block", e.options_block, "list");
  require_once(e, "option_line", e.option_line, "option");
  if (count_slot(e.option_line, "label") > 1) {
    throw Error(ErrorCode::TemplateSlotMissing, "template '" + e.id + "' option_line repeats {label}");
  }
  require_once(e, "cot_block", e.cot_block, "cot");
}

TemplatePool template_pool_from_json(const json& j) {
  if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array()) {
    throw Error(ErrorCode::MalformedTemplate, "template pool needs an 'entries' array");
  }
  const auto& arr = j["entries"];
  if (arr.empty()) throw Error(ErrorCode::MalformedTemplate, "template pool has no entries");
  static const std::set<std::string> known = {"id",          "concat",    "pair",        "options_block",
                                              "option_line", "cot_block", "pair_joiner", "shot_joiner"};
  TemplatePool pool;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto where = "template entry " + std::to_string(i);
    const auto& item = arr[i];
    try {
      if (!item.is_object()) throw Error(ErrorCode::MalformedTemplate, "not an object");
      for (const auto& [key, value] : item.items()) {
        if (!known.count(key)) throw Error(ErrorCode::MalformedTemplate, "unknown field '" + key + "'");
        if (!value.is_string()) throw Error(ErrorCode::MalformedTemplate, "field '" + key + "' must be a string");
      }
      for (auto field : {"id", "concat", "pair"}) {
        if (!item.contains(field)) throw Error(ErrorCode::MalformedTemplate, std::string("missing '") + field + "'");
      }
      TemplateEntry e;
      e.id = item["id"].get<std::string>();
      e.concat = item["concat"].get<std::string>();
      e.pair = item["pair"].get<std::string>();
      e.options_block = item.value("options_block", e.options_block);
      e.option_line = item.value("option_line", e.option_line);
      e.cot_block = item.value("cot_block", e.cot_block);
      e.pair_joiner = item.value("pair_joiner", e.pair_joiner);
      e.shot_joiner = item.value("shot_joiner", e.shot_joiner);
      check_template_entry(e);
      if (!ids.insert(e.id).second) throw Error(ErrorCode::MalformedTemplate, "duplicate id '" + e.id + "'");
      pool.entries.push_back(std::move(e));
    } catch (const Error& err) {
      throw Error(ErrorCode::MalformedTemplate, where + ": " + err.what());
    }
  }
  return pool;
}

TemplatePool load_template_pool(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedTemplate, path.string() + ": " + e.what());
  }
  return template_pool_from_json(j);
}

json template_pool_to_json(const TemplatePool& pool) {
  json arr = json::array();
  for (const auto& e : pool.entries) {
    arr.push_back({{"id", e.id},
                   {"concat", e.concat},
                   {"pair", e.pair},
                   {"options_block", e.options_block},
                   {"option_line", e.option_line},
                   {"cot_block", e.cot_block},
                   {"pair_joiner", e.pair_joiner},
                   {"shot_joiner", e.shot_joiner}});
  }
  return {{"entries", arr}};
}

const TemplatePool& default_template_pool() {
  static const TemplatePool pool = template_pool_from_json(json::parse(detail::kDefaultPoolJson));
  return pool;
}

std::string option_label(std::size_t index) {
  std::string label;
  ++index;
  while (index > 0) {
    --index;
    label.insert(label.begin(), static_cast<char>('a' + index % 26));
    index /= 26;
  }
  return label;
}

std::string render_pair_with_template(const InstructionResponsePair& pair, const TemplateEntry& entry) {
  const std::string cot = pair.cot.empty() ? "" : substitute(entry.cot_block, {{"cot", pair.cot}});
  return substitute(entry.pair, {{"instruction", pair.instruction},
                                 {"options", render_options(pair, entry)},
                                 {"cot", cot},
                                 {"response", pair.response}});
}

std::string render_instruction_prefix(const InstructionResponsePair& pair, const TemplateEntry& entry) {
  const auto cut = std::min(entry.pair.find("{cot}"), entry.pair.find("{response}"));
  return substitute(entry.pair.substr(0, cut),
                    {{"instruction", pair.instruction}, {"options", render_options(pair, entry)}});
}

std::string render_concat(std::string_view text, std::string_view pairs_block, const TemplateEntry& entry) {
  return substitute(entry.concat, {{"text", std::string(text)}, {"pairs", std::string(pairs_block)}});
}

std::string render_shot(const SynthesisExample& ex, const TemplateEntry& entry) {
  std::string pairs;
  for (std::size_t i = 0; i < ex.pairs.size(); ++i) {
    if (i) pairs += entry.pair_joiner;
    pairs += render_pair_with_template(ex.pairs[i], entry);
  }
  return render_concat(ex.text, pairs, entry);
}

std::size_t choose_template(const std::vector<std::string>& source_ids, std::size_t pool_size, std::uint64_t seed) {
  std::string key;
  for (const auto& id : source_ids) {
    key += id;
    key += '\x1f';
  }
  SeededRng rng(derive_seed(seed, fnv1a64(key)));
  return static_cast<std::size_t>(rng.uniform(pool_size));
}

AugmentedDocument assemble_mshot(const std::vector<SynthesisExample>& chain, const TemplatePool& pool,
                                 std::uint64_t seed, const TokenCounter& counter) {
  if (chain.empty()) throw Error(ErrorCode::EmptyChain, "cannot assemble an empty chain");
  if (pool.entries.empty()) throw Error(ErrorCode::InvalidArgument, "template pool is empty");
  AugmentedDocument doc;
  for (const auto& ex : chain) {
    if (ex.pairs.empty()) {
      throw Error(ErrorCode::InvalidArgument, "chain element '" + ex.source_id + "' has no pairs");
    }
    doc.source_ids.push_back(ex.source_id);
  }
  const auto& entry = pool.entries[choose_template(doc.source_ids, pool.entries.size(), seed)];
  check_template_entry(entry);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    if (i) doc.text += entry.shot_joiner;
    doc.text += render_shot(chain[i], entry);
  }
  doc.shots = chain.size();
  doc.template_ids.assign(chain.size(), entry.id);
  doc.token_count = counter.count(doc.text);
  return doc;
}

json augmented_to_json(const AugmentedDocument& doc) {
  return {{"text", doc.text},
          {"meta",
           {{"shots", doc.shots},
            {"source_ids", doc.source_ids},
            {"template_id", doc.template_ids.empty() ? "" : doc.template_ids.front()},
            {"token_count", doc.token_count}}}};
}

}  // namespace instructpt
