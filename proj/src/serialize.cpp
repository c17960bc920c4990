#include "instructpt/serialize.hpp"

#include <set>

#include "instructpt/error.hpp"
#include "instructpt/util.hpp"

namespace instructpt {
namespace {

const std::string& require_string(const json& j, const char* key, const char* what) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw Error(ErrorCode::SchemaViolation, std::string(what) + " needs string field '" + key + "'");
  }
  return it->get_ref<const std::string&>();
}

}  // namespace

json pair_to_json(const InstructionResponsePair& pair) {
  json j = {{"instruction", pair.instruction},
            {"response", pair.response},
            {"format", std::string(pair_format_name(pair.format))}};
  if (!pair.options.empty()) j["options"] = pair.options;
  if (!pair.cot.empty()) j["cot"] = pair.cot;
  return j;
}

InstructionResponsePair pair_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaViolation, "pair must be an object");
  InstructionResponsePair p;
  p.instruction = require_string(j, "instruction", "pair");
  p.response = require_string(j, "response", "pair");
  if (auto it = j.find("options"); it != j.end()) {
    if (!it->is_array()) throw Error(ErrorCode::SchemaViolation, "pair options must be an array");
    for (const auto& o : *it) {
      if (!o.is_string()) throw Error(ErrorCode::SchemaViolation, "pair options must be strings");
      p.options.push_back(o.get<std::string>());
    }
  }
  if (auto it = j.find("cot"); it != j.end()) {
    if (!it->is_string()) throw Error(ErrorCode::SchemaViolation, "pair cot must be a string");
    p.cot = it->get<std::string>();
  }
  if (auto it = j.find("format"); it != j.end()) {
    if (!it->is_string()) throw Error(ErrorCode::SchemaViolation, "pair format must be a string");
    p.format = pair_format_from_name(it->get<std::string>());
  } else {
    const bool mc = !p.options.empty();
    const bool cot = !p.cot.empty();
    p.format = mc ? (cot ? PairFormat::MultipleChoiceCoT : PairFormat::MultipleChoice)
                  : (cot ? PairFormat::FreeFormCoT : PairFormat::FreeForm);
  }
  return p;
}

json example_to_json(const SynthesisExample& ex) {
  json pairs = json::array();
  for (const auto& p : ex.pairs) pairs.push_back(pair_to_json(p));
  return {{"source_id", ex.source_id}, {"dataset_id", ex.dataset_id}, {"text", ex.text}, {"pairs", pairs}};
}

SynthesisExample example_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaViolation, "example must be an object");
  SynthesisExample ex;
  ex.text = require_string(j, "text", "example");
  if (auto it = j.find("source_id"); it != j.end() && it->is_string()) {
    ex.source_id = it->get<std::string>();
  } else if (auto id = j.find("id"); id != j.end() && id->is_string()) {
    ex.source_id = id->get<std::string>();
  }
  if (auto it = j.find("dataset_id"); it != j.end() && it->is_string()) ex.dataset_id = it->get<std::string>();
  if (auto it = j.find("pairs"); it != j.end()) {
    if (!it->is_array()) throw Error(ErrorCode::SchemaViolation, "example pairs must be an array");
    for (const auto& p : *it) ex.pairs.push_back(pair_from_json(p));
  }
  return ex;
}

json sentinels_to_json(const SentinelConfig& cfg) {
  return {{"example_open", cfg.example_open}, {"example_close", cfg.example_close},
          {"context_open", cfg.context_open}, {"context_close", cfg.context_close},
          {"que", cfg.que},                   {"ans", cfg.ans},
          {"end", cfg.end},                   {"joiner", cfg.joiner}};
}

SentinelConfig sentinels_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidSentinels, "sentinel config must be an object");
  SentinelConfig cfg;
  const std::pair<const char*, std::string*> fields[] = {
      {"example_open", &cfg.example_open}, {"example_close", &cfg.example_close},
      {"context_open", &cfg.context_open}, {"context_close", &cfg.context_close},
      {"que", &cfg.que},                   {"ans", &cfg.ans},
      {"end", &cfg.end},                   {"joiner", &cfg.joiner}};
  std::set<std::string> known;
  for (const auto& [key, dst] : fields) {
    known.insert(key);
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_string()) {
        throw Error(ErrorCode::InvalidSentinels, std::string("sentinel '") + key + "' must be a string");
      }
      *dst = it->get<std::string>();
    }
  }
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::InvalidSentinels, "unknown sentinel key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

SentinelConfig load_sentinel_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSentinels, path.string() + ": " + e.what());
  }
  return sentinels_from_json(j);
}

RawDocument raw_document_from_line(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!j.is_object()) {
    throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": expected an object");
  }
  RawDocument doc;
  auto id = j.find("id");
  auto text = j.find("text");
  if (id == j.end() || !id->is_string() || text == j.end() || !text->is_string()) {
    throw Error(ErrorCode::SchemaViolation,
                "line " + std::to_string(line_no) + ": raw document needs string fields 'id' and 'text'");
  }
  doc.id = id->get<std::string>();
  doc.text = text->get<std::string>();
  if (auto d = j.find("domains"); d != j.end() && !d->is_null()) {
    if (!d->is_array()) {
      throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": 'domains' must be an array");
    }
    for (const auto& x : *d) {
      if (!x.is_string()) {
        throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": domains must be strings");
      }
      doc.domains.push_back(x.get<std::string>());
    }
  }
  doc.line = line;
  return doc;
}

std::vector<RawDocument> load_corpus(const std::string& path) {
  std::vector<RawDocument> docs;
  std::set<std::string> seen;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto doc = raw_document_from_line(lines[i], i + 1);
    if (!seen.insert(doc.id).second) {
      throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(i + 1) + ": duplicate id '" + doc.id + "'");
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<json> read_jsonl(const std::string& path) {
  std::vector<json> out;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      out.push_back(json::parse(lines[i]));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, path + " line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

std::string dump_line(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

}  // namespace instructpt
