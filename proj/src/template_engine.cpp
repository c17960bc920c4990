#include "instructpt/template_engine.hpp"

#include <algorithm>

#include "instructpt/error.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

std::string_view pair_format_name(PairFormat format) {
  switch (format) {
    case PairFormat::FreeForm: return "free_form";
    case PairFormat::MultipleChoice: return "multiple_choice";
    case PairFormat::FreeFormCoT: return "free_form_cot";
    case PairFormat::MultipleChoiceCoT: return "multiple_choice_cot";
  }
  return "free_form";
}

PairFormat pair_format_from_name(std::string_view name) {
  if (name == "free_form") return PairFormat::FreeForm;
  if (name == "multiple_choice") return PairFormat::MultipleChoice;
  if (name == "free_form_cot") return PairFormat::FreeFormCoT;
  if (name == "multiple_choice_cot") return PairFormat::MultipleChoiceCoT;
  throw Error(ErrorCode::SchemaViolation, "unknown pair format '" + std::string(name) + "'");
}

std::string_view parse_issue_name(ParseIssueKind kind) {
  switch (kind) {
    case ParseIssueKind::TruncatedPair: return "TruncatedPair";
    case ParseIssueKind::MissingAnswer: return "MissingAnswer";
    case ParseIssueKind::MissingCotMarker: return "MissingCotMarker";
    case ParseIssueKind::MalformedOptions: return "MalformedOptions";
    case ParseIssueKind::StraySentinel: return "StraySentinel";
    case ParseIssueKind::AmbiguousContent: return "AmbiguousContent";
  }
  return "Unknown";
}

std::array<std::string_view, 7> SentinelConfig::reserved() const {
  return {example_open, example_close, context_open, context_close, que, ans, end};
}

void SentinelConfig::validate() const {
  const std::array<std::pair<std::string_view, std::string_view>, 8> named = {{
      {"example_open", example_open},
      {"example_close", example_close},
      {"context_open", context_open},
      {"context_close", context_close},
      {"que", que},
      {"ans", ans},
      {"end", end},
      {"joiner", joiner},
  }};
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (named[i].second.empty()) {
      throw Error(ErrorCode::InvalidSentinels, "sentinel '" + std::string(named[i].first) + "' is empty");
    }
    for (std::size_t j = i + 1; j < named.size(); ++j) {
      if (named[i].second == named[j].second) {
        throw Error(ErrorCode::InvalidSentinels, "sentinels '" + std::string(named[i].first) + "' and '" +
                                                     std::string(named[j].first) + "' are identical");
      }
    }
  }
  // The parser locates delimiters by substring search, so no delimiter may hide inside another.
  auto res = reserved();
  for (std::size_t i = 0; i < res.size(); ++i) {
    for (std::size_t j = 0; j < res.size(); ++j) {
      if (i != j && res[j].find(res[i]) != std::string_view::npos) {
        throw Error(ErrorCode::InvalidSentinels, "sentinel '" + std::string(res[i]) +
                                                     "' occurs inside sentinel '" + std::string(res[j]) + "'");
      }
    }
  }
}

bool contains_sentinel(std::string_view text, const SentinelConfig& cfg) {
  for (auto s : cfg.reserved()) {
    if (text.find(s) != std::string_view::npos) return true;
  }
  return false;
}

namespace {

std::string first_sentinel_in(std::string_view text, const SentinelConfig& cfg) {
  for (auto s : cfg.reserved()) {
    if (text.find(s) != std::string_view::npos) return std::string(s);
  }
  return {};
}

void check_field(std::string_view field, std::string_view name, const SentinelConfig& cfg) {
  auto hit = first_sentinel_in(field, cfg);
  if (!hit.empty()) {
    throw Error(ErrorCode::SentinelCollision, std::string(name) + " contains reserved sentinel '" + hit + "'");
  }
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string render_pair_unchecked(const InstructionResponsePair& pair, const SentinelConfig& cfg) {
  std::string out;
  out.reserve(pair.instruction.size() + pair.response.size() + pair.cot.size() + 64);
  out += cfg.que;
  out += ' ';
  out += pair.instruction;
  if (has_options(pair.format)) {
    out += '\n';
    out += kOptionsHeader;
    for (const auto& opt : pair.options) {
      out += '\n';
      out += kOptionPrefix;
      out += opt;
    }
  }
  if (has_cot(pair.format)) {
    out += '\n';
    out += kStepByStep;
  }
  out += ' ';
  out += cfg.ans;
  out += ' ';
  if (has_cot(pair.format)) {
    out += pair.cot;
    out += '\n';
    out += kAnswerMarker;
    out += ' ';
  }
  out += pair.response;
  out += ' ';
  out += cfg.end;
  return out;
}

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (true) {
    auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(s.substr(start));
      break;
    }
    lines.push_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

// Parses the body between "<QUE>" and "</END>" (exclusive). Returns false if the
// span is dropped.
bool parse_pair_body(std::string_view body, std::size_t offset, const SentinelConfig& cfg,
                     InstructionResponsePair& out, std::vector<ParseIssue>& issues) {
  auto ans_pos = body.find(cfg.ans);
  if (ans_pos == std::string_view::npos) {
    issues.push_back({ParseIssueKind::MissingAnswer, offset, "pair has no answer delimiter"});
    return false;
  }
  std::string question = trim(body.substr(0, ans_pos));
  std::string answer = trim(body.substr(ans_pos + cfg.ans.size()));

  bool cot = false;
  if (ends_with(question, kStepByStep)) {
    cot = true;
    question = trim(std::string_view(question).substr(0, question.size() - kStepByStep.size()));
  }

  std::vector<std::string> options;
  std::string instruction = question;
  {
    auto lines = split_lines(question);
    std::size_t header = lines.size();
    for (std::size_t i = lines.size(); i-- > 0;) {
      if (trim(lines[i]) == kOptionsHeader) {
        header = i;
        break;
      }
    }
    if (header < lines.size()) {
      bool ok = header + 1 < lines.size();
      std::vector<std::string> parsed;
      for (std::size_t i = header + 1; ok && i < lines.size(); ++i) {
        std::string_view line = lines[i];
        if (line.substr(0, kOptionPrefix.size()) != kOptionPrefix) {
          ok = false;
          break;
        }
        parsed.push_back(trim(line.substr(kOptionPrefix.size())));
      }
      if (ok) {
        options = std::move(parsed);
        std::string head;
        for (std::size_t i = 0; i < header; ++i) {
          if (i) head += '\n';
          head += lines[i];
        }
        instruction = trim(head);
      } else {
        issues.push_back({ParseIssueKind::MalformedOptions, offset,
                          "options block has a line without the option prefix; kept as free-form"});
      }
    }
  }

  std::string response = answer;
  std::string cot_text;
  if (cot) {
    auto marker = answer.rfind(kAnswerMarker);
    if (marker == std::string::npos) {
      issues.push_back({ParseIssueKind::MissingCotMarker, offset,
                        "chain-of-thought answer lacks the answer marker; downgraded"});
      cot = false;
    } else {
      cot_text = trim(std::string_view(answer).substr(0, marker));
      response = trim(std::string_view(answer).substr(marker + kAnswerMarker.size()));
      if (cot_text.empty()) {
        issues.push_back({ParseIssueKind::MissingCotMarker, offset,
                          "empty chain-of-thought before the answer marker; downgraded"});
        cot = false;
      }
    }
  }

  const bool mc = !options.empty();
  out.instruction = std::move(instruction);
  out.response = std::move(response);
  out.options = std::move(options);
  out.cot = cot ? std::move(cot_text) : std::string();
  out.format = mc ? (cot ? PairFormat::MultipleChoiceCoT : PairFormat::MultipleChoice)
                  : (cot ? PairFormat::FreeFormCoT : PairFormat::FreeForm);

  auto stray = [&](std::string_view s) { return contains_sentinel(s, cfg); };
  bool bad = stray(out.instruction) || stray(out.response) || stray(out.cot) ||
             std::any_of(out.options.begin(), out.options.end(), stray);
  if (bad) {
    issues.push_back({ParseIssueKind::StraySentinel, offset, "pair field contains a reserved sentinel"});
    return false;
  }
  return true;
}

InstructionResponsePair trimmed(const InstructionResponsePair& p) {
  InstructionResponsePair t = p;
  t.instruction = trim(t.instruction);
  t.response = trim(t.response);
  t.cot = trim(t.cot);
  for (auto& o : t.options) o = trim(o);
  return t;
}

}  // namespace

std::string sanitize_text(std::string_view text, const SentinelConfig& cfg, SanitizePolicy policy) {
  if (!contains_sentinel(text, cfg)) return std::string(text);
  if (policy == SanitizePolicy::Reject) {
    throw Error(ErrorCode::SentinelCollision,
                "text contains reserved sentinel '" + first_sentinel_in(text, cfg) + "'");
  }
  std::string out(text);
  for (int pass = 0; pass < 16 && contains_sentinel(out, cfg); ++pass) {
    for (auto s : cfg.reserved()) {
      std::string broken;
      broken.reserve(s.size() + 1);
      broken += s.front();
      broken += ' ';
      broken += s.substr(1);
      std::size_t pos = 0;
      while ((pos = out.find(s, pos)) != std::string::npos) {
        out.replace(pos, s.size(), broken);
        pos += broken.size();
      }
    }
  }
  if (contains_sentinel(out, cfg)) {
    throw Error(ErrorCode::SentinelCollision, "text could not be escaped");
  }
  return out;
}

void validate_pair(const InstructionResponsePair& pair, const SentinelConfig& cfg) {
  if (has_options(pair.format) == pair.options.empty()) {
    throw Error(ErrorCode::InvalidPair, std::string("options must be ") +
                                            (has_options(pair.format) ? "non-empty" : "empty") + " for format " +
                                            std::string(pair_format_name(pair.format)));
  }
  if (has_cot(pair.format) == trim(pair.cot).empty()) {
    throw Error(ErrorCode::InvalidPair, std::string("cot must be ") +
                                            (has_cot(pair.format) ? "non-empty" : "empty") + " for format " +
                                            std::string(pair_format_name(pair.format)));
  }
  check_field(pair.instruction, "instruction", cfg);
  check_field(pair.response, "response", cfg);
  check_field(pair.cot, "cot", cfg);
  for (const auto& opt : pair.options) {
    check_field(opt, "option", cfg);
    if (trim(opt).empty()) throw Error(ErrorCode::InvalidPair, "empty option");
    if (opt.find('\n') != std::string::npos) throw Error(ErrorCode::InvalidPair, "option spans several lines");
  }
  // Content that collides with the format markers (an "Options:" line inside a
  // free-form instruction, an answer marker inside a CoT response, ...) cannot
  // be told apart from template structure on the way back.
  std::vector<ParseIssue> issues;
  InstructionResponsePair back;
  auto rendered = render_pair_unchecked(pair, cfg);
  std::string_view body(rendered);
  body.remove_prefix(cfg.que.size());
  body.remove_suffix(cfg.end.size());
  if (!parse_pair_body(body, 0, cfg, back, issues) || !issues.empty() || !(back == trimmed(pair))) {
    throw Error(ErrorCode::InvalidPair, "pair content is ambiguous with the template markers");
  }
}

std::string render_pair(const InstructionResponsePair& pair, const SentinelConfig& cfg) {
  validate_pair(pair, cfg);
  return render_pair_unchecked(pair, cfg);
}

std::string render_pairs(const std::vector<InstructionResponsePair>& pairs, const SentinelConfig& cfg) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i) out += cfg.joiner;
    out += render_pair(pairs[i], cfg);
  }
  return out;
}

std::string render_context_stub(std::string_view text, const SentinelConfig& cfg) {
  check_field(text, "text", cfg);
  std::string out;
  out.reserve(text.size() + 32);
  out += cfg.example_open;
  out += ' ';
  out += cfg.context_open;
  out += ' ';
  out += text;
  out += ' ';
  out += cfg.context_close;
  out += cfg.joiner;
  return out;
}

std::string render_example(const SynthesisExample& ex, const SentinelConfig& cfg) {
  check_field(ex.text, "text", cfg);
  std::string out;
  out += cfg.example_open;
  out += ' ';
  out += cfg.context_open;
  out += ' ';
  out += ex.text;
  out += ' ';
  out += cfg.context_close;
  for (const auto& pair : ex.pairs) {
    out += cfg.joiner;
    out += render_pair(pair, cfg);
  }
  out += ' ';
  out += cfg.example_close;
  return out;
}

ParsedPairs parse_pairs(std::string_view raw, const SentinelConfig& cfg) {
  ParsedPairs result;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    auto q = raw.find(cfg.que, pos);
    if (q == std::string_view::npos) break;
    const auto body_start = q + cfg.que.size();
    auto next_q = raw.find(cfg.que, body_start);
    auto e = raw.find(cfg.end, body_start);
    if (e == std::string_view::npos || (next_q != std::string_view::npos && next_q < e)) {
      result.issues.push_back({ParseIssueKind::TruncatedPair, q, "pair has no end delimiter"});
      pos = next_q == std::string_view::npos ? raw.size() : next_q;
      continue;
    }
    InstructionResponsePair pair;
    if (parse_pair_body(raw.substr(body_start, e - body_start), q, cfg, pair, result.issues)) {
      result.pairs.push_back(std::move(pair));
    }
    pos = e + cfg.end.size();
  }
  return result;
}

SynthesisExample parse_example(std::string_view raw, const SentinelConfig& cfg, std::vector<ParseIssue>* issues) {
  auto open = raw.find(cfg.context_open);
  if (open == std::string_view::npos) {
    throw Error(ErrorCode::MissingContext, "no context span");
  }
  if (raw.find(cfg.context_open, open + cfg.context_open.size()) != std::string_view::npos) {
    throw Error(ErrorCode::AmbiguousContext, "more than one context span");
  }
  const auto text_start = open + cfg.context_open.size();
  auto close = raw.find(cfg.context_close, text_start);
  if (close == std::string_view::npos) {
    throw Error(ErrorCode::MissingContext, "context span is not closed");
  }
  SynthesisExample ex;
  ex.text = trim(raw.substr(text_start, close - text_start));
  auto tail_start = close + cfg.context_close.size();
  auto parsed = parse_pairs(raw.substr(tail_start), cfg);
  ex.pairs = std::move(parsed.pairs);
  if (issues) {
    for (auto& issue : parsed.issues) {
      issue.offset += tail_start;
      issues->push_back(std::move(issue));
    }
  }
  return ex;
}

}  // namespace instructpt
