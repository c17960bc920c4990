#include "instructpt/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include "instructpt/error.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

std::string normalize_answer(std::string_view text, const F1Options& opts) {
  std::string out;
  for (const auto& tok : answer_tokens(text, opts)) {
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

std::vector<std::string> answer_tokens(std::string_view text, const F1Options& opts) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (!(opts.remove_articles && (cur == "a" || cur == "an" || cur == "the"))) tokens.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(ch)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch;
    }
  }
  flush();
  return tokens;
}

double token_f1(std::string_view pred, std::string_view gold, const F1Options& opts) {
  auto p = answer_tokens(pred, opts);
  auto g = answer_tokens(gold, opts);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, std::size_t> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

EvalReport make_report(std::vector<double> scores) {
  EvalReport r;
  r.count = scores.size();
  if (!scores.empty()) r.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  r.per_item = std::move(scores);
  return r;
}

EvalReport response_accuracy(const std::vector<std::pair<std::string, std::string>>& items, const F1Options& opts) {
  std::vector<double> scores;
  scores.reserve(items.size());
  for (const auto& [pred, gold] : items) scores.push_back(token_f1(pred, gold, opts));
  return make_report(std::move(scores));
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

json eval_report_to_json(const EvalReport& r) {
  return {{"count", r.count}, {"mean", r.mean}, {"mean_percent", format_percent(r.mean)}, {"per_item", r.per_item}};
}

std::string flatten_pair(const InstructionResponsePair& pair) { return pair.instruction + " " + pair.response; }

std::vector<PairMatch> greedy_pair_matching(const std::vector<InstructionResponsePair>& pred,
                                            const std::vector<InstructionResponsePair>& gold,
                                            const F1Options& opts) {
  std::vector<std::vector<double>> f1(pred.size(), std::vector<double>(gold.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < gold.size(); ++j) f1[i][j] = token_f1(flatten_pair(pred[i]), flatten_pair(gold[j]), opts);
  }
  std::vector<bool> pred_used(pred.size()), gold_used(gold.size());
  std::vector<PairMatch> matches;
  const std::size_t rounds = std::min(pred.size(), gold.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    PairMatch best{0, 0, -1.0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred_used[i]) continue;
      for (std::size_t j = 0; j < gold.size(); ++j) {
        if (!gold_used[j] && f1[i][j] > best.f1) best = {i, j, f1[i][j]};
      }
    }
    pred_used[best.pred] = gold_used[best.gold] = true;
    matches.push_back(best);
  }
  return matches;
}

double pair_set_quality(const std::vector<InstructionResponsePair>& pred,
                        const std::vector<InstructionResponsePair>& gold, PairQualityMode mode,
                        const F1Options& opts) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (mode == PairQualityMode::Concat) {
    auto join = [](const std::vector<InstructionResponsePair>& pairs) {
      std::string s;
      for (const auto& p : pairs) s += flatten_pair(p) + " ";
      return s;
    };
    return token_f1(join(pred), join(gold), opts);
  }
  double total = 0.0;
  for (const auto& m : greedy_pair_matching(pred, gold, opts)) total += m.f1;
  return total / static_cast<double>(std::max(pred.size(), gold.size()));
}

std::string build_helpfulness_prompt(std::string_view text, const std::vector<InstructionResponsePair>& pairs,
                                     std::string_view test_instruction, const TemplateEntry& entry) {
  std::string block;
  for (const auto& p : pairs) {
    block += render_pair_with_template(p, entry);
    block += entry.pair_joiner;
  }
  InstructionResponsePair probe;
  probe.instruction = std::string(test_instruction);
  block += render_instruction_prefix(probe, entry);
  return render_concat(text, block, entry);
}

std::string build_random_context_prompt(const std::vector<SynthesisExample>& docs, std::size_t target,
                                        std::string_view test_instruction, const TemplateEntry& entry,
                                        std::uint64_t seed) {
  if (docs.size() < 2) throw Error(ErrorCode::InvalidArgument, "random-context prompts need at least two documents");
  if (target >= docs.size()) throw Error(ErrorCode::InvalidArgument, "target document index out of range");
  SeededRng rng(derive_seed(derive_seed(seed, "random-context"), target));
  auto donor = static_cast<std::size_t>(rng.uniform(docs.size() - 1));
  if (donor >= target) ++donor;
  return build_helpfulness_prompt(docs[target].text, docs[donor].pairs, test_instruction, entry);
}

namespace {

std::size_t intersection_size(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t n = 0;
  for (const auto& x : a) n += b.count(x);
  return n;
}

}  // namespace

double domain_coverage(const DomainLabelSet& d) {
  if (d.text_domains.empty()) {
    throw Error(ErrorCode::EmptyTextDomains, "document '" + d.doc_id + "' has no text domains");
  }
  return static_cast<double>(intersection_size(d.text_domains, d.instruction_domains)) /
         static_cast<double>(d.text_domains.size());
}

double domain_overlap(const DomainLabelSet& d) {
  const auto inter = intersection_size(d.text_domains, d.instruction_domains);
  const auto uni = d.text_domains.size() + d.instruction_domains.size() - inter;
  if (uni == 0) throw Error(ErrorCode::EmptyUnion, "document '" + d.doc_id + "' has no domains at all");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> coverage_multidomain_mean(const std::vector<DomainLabelSet>& rows) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.text_domains.size() < 2) continue;
    sum += domain_coverage(r);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

DomainReport domain_report(const std::vector<DomainLabelSet>& rows) {
  DomainReport rep;
  rep.rows = rows.size();
  double cov = 0.0, ovl = 0.0;
  std::size_t n_cov = 0, n_ovl = 0;
  for (const auto& r : rows) {
    if (r.text_domains.empty()) {
      ++rep.rows_without_text_domains;
    } else {
      cov += domain_coverage(r);
      ++n_cov;
    }
    if (!r.text_domains.empty() || !r.instruction_domains.empty()) {
      ovl += domain_overlap(r);
      ++n_ovl;
    }
    if (r.text_domains.size() >= 2) ++rep.multidomain_rows;
  }
  if (n_cov) rep.coverage = cov / static_cast<double>(n_cov);
  if (n_ovl) rep.overlap = ovl / static_cast<double>(n_ovl);
  rep.coverage_multidomain = coverage_multidomain_mean(rows);
  return rep;
}

json domain_report_to_json(const DomainReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"rows", r.rows},
          {"coverage", opt(r.coverage)},
          {"coverage_multidomain", opt(r.coverage_multidomain)},
          {"overlap", opt(r.overlap)},
          {"rows_without_text_domains", r.rows_without_text_domains},
          {"multidomain_rows", r.multidomain_rows}};
}

DomainLabelSet domain_labels_from_json(const json& j) {
  DomainLabelSet d;
  try {
    d.doc_id = j.contains("doc_id") ? j.at("doc_id").get<std::string>() : j.value("id", std::string());
    for (const auto& s : j.at("text_domains")) d.text_domains.insert(s.get<std::string>());
    for (const auto& s : j.at("instruction_domains")) d.instruction_domains.insert(s.get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("domain label row: ") + e.what());
  }
  return d;
}

std::vector<DomainLabelSet> load_domain_labels(const std::string& path) {
  std::vector<DomainLabelSet> rows;
  for (const auto& j : read_jsonl(path)) rows.push_back(domain_labels_from_json(j));
  return rows;
}

}  // namespace instructpt
