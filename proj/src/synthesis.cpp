#include "instructpt/synthesis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "instructpt/util.hpp"

namespace instructpt {

std::vector<std::size_t> partition_sizes(std::size_t n, std::size_t rounds) {
  if (rounds == 0) throw Error(ErrorCode::InvalidArgument, "num_rounds must be at least 1");
  std::vector<std::size_t> sizes(rounds, n / rounds);
  for (std::size_t i = 0; i < n % rounds; ++i) ++sizes[i];
  return sizes;
}

std::size_t conversion_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "fraction must be in (0, 1]");
  }
  const long double exact = static_cast<long double>(n) * static_cast<long double>(fraction);
  auto k = static_cast<std::size_t>(std::floor(exact + 1e-9L));
  return std::min(k, n);
}

ConversionSplit select_for_conversion(const std::vector<std::string>& doc_ids, double fraction, std::uint64_t seed) {
  const std::size_t k = conversion_count(doc_ids.size(), fraction);
  std::vector<std::size_t> order(doc_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SeededRng rng(derive_seed(seed, "convert"));
  rng.shuffle(order);
  std::vector<bool> chosen(doc_ids.size(), false);
  for (std::size_t i = 0; i < k; ++i) chosen[order[i]] = true;
  ConversionSplit split;
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    (chosen[i] ? split.selected : split.passthrough).push_back(doc_ids[i]);
  }
  return split;
}

RoundPlan plan_rounds(const std::vector<std::string>& doc_ids, std::size_t num_rounds, std::uint64_t seed,
                      std::size_t max_prompt_tokens) {
  if (num_rounds == 0) throw Error(ErrorCode::InvalidArgument, "num_rounds must be at least 1");
  if (doc_ids.size() < num_rounds) {
    throw Error(ErrorCode::InsufficientDocuments, std::to_string(doc_ids.size()) + " documents cannot fill " +
                                                      std::to_string(num_rounds) + " rounds");
  }
  std::vector<std::string> ids = doc_ids;
  SeededRng rng(derive_seed(seed, "plan"));
  rng.shuffle(ids);
  RoundPlan plan;
  plan.num_rounds = num_rounds;
  plan.seed = seed;
  plan.max_prompt_tokens = max_prompt_tokens == 0 ? std::numeric_limits<std::size_t>::max() : max_prompt_tokens;
  std::size_t cursor = 0;
  for (std::size_t size : partition_sizes(ids.size(), num_rounds)) {
    plan.partitions.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 ids.begin() + static_cast<std::ptrdiff_t>(cursor + size));
    cursor += size;
  }
  return plan;
}

InferencePrompt build_inference_prompt_ex(const ChainState& state, std::string_view current_text,
                                          const SentinelConfig& cfg, std::size_t budget,
                                          const TokenCounter& counter) {
  const std::string stub = render_context_stub(current_text, cfg);
  if (counter.count(stub) > budget) {
    throw Error(ErrorCode::PromptTooLong, "current text alone needs " + std::to_string(counter.count(stub)) +
                                              " tokens, budget is " + std::to_string(budget));
  }
  std::vector<std::string> rendered;
  rendered.reserve(state.history.size());
  for (const auto& h : state.history) rendered.push_back(render_example(h, cfg));

  for (std::size_t first = 0; first <= rendered.size(); ++first) {
    std::string prompt;
    for (std::size_t i = first; i < rendered.size(); ++i) prompt += rendered[i];
    prompt += stub;
    if (first == rendered.size() || counter.count(prompt) <= budget) {
      return {std::move(prompt), rendered.size() - first};
    }
  }
  return {stub, 0};  // unreachable: the bare stub fits
}

std::string build_inference_prompt(const ChainState& state, std::string_view current_text,
                                   const SentinelConfig& cfg, std::size_t budget, const TokenCounter& counter) {
  return build_inference_prompt_ex(state, current_text, cfg, budget, counter).text;
}

std::map<std::string, ChainState> assign_chains(const RoundPlan& plan, std::size_t round_idx,
                                                const std::vector<ChainState>& prior_chains, std::uint64_t seed) {
  const auto& current = plan.partitions.at(round_idx);
  std::map<std::string, ChainState> out;
  if (round_idx == 0) {
    for (const auto& id : current) out[id] = ChainState{};
    return out;
  }
  if (prior_chains.empty()) {
    throw Error(ErrorCode::NoPriorOutputs, "round " + std::to_string(round_idx) +
                                               " has no successful documents from the previous round to build on");
  }
  std::vector<std::size_t> perm(prior_chains.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  SeededRng rng(derive_seed(derive_seed(seed, "chains"), round_idx));
  rng.shuffle(perm);
  for (std::size_t i = 0; i < current.size(); ++i) out[current[i]] = prior_chains[perm[i % perm.size()]];
  return out;
}

std::string_view doc_status_name(DocStatus status) {
  switch (status) {
    case DocStatus::Ok: return "ok";
    case DocStatus::EmptySynthesis: return "EmptySynthesis";
    case DocStatus::BackendFailed: return "BackendError";
    case DocStatus::PromptTooLong: return "PromptTooLong";
    case DocStatus::SentinelCollision: return "SentinelCollision";
  }
  return "ok";
}

DocStatus doc_status_from_name(std::string_view name) {
  for (auto s : {DocStatus::Ok, DocStatus::EmptySynthesis, DocStatus::BackendFailed, DocStatus::PromptTooLong,
                 DocStatus::SentinelCollision}) {
    if (doc_status_name(s) == name) return s;
  }
  throw Error(ErrorCode::SchemaViolation, "unknown document status '" + std::string(name) + "'");
}

namespace {

ParseIssueKind parse_issue_from_name(std::string_view name) {
  for (auto k : {ParseIssueKind::TruncatedPair, ParseIssueKind::MissingAnswer, ParseIssueKind::MissingCotMarker,
                 ParseIssueKind::MalformedOptions, ParseIssueKind::StraySentinel, ParseIssueKind::AmbiguousContent}) {
    if (parse_issue_name(k) == name) return k;
  }
  throw Error(ErrorCode::SchemaViolation, "unknown parse issue '" + std::string(name) + "'");
}

}  // namespace

json record_to_json(const SynthesisRecord& r) {
  json issues = json::array();
  for (const auto& i : r.issues) {
    issues.push_back({{"kind", std::string(parse_issue_name(i.kind))}, {"offset", i.offset}, {"detail", i.detail}});
  }
  return {{"doc_id", r.doc_id},
          {"round", r.round},
          {"status", std::string(doc_status_name(r.status))},
          {"example", example_to_json(r.example)},
          {"history_ids", r.history_ids},
          {"history_used", r.history_used},
          {"attempts", r.attempts},
          {"issues", issues},
          {"error", r.error}};
}

SynthesisRecord record_from_json(const json& j) {
  SynthesisRecord r;
  try {
    r.doc_id = j.at("doc_id").get<std::string>();
    r.round = j.at("round").get<std::size_t>();
    r.status = doc_status_from_name(j.at("status").get<std::string>());
    r.example = example_from_json(j.at("example"));
    r.history_ids = j.at("history_ids").get<std::vector<std::string>>();
    r.history_used = j.at("history_used").get<std::size_t>();
    r.attempts = j.at("attempts").get<std::size_t>();
    for (const auto& i : j.at("issues")) {
      r.issues.push_back({parse_issue_from_name(i.at("kind").get<std::string>()), i.at("offset").get<std::size_t>(),
                          i.at("detail").get<std::string>()});
    }
    r.error = j.at("error").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("synthesis record: ") + e.what());
  }
  return r;
}

void ChainStore::add_round(std::vector<SynthesisRecord> records) {
  const std::size_t m = rounds_.size();
  for (std::size_t i = 0; i < records.size(); ++i) index_[records[i].doc_id] = {m, i};
  rounds_.push_back(std::move(records));
}

const SynthesisRecord* ChainStore::find(const std::string& doc_id) const {
  auto it = index_.find(doc_id);
  if (it == index_.end()) return nullptr;
  return &rounds_[it->second.first][it->second.second];
}

std::vector<SynthesisExample> ChainStore::chain_of(const std::string& doc_id) const {
  const auto* rec = find(doc_id);
  if (!rec) throw Error(ErrorCode::InvalidArgument, "unknown document '" + doc_id + "'");
  std::vector<SynthesisExample> chain;
  for (const auto& h : rec->history_ids) {
    const auto* prior = find(h);
    if (!prior) throw Error(ErrorCode::InvalidArgument, "chain references unknown document '" + h + "'");
    chain.push_back(prior->example);
  }
  chain.push_back(rec->example);
  return chain;
}

std::vector<ChainState> ChainStore::chains_ending_in(std::size_t m) const {
  std::vector<ChainState> out;
  for (const auto& rec : rounds_.at(m)) {
    if (rec.status == DocStatus::Ok) out.push_back(ChainState{chain_of(rec.doc_id)});
  }
  return out;
}

std::vector<std::vector<SynthesisExample>> ChainStore::leaf_chains() const {
  std::set<std::string> extended;
  for (const auto& round : rounds_) {
    for (const auto& rec : round) {
      if (rec.status == DocStatus::Ok && !rec.history_ids.empty()) extended.insert(rec.history_ids.back());
    }
  }
  std::vector<std::vector<SynthesisExample>> out;
  for (const auto& round : rounds_) {
    for (const auto& rec : round) {
      if (rec.status == DocStatus::Ok && !extended.count(rec.doc_id)) out.push_back(chain_of(rec.doc_id));
    }
  }
  return out;
}

namespace {

SynthesisRecord synthesize_one(const std::string& doc_id, std::size_t round_idx, const std::string& raw_text,
                               const ChainState& state, const RoundPlan& plan, CompletionBackend& backend,
                               const SentinelConfig& cfg, const TokenCounter& counter,
                               const SynthesisLimits& limits) {
  SynthesisRecord rec;
  rec.doc_id = doc_id;
  rec.round = round_idx;
  rec.example.source_id = doc_id;
  for (const auto& h : state.history) rec.history_ids.push_back(h.source_id);

  try {
    rec.example.text = sanitize_text(raw_text, cfg, limits.sanitize);
  } catch (const Error& e) {
    rec.status = DocStatus::SentinelCollision;
    rec.example.text = raw_text;
    rec.error = e.what();
    return rec;
  }

  try {
    auto prompt = build_inference_prompt_ex(state, rec.example.text, cfg, plan.max_prompt_tokens, counter);
    rec.prompt = std::move(prompt.text);
    rec.history_used = prompt.history_used;
  } catch (const Error& e) {
    rec.status = DocStatus::PromptTooLong;
    rec.error = e.what();
    return rec;
  }

  CompletionRequest request{rec.prompt, limits.max_new_tokens, {cfg.example_close}, limits.temperature};
  try {
    rec.generation = complete_with_retry(backend, request, limits.retry, &rec.attempts).text;
  } catch (const std::exception& e) {
    rec.status = DocStatus::BackendFailed;
    rec.error = e.what();
    return rec;
  }

  auto parsed = parse_pairs(rec.generation, cfg);
  rec.issues = std::move(parsed.issues);
  for (auto& pair : parsed.pairs) {
    try {
      validate_pair(pair, cfg);
      rec.example.pairs.push_back(std::move(pair));
    } catch (const Error& e) {
      rec.issues.push_back({ParseIssueKind::AmbiguousContent, 0, e.what()});
    }
  }
  if (rec.example.pairs.empty()) {
    rec.status = DocStatus::EmptySynthesis;
    rec.error = "no instruction-response pairs could be parsed from the generation";
  }
  return rec;
}

}  // namespace

RoundReport synthesize_round(const RoundPlan& plan, std::size_t round_idx,
                             const std::map<std::string, std::string>& corpus, const ChainStore& chains,
                             CompletionBackend& backend, const SentinelConfig& cfg, const TokenCounter& counter,
                             const SynthesisLimits& limits) {
  if (round_idx >= plan.partitions.size()) throw Error(ErrorCode::InvalidArgument, "round index out of range");
  if (chains.rounds() != round_idx) {
    throw Error(ErrorCode::InvalidArgument, "round " + std::to_string(round_idx) + " needs exactly " +
                                                std::to_string(round_idx) + " completed rounds");
  }
  std::vector<ChainState> prior;
  if (round_idx > 0) prior = chains.chains_ending_in(round_idx - 1);
  const auto assignment = assign_chains(plan, round_idx, prior, plan.seed);
  const auto& docs = plan.partitions[round_idx];

  RoundReport report;
  report.records.resize(docs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < docs.size(); i = next++) {
      try {
        const auto& id = docs[i];
        auto text = corpus.find(id);
        if (text == corpus.end()) throw Error(ErrorCode::InvalidArgument, "document '" + id + "' not in corpus");
        report.records[i] =
            synthesize_one(id, round_idx, text->second, assignment.at(id), plan, backend, cfg, counter, limits);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(limits.in_flight, docs.size()));
  {
    std::vector<std::jthread> pool;
    pool.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  for (const auto& r : report.records) (r.status == DocStatus::Ok ? report.ok : report.failed)++;
  return report;
}

namespace {

constexpr const char* kManifestName = "synthesis_manifest.json";

std::string round_file(std::size_t m) { return "round_" + std::to_string(m) + ".jsonl"; }
std::string prompts_file(std::size_t m) { return "prompts_" + std::to_string(m) + ".jsonl"; }

std::string records_jsonl(const std::vector<SynthesisRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += dump_line(record_to_json(r));
    out += '\n';
  }
  return out;
}

std::string prompts_jsonl(const std::vector<SynthesisRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += dump_line(json{{"doc_id", r.doc_id}, {"prompt", r.prompt}, {"generation", r.generation}});
    out += '\n';
  }
  return out;
}

std::optional<std::vector<SynthesisRecord>> load_round(const std::filesystem::path& dir, const json& entry) {
  try {
    const auto records_path = dir / entry.at("records_file").get<std::string>();
    const auto prompts_path = dir / entry.at("prompts_file").get<std::string>();
    if (!std::filesystem::exists(records_path) || !std::filesystem::exists(prompts_path)) return std::nullopt;
    if (sha256_file(records_path) != entry.at("records_sha256").get<std::string>()) return std::nullopt;
    if (sha256_file(prompts_path) != entry.at("prompts_sha256").get<std::string>()) return std::nullopt;
    std::vector<SynthesisRecord> records;
    for (const auto& j : read_jsonl(records_path.string())) records.push_back(record_from_json(j));
    return records;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

SynthesisSummary run_synthesis(const std::vector<RawDocument>& corpus, const SynthesisOptions& options,
                               CompletionBackend& backend, const SentinelConfig& cfg, const TokenCounter& counter,
                               const std::filesystem::path& out_dir) {
  cfg.validate();
  if (options.limits.max_new_tokens >= options.inference_max_len) {
    throw Error(ErrorCode::InvalidArgument, "inference_max_len must exceed max_new_tokens");
  }
  std::vector<std::string> ids;
  std::map<std::string, std::string> texts;
  std::map<std::string, const RawDocument*> by_id;
  std::string corpus_digest_input;
  for (const auto& d : corpus) {
    ids.push_back(d.id);
    texts[d.id] = d.text;
    by_id[d.id] = &d;
    corpus_digest_input += d.line.empty() ? dump_line(json{{"id", d.id}, {"text", d.text}}) : d.line;
    corpus_digest_input += '\n';
  }

  const auto split = select_for_conversion(ids, options.fraction, options.seed);
  const auto plan = plan_rounds(split.selected, options.num_rounds, options.seed,
                                options.inference_max_len - options.limits.max_new_tokens);

  json config = {{"corpus_sha256", sha256_hex(corpus_digest_input)},
                 {"num_rounds", options.num_rounds},
                 {"fraction", options.fraction},
                 {"seed", options.seed},
                 {"inference_max_len", options.inference_max_len},
                 {"max_new_tokens", options.limits.max_new_tokens},
                 {"temperature", options.limits.temperature},
                 {"backend", options.backend_url},
                 {"sentinels", sentinels_to_json(cfg)},
                 {"token_counter", counter.name()},
                 {"sanitize", options.limits.sanitize == SanitizePolicy::Escape ? "escape" : "reject"}};
  const std::string config_hash = sha256_hex(config.dump());

  json partitions = json::array();
  for (const auto& p : plan.partitions) partitions.push_back(p);
  json manifest = {{"config_hash", config_hash},
                   {"config", config},
                   {"plan",
                    {{"selected", split.selected.size()},
                     {"passthrough", split.passthrough.size()},
                     {"partitions", partitions}}},
                   {"rounds", json::array()},
                   {"complete", false}};

  std::filesystem::create_directories(out_dir);
  const auto manifest_path = out_dir / kManifestName;
  ChainStore store;
  SynthesisSummary summary;

  if (std::filesystem::exists(manifest_path)) {
    try {
      auto previous = json::parse(read_file(manifest_path));
      if (previous.value("config_hash", "") == config_hash) {
        for (const auto& entry : previous.at("rounds")) {
          auto records = load_round(out_dir, entry);
          if (!records) break;
          store.add_round(std::move(*records));
          manifest["rounds"].push_back(entry);
          ++summary.rounds_resumed;
        }
      }
    } catch (const std::exception& e) {
      std::cerr << "warning: ignoring unreadable " << manifest_path.string() << ": " << e.what() << "\n";
    }
  }

  for (std::size_t m = store.rounds(); m < plan.num_rounds; ++m) {
    if (options.stop_after_round && store.rounds() >= *options.stop_after_round) break;
    auto report = synthesize_round(plan, m, texts, store, backend, cfg, counter, options.limits);
    const auto records_text = records_jsonl(report.records);
    const auto prompts_text = prompts_jsonl(report.records);
    write_file_atomic(out_dir / round_file(m), records_text);
    write_file_atomic(out_dir / prompts_file(m), prompts_text);
    manifest["rounds"].push_back({{"index", m},
                                  {"records_file", round_file(m)},
                                  {"records_sha256", sha256_hex(records_text)},
                                  {"prompts_file", prompts_file(m)},
                                  {"prompts_sha256", sha256_hex(prompts_text)},
                                  {"ok", report.ok},
                                  {"failed", report.failed}});
    store.add_round(std::move(report.records));
    write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  }

  summary.rounds_completed = store.rounds();
  for (std::size_t m = 0; m < store.rounds(); ++m) {
    for (const auto& r : store.round(m)) {
      if (r.status == DocStatus::Ok) {
        ++summary.documents_ok;
        summary.pairs += r.example.pairs.size();
      } else {
        ++summary.documents_failed;
      }
    }
  }
  if (store.rounds() < plan.num_rounds) {
    write_file_atomic(manifest_path, manifest.dump(2) + "\n");
    return summary;
  }

  std::string chains_text;
  auto leaves = store.leaf_chains();
  for (const auto& chain : leaves) {
    json arr = json::array();
    for (const auto& ex : chain) arr.push_back(example_to_json(ex));
    chains_text += dump_line(json{{"chain", arr}});
    chains_text += '\n';
  }

  std::set<std::string> passthrough_ids(split.passthrough.begin(), split.passthrough.end());
  for (std::size_t m = 0; m < store.rounds(); ++m) {
    for (const auto& r : store.round(m)) {
      if (r.status != DocStatus::Ok) passthrough_ids.insert(r.doc_id);
    }
  }
  std::string passthrough_text;
  for (const auto& d : corpus) {
    if (!passthrough_ids.count(d.id)) continue;
    passthrough_text += d.line.empty() ? dump_line(json{{"id", d.id}, {"text", d.text}}) : d.line;
    passthrough_text += '\n';
  }

  write_file_atomic(out_dir / "chains.jsonl", chains_text);
  write_file_atomic(out_dir / "passthrough.jsonl", passthrough_text);
  manifest["complete"] = true;
  manifest["outputs"] = {{"chains.jsonl", sha256_hex(chains_text)}, {"passthrough.jsonl", sha256_hex(passthrough_text)}};
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");

  summary.complete = true;
  summary.chains = leaves.size();
  summary.passthrough = passthrough_ids.size();
  return summary;
}

std::vector<std::vector<SynthesisExample>> load_chains(const std::string& path) {
  std::vector<std::vector<SynthesisExample>> chains;
  for (const auto& j : read_jsonl(path)) {
    auto it = j.find("chain");
    if (it == j.end() || !it->is_array()) throw Error(ErrorCode::SchemaViolation, "chain line needs a 'chain' array");
    std::vector<SynthesisExample> chain;
    for (const auto& ex : *it) chain.push_back(example_from_json(ex));
    chains.push_back(std::move(chain));
  }
  return chains;
}

}  // namespace instructpt
