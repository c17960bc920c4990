#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "instructpt/assembler.hpp"
#include "instructpt/backend.hpp"
#include "instructpt/config.hpp"
#include "instructpt/contamination.hpp"
#include "instructpt/error.hpp"
#include "instructpt/metrics.hpp"
#include "instructpt/mixer.hpp"
#include "instructpt/pipeline.hpp"
#include "instructpt/serialize.hpp"
#include "instructpt/synthesis.hpp"
#include "instructpt/token_counter.hpp"
#include "instructpt/tuning_packer.hpp"
#include "instructpt/util.hpp"

using namespace instructpt;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out = "-";
  bool json_errors = false;
};

std::optional<PipelineConfig> load_config(const Globals& g) {
  if (g.config.empty()) return std::nullopt;
  return validate_config(g.config);
}

SentinelConfig sentinels_for(const Globals& g, const std::string& sentinel_path) {
  if (!sentinel_path.empty()) return load_sentinel_config(sentinel_path);
  if (auto cfg = load_config(g)) return cfg->sentinels;
  return SentinelConfig{};
}

std::vector<SynthesisExample> read_examples(const std::string& path) {
  std::vector<SynthesisExample> out;
  for (const auto& j : read_jsonl(path)) out.push_back(example_from_json(j));
  return out;
}

void print_summary(const json& j) { std::cerr << j.dump() << "\n"; }

int report_error(const Globals& g, const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  const std::string code = err ? std::string(error_code_name(err->code())) : "Internal";
  std::vector<std::string> violations;
  if (const auto* ci = dynamic_cast<const ConfigInvalid*>(&e)) violations = ci->violations();
  if (g.json_errors) {
    json j = {{"error", {{"code", code}, {"message", e.what()}}}};
    if (!violations.empty()) j["error"]["violations"] = violations;
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "error [" << code << "]: " << e.what() << "\n";
    for (const auto& v : violations) std::cerr << "  - " << v << "\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-augmented pre-training corpus toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every seeded choice");
  app.add_option("--config", g.config, "Pipeline config JSON supplying defaults");
  app.add_option("--out", g.out, "Output path or directory; - for stdout");
  app.add_flag("--json-errors", g.json_errors, "Print errors as one JSON object on stderr");

  // format
  auto* fmt = app.add_subcommand("format", "Render examples in the synthesizer format, or parse them back");
  std::string fmt_in = "-", fmt_sentinels;
  bool fmt_parse = false;
  fmt->add_option("--in", fmt_in, "Examples JSONL (or rendered {\"text\"} JSONL with --parse)");
  fmt->add_option("--sentinels", fmt_sentinels, "Sentinel config JSON");
  fmt->add_flag("--parse", fmt_parse, "Parse rendered text into examples");

  // pack
  auto* pack = app.add_subcommand("pack", "Pack examples into synthesizer tuning sequences");
  std::string pack_in = "-", pack_sentinels, pack_counter;
  std::optional<std::size_t> pack_max_len;
  std::size_t pack_cap = 10000;
  pack->add_option("--in", pack_in, "Examples JSONL with dataset_id");
  pack->add_option("--max-len", pack_max_len, "Token budget per sequence (default 2048)");
  pack->add_option("--cap", pack_cap, "Examples kept per dataset")->capture_default_str();
  pack->add_option("--counter", pack_counter, "Token counter: words or approx");
  pack->add_option("--sentinels", pack_sentinels, "Sentinel config JSON");

  // synthesize
  auto* syn = app.add_subcommand("synthesize", "Run multi-round instruction synthesis");
  std::string syn_corpus, syn_backend, syn_counter;
  std::optional<std::size_t> syn_rounds, syn_in_flight, syn_max_new, syn_infer_len, syn_stop;
  std::optional<double> syn_fraction;
  bool syn_escape = false;
  syn->add_option("--corpus", syn_corpus, "Raw corpus JSONL");
  syn->add_option("--rounds", syn_rounds, "Number of rounds M");
  syn->add_option("--fraction", syn_fraction, "Fraction of the corpus to convert");
  syn->add_option("--backend", syn_backend, "Completion endpoint URL or stub:[mode][?k=v...]");
  syn->add_option("--in-flight", syn_in_flight, "Concurrent backend requests");
  syn->add_option("--max-new-tokens", syn_max_new, "Generation budget per request");
  syn->add_option("--inference-max-len", syn_infer_len, "Prompt plus generation budget");
  syn->add_option("--counter", syn_counter, "Token counter: words or approx");
  syn->add_option("--stop-after-round", syn_stop, "Stop once this many rounds are persisted");
  syn->add_flag("--escape-sentinels", syn_escape, "Escape sentinel strings in raw text instead of failing the document");

  // assemble
  auto* asmb = app.add_subcommand("assemble", "Assemble synthesis chains into M-shot documents");
  std::string asm_chains = "-", asm_pool;
  asmb->add_option("--chains", asm_chains, "chains.jsonl from synthesize");
  asmb->add_option("--pool", asm_pool, "Template pool JSON (default: built-in pool)");

  // mix
  auto* mixc = app.add_subcommand("mix", "Mix document streams with repeat factors");
  std::string mix_spec_path, mix_manifest_path;
  mixc->add_option("--spec", mix_spec_path, "Mix spec JSON")->required();
  mixc->add_option("--manifest", mix_manifest_path, "Manifest path (default: <out>.manifest.json, or stderr)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluation metrics");
  ev->require_subcommand(1);
  auto* ev_f1 = ev->add_subcommand("f1", "Token F1 of predicted against gold responses");
  std::string f1_pred, f1_gold;
  bool f1_articles = false;
  ev_f1->add_option("--pred", f1_pred, "JSONL of strings or {\"response\"|\"text\"}")->required();
  ev_f1->add_option("--gold", f1_gold, "JSONL of strings or {\"response\"|\"text\"}")->required();
  ev_f1->add_flag("--remove-articles", f1_articles, "Drop a/an/the before scoring");
  auto* ev_pairs = ev->add_subcommand("pairs", "Pair-set quality of predicted against gold pairs");
  std::string pairs_pred, pairs_gold, pairs_mode = "match";
  ev_pairs->add_option("--pred", pairs_pred, "JSONL of {\"pairs\": [...]}")->required();
  ev_pairs->add_option("--gold", pairs_gold, "JSONL of {\"pairs\": [...]}")->required();
  ev_pairs->add_option("--mode", pairs_mode, "match or concat")->check(CLI::IsMember({"match", "concat"}));
  auto* ev_dom = ev->add_subcommand("domains", "Domain coverage and overlap");
  std::string dom_labels;
  ev_dom->add_option("--labels", dom_labels, "JSONL of {doc_id, text_domains, instruction_domains}")->required();

  // contam
  auto* con = app.add_subcommand("contam", "Substring-match contamination report");
  std::vector<std::string> con_eval, con_train;
  std::size_t con_len = 50;
  std::string con_mode = "fast", con_delta;
  std::optional<std::size_t> con_samples, con_stride;
  con->add_option("--eval", con_eval, "Eval JSONL files; dataset id is the file stem, or id=path")->required();
  con->add_option("--train", con_train, "Training JSONL files; stream id is the file stem, or id=path")->required();
  con->add_option("--L", con_len, "Substring length after normalization")->capture_default_str();
  con->add_option("--mode", con_mode, "fast or exhaustive")->check(CLI::IsMember({"fast", "exhaustive"}));
  con->add_option("--samples", con_samples, "Probes per example (0 = every offset)");
  con->add_option("--stride", con_stride, "Index stride");
  con->add_option("--delta", con_delta, "augmented,raw stream ids to difference");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Synthesize, assemble and mix from a config");
  std::optional<std::size_t> pipe_stop;
  std::string pipe_backend;
  pipe->add_option("--stop-after-round", pipe_stop, "Stop once this many synthesis rounds are persisted");
  pipe->add_option("--backend", pipe_backend, "Override the configured backend URL");

  // validate
  auto* val = app.add_subcommand("validate", "Validate a config, corpus, or examples file");
  std::string val_corpus, val_examples;
  val->add_option("--corpus", val_corpus, "Raw corpus JSONL");
  val->add_option("--examples", val_examples, "Examples JSONL");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fmt->parsed()) {
      const auto cfg = sentinels_for(g, fmt_sentinels);
      OutputSink out(g.out);
      std::size_t n = 0, issues = 0;
      for (const auto& j : read_jsonl(fmt_in)) {
        ++n;
        if (fmt_parse) {
          std::vector<ParseIssue> found;
          auto ex = parse_example(j.at("text").get<std::string>(), cfg, &found);
          ex.source_id = j.value("source_id", "");
          ex.dataset_id = j.value("dataset_id", "");
          auto line = example_to_json(ex);
          if (!found.empty()) {
            json arr = json::array();
            for (const auto& i : found) arr.push_back({{"kind", parse_issue_name(i.kind)}, {"offset", i.offset}, {"detail", i.detail}});
            line["issues"] = arr;
            issues += found.size();
          }
          out.write_line(dump_line(line));
        } else {
          const auto ex = example_from_json(j);
          out.write_line(dump_line(
              json{{"source_id", ex.source_id}, {"dataset_id", ex.dataset_id}, {"text", render_example(ex, cfg)}}));
        }
      }
      out.close();
      print_summary({{"examples", n}, {"issues", issues}});
    } else if (pack->parsed()) {
      const auto pcfg = load_config(g);
      const auto cfg = pack_sentinels.empty() && pcfg ? pcfg->sentinels : sentinels_for(g, pack_sentinels);
      const auto counter =
          make_token_counter(!pack_counter.empty() ? pack_counter : pcfg ? pcfg->token_counter : "words");
      const std::size_t max_len = pack_max_len.value_or(pcfg ? pcfg->tuning_max_len : 2048);
      const auto seed = g.seed.value_or(pcfg ? pcfg->seed : 0);
      auto result = pack_all_datasets(read_examples(pack_in), max_len, pack_cap, *counter, cfg, seed);
      OutputSink out(g.out);
      for (const auto& s : result.sequences) out.write_line(dump_line(packed_to_json(s)));
      out.close();
      json skipped = json::array();
      for (const auto& s : result.skipped) skipped.push_back(skip_to_json(s));
      print_summary({{"sequences", result.sequences.size()}, {"skipped", skipped}});
    } else if (syn->parsed()) {
      PipelineConfig pc;
      if (auto c = load_config(g)) pc = *c;
      if (!syn_corpus.empty()) pc.corpus = syn_corpus;
      if (g.out != "-") pc.out_dir = g.out;
      if (pc.out_dir.empty() || pc.out_dir == "-") {
        throw Error(ErrorCode::InvalidArgument, "synthesize needs an output directory (--out)");
      }
      if (g.seed) pc.seed = *g.seed;
      if (syn_rounds) pc.num_rounds = *syn_rounds;
      if (syn_fraction) pc.fraction = *syn_fraction;
      if (!syn_backend.empty()) pc.backend.url = syn_backend;
      if (syn_in_flight) pc.backend.in_flight = *syn_in_flight;
      if (syn_max_new) pc.backend.max_new_tokens = *syn_max_new;
      if (syn_infer_len) pc.inference_max_len = *syn_infer_len;
      if (!syn_counter.empty()) pc.token_counter = syn_counter;
      if (syn_escape) pc.sanitize = SanitizePolicy::Escape;
      check_config(pc);
      auto options = synthesis_options(pc);
      options.stop_after_round = syn_stop;
      const auto counter = make_token_counter(pc.token_counter);
      auto backend = make_backend(pc.backend.url, pc.sentinels);
      const auto s = run_synthesis(load_corpus(pc.corpus.string()), options, *backend, pc.sentinels, *counter,
                                   pc.out_dir);
      print_summary({{"rounds_completed", s.rounds_completed},
                     {"rounds_resumed", s.rounds_resumed},
                     {"complete", s.complete},
                     {"documents_ok", s.documents_ok},
                     {"documents_failed", s.documents_failed},
                     {"pairs", s.pairs},
                     {"chains", s.chains},
                     {"passthrough", s.passthrough}});
    } else if (asmb->parsed()) {
      const auto pc = load_config(g);
      TemplatePool pool = default_template_pool();
      if (!asm_pool.empty()) {
        pool = load_template_pool(asm_pool);
      } else if (pc && pc->template_pool) {
        pool = load_template_pool(*pc->template_pool);
      }
      const auto seed = g.seed ? *g.seed : derive_seed(pc ? pc->seed : 0, "assemble");
      const auto counter = make_token_counter(pc ? pc->token_counter : "words");
      OutputSink out(g.out);
      std::size_t n = 0;
      for (const auto& chain : load_chains(asm_chains)) {
        out.write_line(dump_line(augmented_to_json(assemble_mshot(chain, pool, seed, *counter))));
        ++n;
      }
      out.close();
      print_summary({{"documents", n}});
    } else if (mixc->parsed()) {
      auto spec = load_mix_spec(mix_spec_path);
      if (g.seed) spec.seed = *g.seed;
      const auto m = mix(spec, g.out);
      const auto text = mix_manifest_to_json(m).dump(2) + "\n";
      std::string manifest_path = mix_manifest_path;
      if (manifest_path.empty() && g.out != "-") manifest_path = g.out + ".manifest.json";
      if (manifest_path.empty()) {
        std::cerr << text;
      } else {
        write_file_atomic(manifest_path, text);
      }
    } else if (ev->parsed()) {
      OutputSink out(g.out);
      if (ev_f1->parsed()) {
        auto text_of = [](const json& j) -> std::string {
          if (j.is_string()) return j.get<std::string>();
          if (j.contains("response")) return j["response"].get<std::string>();
          return j.at("text").get<std::string>();
        };
        const auto pred = read_jsonl(f1_pred), gold = read_jsonl(f1_gold);
        if (pred.size() != gold.size()) {
          throw Error(ErrorCode::InvalidArgument, "pred has " + std::to_string(pred.size()) + " items, gold has " +
                                                      std::to_string(gold.size()));
        }
        std::vector<std::pair<std::string, std::string>> items;
        for (std::size_t i = 0; i < pred.size(); ++i) items.emplace_back(text_of(pred[i]), text_of(gold[i]));
        F1Options opts;
        opts.remove_articles = f1_articles;
        out.write(eval_report_to_json(response_accuracy(items, opts)).dump(2) + "\n");
      } else if (ev_pairs->parsed()) {
        const auto pred = read_examples(pairs_pred), gold = read_examples(pairs_gold);
        if (pred.size() != gold.size()) throw Error(ErrorCode::InvalidArgument, "pred and gold differ in length");
        const auto mode = pairs_mode == "concat" ? PairQualityMode::Concat : PairQualityMode::Match;
        std::vector<double> scores;
        for (std::size_t i = 0; i < pred.size(); ++i) scores.push_back(pair_set_quality(pred[i].pairs, gold[i].pairs, mode));
        auto j = eval_report_to_json(make_report(std::move(scores)));
        j["mode"] = pairs_mode;
        out.write(j.dump(2) + "\n");
      } else {
        out.write(domain_report_to_json(domain_report(load_domain_labels(dom_labels))).dump(2) + "\n");
      }
      out.close();
    } else if (con->parsed()) {
      auto split_named = [](const std::string& arg) {
        const auto eq = arg.find('=');
        if (eq != std::string::npos) return std::make_pair(arg.substr(0, eq), arg.substr(eq + 1));
        return std::make_pair(std::filesystem::path(arg).stem().string(), arg);
      };
      ContamConfig cfg = con_mode == "exhaustive" ? ContamConfig::exhaustive(con_len) : ContamConfig::fast(con_len);
      if (con_samples) cfg.samples = *con_samples;
      if (con_stride) cfg.stride = *con_stride;
      if (g.seed) cfg.seed = *g.seed;
      std::vector<EvalSet> sets;
      for (const auto& e : con_eval) {
        auto [id, path] = split_named(e);
        sets.push_back(load_eval_set(path, id));
      }
      std::vector<TrainingStream> streams;
      for (const auto& t : con_train) {
        auto [id, path] = split_named(t);
        auto it = std::find_if(streams.begin(), streams.end(), [&](const auto& s) { return s.stream_id == id; });
        if (it == streams.end()) {
          streams.push_back({id, {path}});
        } else {
          it->paths.push_back(path);
        }
      }
      const auto report = contamination_report(sets, streams, cfg);
      std::vector<DatasetDelta> deltas;
      if (!con_delta.empty()) {
        const auto comma = con_delta.find(',');
        if (comma == std::string::npos) throw Error(ErrorCode::InvalidArgument, "--delta expects augmented,raw");
        deltas = contamination_delta(report, con_delta.substr(0, comma), con_delta.substr(comma + 1));
      }
      OutputSink out(g.out);
      out.write(contamination_report_to_json(report, deltas).dump(2) + "\n");
      out.close();
    } else if (pipe->parsed()) {
      if (g.config.empty()) throw Error(ErrorCode::InvalidArgument, "pipeline needs --config");
      auto pc = validate_config(g.config);
      if (g.seed) pc.seed = *g.seed;
      if (g.out != "-") pc.out_dir = g.out;
      if (!pipe_backend.empty()) pc.backend.url = pipe_backend;
      PipelineOptions opts;
      opts.stop_after_round = pipe_stop;
      const auto r = run_pipeline(pc, opts);
      json stages = json::array();
      for (const auto& s : r.stages) stages.push_back({{"name", s.name}, {"skipped", s.skipped}});
      json summary = {{"complete", r.complete}, {"stages", stages}, {"manifest", r.manifest.string()}};
      if (!r.stages.empty() && !r.stages.front().skipped) {
        summary["synthesis"] = {{"rounds_completed", r.synthesis.rounds_completed},
                                {"rounds_resumed", r.synthesis.rounds_resumed},
                                {"documents_ok", r.synthesis.documents_ok},
                                {"documents_failed", r.synthesis.documents_failed}};
      }
      print_summary(summary);
    } else if (val->parsed()) {
      json report = json::object();
      if (!g.config.empty()) {
        validate_config(g.config);
        report["config"] = "valid";
      }
      if (!val_corpus.empty()) report["corpus_documents"] = load_corpus(val_corpus).size();
      if (!val_examples.empty()) {
        const auto examples = read_examples(val_examples);
        const SentinelConfig cfg = load_config(g) ? load_config(g)->sentinels : SentinelConfig{};
        for (const auto& ex : examples) {
          for (const auto& p : ex.pairs) validate_pair(p, cfg);
        }
        report["examples"] = examples.size();
      }
      if (report.empty()) throw Error(ErrorCode::InvalidArgument, "validate needs --config, --corpus or --examples");
      std::cout << report.dump() << "\n";
    }
  } catch (const std::exception& e) {
    return report_error(g, e);
  }
  return 0;
}
