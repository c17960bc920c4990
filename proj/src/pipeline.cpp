#include "instructpt/pipeline.hpp"

#include <map>

#include "instructpt/assembler.hpp"
#include "instructpt/error.hpp"
#include "instructpt/token_counter.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

namespace {

constexpr const char* kManifestName = "pipeline_manifest.json";

using Outputs = std::map<std::string, std::string>;  // path relative to out_dir -> sha256

Outputs hash_outputs(const std::filesystem::path& root, const std::vector<std::filesystem::path>& files) {
  Outputs out;
  for (const auto& f : files) out[std::filesystem::relative(f, root).generic_string()] = sha256_file(f);
  return out;
}

bool outputs_verified(const std::filesystem::path& root, const json& recorded) {
  if (!recorded.is_object() || recorded.empty()) return false;
  for (const auto& [rel, sha] : recorded.items()) {
    const auto p = root / rel;
    if (!std::filesystem::is_regular_file(p) || sha256_file(p) != sha.get<std::string>()) return false;
  }
  return true;
}

std::vector<std::filesystem::path> files_in(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() != ".tmp") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

class Manifest {
 public:
  Manifest(std::filesystem::path root, json config) : root_(std::move(root)) {
    doc_ = {{"config", std::move(config)}, {"stages", json::array()}, {"complete", false}};
    const auto path = root_ / kManifestName;
    if (std::filesystem::exists(path)) {
      auto prev = json::parse(read_file(path), nullptr, false);
      if (prev.is_object() && prev.contains("stages") && prev["stages"].is_array()) previous_ = prev["stages"];
    }
  }

  // Re-records a previous stage entry and returns true when its inputs and outputs still match.
  bool can_skip(const std::string& stage, const std::string& digest) {
    for (const auto& s : previous_) {
      if (s.value("name", "") != stage || s.value("input_digest", "") != digest) continue;
      if (!outputs_verified(root_, s.value("outputs", json::object()))) return false;
      doc_["stages"].push_back(s);
      save();
      return true;
    }
    return false;
  }

  void record(const std::string& stage, const std::string& digest, const Outputs& outputs) {
    doc_["stages"].push_back({{"name", stage}, {"input_digest", digest}, {"outputs", outputs}});
    save();
  }

  void finish() {
    doc_["complete"] = true;
    save();
  }

  void save() const { write_file_atomic(root_ / kManifestName, doc_.dump(2) + "\n"); }

 private:
  std::filesystem::path root_;
  json doc_;
  json previous_ = json::array();
};

template <typename Fn>
auto run_stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigInvalid& e) {
    std::vector<std::string> v;
    for (const auto& s : e.violations()) v.push_back("stage '" + name + "': " + s);
    throw ConfigInvalid(v);
  } catch (const Error& e) {
    throw Error(e.code(), "stage '" + name + "': " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::StageFailed, "stage '" + name + "': " + e.what());
  }
}

}  // namespace

MixSpec pipeline_mix_spec(const PipelineConfig& cfg, const std::filesystem::path& augmented,
                          const std::filesystem::path& passthrough) {
  if (!cfg.mix_spec) {
    MixSpec spec;
    spec.seed = derive_seed(cfg.seed, "mix");
    spec.sources.push_back({"augmented", augmented.string(), Repeat{}, SourceRole::Augmented});
    spec.sources.push_back({"passthrough", passthrough.string(), Repeat{}, SourceRole::Raw});
    return spec;
  }
  json j;
  try {
    j = json::parse(read_file(*cfg.mix_spec));
  } catch (const json::exception& e) {
    throw ConfigInvalid({cfg.mix_spec->string() + ": " + e.what()});
  }
  if (j.is_object() && j.contains("sources") && j["sources"].is_array()) {
    for (auto& s : j["sources"]) {
      if (!s.is_object() || !s.contains("path") || !s["path"].is_string()) continue;
      const auto p = s["path"].get<std::string>();
      if (p == "@augmented") s["path"] = augmented.string();
      if (p == "@passthrough") s["path"] = passthrough.string();
      if (p == "@raw") s["path"] = cfg.corpus.string();
    }
  }
  const bool has_seed = j.is_object() && j.contains("seed");
  auto spec = mix_spec_from_json(j, cfg.mix_spec->parent_path());
  if (!has_seed) spec.seed = derive_seed(cfg.seed, "mix");
  return spec;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const PipelineOptions& opts) {
  check_config(cfg);
  const auto root = cfg.out_dir;
  std::filesystem::create_directories(root);
  // out_dir is left out so a finished tree can be moved or compared across directories.
  json recorded = config_to_json(cfg);
  recorded.erase("out_dir");
  Manifest manifest(root, recorded);
  PipelineResult result;
  result.manifest = root / kManifestName;

  const auto counter = make_token_counter(cfg.token_counter);
  const auto synth_dir = root / "synthesis";
  const auto chains_path = synth_dir / "chains.jsonl";
  const auto passthrough_path = synth_dir / "passthrough.jsonl";

  // synthesize
  const auto options = synthesis_options(cfg);
  json synth_inputs = config_to_json(cfg);
  synth_inputs.erase("out_dir");
  synth_inputs.erase("template_pool");
  synth_inputs.erase("mix_spec");
  synth_inputs["corpus_sha256"] = run_stage("synthesize", [&] { return sha256_file(cfg.corpus); });
  const auto synth_digest = sha256_hex(synth_inputs.dump());
  if (manifest.can_skip("synthesize", synth_digest)) {
    result.stages.push_back({"synthesize", true});
  } else {
    const bool done = run_stage("synthesize", [&] {
      auto corpus = load_corpus(cfg.corpus.string());
      std::unique_ptr<CompletionBackend> owned;
      CompletionBackend* backend = opts.backend;
      if (!backend) {
        owned = make_backend(cfg.backend.url, cfg.sentinels);
        backend = owned.get();
      }
      auto o = options;
      o.stop_after_round = opts.stop_after_round;
      result.synthesis = run_synthesis(corpus, o, *backend, cfg.sentinels, *counter, synth_dir);
      return result.synthesis.complete;
    });
    result.stages.push_back({"synthesize", false});
    if (!done) {
      manifest.save();
      return result;
    }
    manifest.record("synthesize", synth_digest, hash_outputs(root, files_in(synth_dir)));
  }

  // assemble
  const auto augmented_path = root / "augmented.jsonl";
  const auto pool = run_stage("assemble", [&] {
    return cfg.template_pool ? load_template_pool(*cfg.template_pool) : default_template_pool();
  });
  const auto assemble_seed = derive_seed(cfg.seed, "assemble");
  const auto assemble_digest = sha256_hex(json{{"chains_sha256", sha256_file(chains_path)},
                                               {"pool", template_pool_to_json(pool)},
                                               {"seed", assemble_seed},
                                               {"token_counter", counter->name()}}
                                              .dump());
  if (manifest.can_skip("assemble", assemble_digest)) {
    result.stages.push_back({"assemble", true});
  } else {
    run_stage("assemble", [&] {
      std::string out;
      for (const auto& chain : load_chains(chains_path.string())) {
        out += dump_line(augmented_to_json(assemble_mshot(chain, pool, assemble_seed, *counter)));
        out += '\n';
        ++result.augmented_documents;
      }
      write_file_atomic(augmented_path, out);
      return 0;
    });
    result.stages.push_back({"assemble", false});
    manifest.record("assemble", assemble_digest, hash_outputs(root, {augmented_path}));
  }

  // mix
  const auto mixed_path = root / "mixed.jsonl";
  const auto mix_manifest_path = root / "mix_manifest.json";
  const auto spec = run_stage("mix", [&] { return pipeline_mix_spec(cfg, augmented_path, passthrough_path); });
  const auto mix_digest = run_stage("mix", [&] {
    json sources = json::array();
    for (const auto& s : spec.sources) {
      if (!std::filesystem::is_regular_file(s.path)) {
        throw Error(ErrorCode::SourceUnreadable, "source '" + s.stream_id + "': cannot read " + s.path);
      }
      sources.push_back({{"stream_id", s.stream_id},
                         {"sha256", sha256_file(s.path)},
                         {"repeat", s.repeat.str()},
                         {"role", std::string(source_role_name(s.role))}});
    }
    return sha256_hex(json{{"sources", sources}, {"seed", spec.seed}}.dump());
  });
  if (manifest.can_skip("mix", mix_digest)) {
    result.stages.push_back({"mix", true});
  } else {
    run_stage("mix", [&] {
      auto mm = mix(spec, mixed_path.string());
      result.mixed_lines = mm.total;
      write_file_atomic(mix_manifest_path, mix_manifest_to_json(mm).dump(2) + "\n");
      return 0;
    });
    result.stages.push_back({"mix", false});
    manifest.record("mix", mix_digest, hash_outputs(root, {mixed_path, mix_manifest_path}));
  }

  manifest.finish();
  result.complete = true;
  return result;
}

}  // namespace instructpt
