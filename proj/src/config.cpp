#include "instructpt/config.hpp"

#include <set>

#include "instructpt/error.hpp"
#include "instructpt/token_counter.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

namespace {

class Reader {
 public:
  Reader(const json& j, std::filesystem::path base, std::vector<std::string>& problems)
      : j_(j), base_(std::move(base)), problems_(problems) {}

  template <typename T>
  void number(const char* key, T& out, bool required = false) {
    if (!j_.contains(key)) {
      if (required) problems_.push_back(std::string(key) + ": required");
      return;
    }
    const auto& v = j_[key];
    if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return problems_.push_back(std::string(key) + ": must be a number");
    } else {
      if (!is_non_negative_integer(v)) return problems_.push_back(std::string(key) + ": must be a non-negative integer");
    }
    out = v.get<T>();
  }

  void string(const char* key, std::string& out) {
    if (!j_.contains(key)) return;
    if (!j_[key].is_string()) return problems_.push_back(std::string(key) + ": must be a string");
    out = j_[key].get<std::string>();
  }

  std::optional<std::filesystem::path> path(const char* key, bool required, bool must_exist) {
    if (!j_.contains(key)) {
      if (required) problems_.push_back(std::string(key) + ": required");
      return std::nullopt;
    }
    if (!j_[key].is_string() || j_[key].get<std::string>().empty()) {
      problems_.push_back(std::string(key) + ": must be a non-empty path string");
      return std::nullopt;
    }
    std::filesystem::path p = j_[key].get<std::string>();
    if (p.is_relative()) p = (base_ / p).lexically_normal();
    if (must_exist && !std::filesystem::exists(p)) {
      problems_.push_back(std::string(key) + ": path does not exist: " + p.string());
    }
    return p;
  }

 private:
  const json& j_;
  std::filesystem::path base_;
  std::vector<std::string>& problems_;
};

void collect_invariants(const PipelineConfig& cfg, std::vector<std::string>& problems) {
  if (cfg.num_rounds < 1) problems.push_back("num_rounds: must be at least 1");
  if (!(cfg.fraction > 0.0 && cfg.fraction <= 1.0)) problems.push_back("fraction: must be in (0, 1]");
  if (cfg.backend.in_flight < 1) problems.push_back("backend.in_flight: must be at least 1");
  if (cfg.backend.max_new_tokens < 1) problems.push_back("backend.max_new_tokens: must be at least 1");
  if (cfg.backend.temperature < 0.0) problems.push_back("backend.temperature: must be >= 0");
  if (cfg.backend.url.empty()) problems.push_back("backend.url: must not be empty");
  if (cfg.inference_max_len <= cfg.backend.max_new_tokens) {
    problems.push_back("max_len.inference: must exceed backend.max_new_tokens");
  }
  if (cfg.tuning_max_len < 1) problems.push_back("max_len.tuning: must be at least 1");
  if (cfg.token_counter != "words" && cfg.token_counter != "approx") {
    problems.push_back("token_counter: must be \"words\" or \"approx\"");
  }
  try {
    cfg.sentinels.validate();
  } catch (const Error& e) {
    problems.push_back(std::string("sentinels: ") + e.what());
  }
}

}  // namespace

PipelineConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigInvalid({"config must be a JSON object"});
  static const std::set<std::string> known = {"corpus",   "out_dir",       "sentinels", "num_rounds", "fraction",
                                              "seed",     "backend",       "sanitize",  "template_pool",
                                              "mix_spec", "token_counter", "max_len"};
  std::vector<std::string> problems;
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) problems.push_back(key + ": unknown field");
  }

  PipelineConfig cfg;
  Reader r(j, base_dir, problems);
  if (auto p = r.path("corpus", true, true)) cfg.corpus = *p;
  if (auto p = r.path("out_dir", true, false)) cfg.out_dir = *p;
  cfg.template_pool = r.path("template_pool", false, true);
  cfg.mix_spec = r.path("mix_spec", false, true);
  r.number("num_rounds", cfg.num_rounds);
  r.number("fraction", cfg.fraction);
  r.number("seed", cfg.seed);
  r.string("token_counter", cfg.token_counter);

  std::string sanitize = "reject";
  r.string("sanitize", sanitize);
  if (sanitize == "escape") {
    cfg.sanitize = SanitizePolicy::Escape;
  } else if (sanitize != "reject") {
    problems.push_back("sanitize: must be \"reject\" or \"escape\"");
  }

  if (j.contains("sentinels")) {
    try {
      cfg.sentinels = sentinels_from_json(j["sentinels"]);
    } catch (const Error& e) {
      problems.push_back(std::string("sentinels: ") + e.what());
    }
  }

  if (j.contains("backend")) {
    const auto& b = j["backend"];
    if (!b.is_object()) {
      problems.push_back("backend: must be an object");
    } else {
      std::vector<std::string> sub;
      Reader br(b, base_dir, sub);
      br.string("url", cfg.backend.url);
      br.number("in_flight", cfg.backend.in_flight);
      br.number("max_new_tokens", cfg.backend.max_new_tokens);
      br.number("temperature", cfg.backend.temperature);
      br.number("max_retries", cfg.backend.max_retries);
      br.number("initial_delay_ms", cfg.backend.initial_delay_ms);
      for (const auto& [key, _] : b.items()) {
        static const std::set<std::string> bk = {"url",         "in_flight",        "max_new_tokens", "temperature",
                                                 "max_retries", "initial_delay_ms"};
        if (!bk.count(key)) sub.push_back(key + ": unknown field");
      }
      for (auto& s : sub) problems.push_back("backend." + s);
    }
  }

  if (j.contains("max_len")) {
    const auto& m = j["max_len"];
    if (!m.is_object()) {
      problems.push_back("max_len: must be an object");
    } else {
      std::vector<std::string> sub;
      Reader mr(m, base_dir, sub);
      mr.number("tuning", cfg.tuning_max_len);
      mr.number("inference", cfg.inference_max_len);
      for (auto& s : sub) problems.push_back("max_len." + s);
    }
  }

  collect_invariants(cfg, problems);
  if (!problems.empty()) throw ConfigInvalid(problems);
  return cfg;
}

PipelineConfig validate_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigInvalid({path.string() + ": " + e.what()});
  } catch (const Error& e) {
    throw ConfigInvalid({path.string() + ": " + e.what()});
  }
  return config_from_json(j, path.parent_path());
}

void check_config(const PipelineConfig& cfg) {
  std::vector<std::string> problems;
  if (cfg.corpus.empty()) problems.push_back("corpus: required");
  if (cfg.corpus != "-" && !cfg.corpus.empty() && !std::filesystem::exists(cfg.corpus)) {
    problems.push_back("corpus: path does not exist: " + cfg.corpus.string());
  }
  if (cfg.out_dir.empty()) problems.push_back("out_dir: required");
  collect_invariants(cfg, problems);
  if (!problems.empty()) throw ConfigInvalid(problems);
}

json config_to_json(const PipelineConfig& cfg) {
  json j = {{"corpus", cfg.corpus.string()},
            {"out_dir", cfg.out_dir.string()},
            {"sentinels", sentinels_to_json(cfg.sentinels)},
            {"num_rounds", cfg.num_rounds},
            {"fraction", cfg.fraction},
            {"seed", cfg.seed},
            {"backend",
             {{"url", cfg.backend.url},
              {"in_flight", cfg.backend.in_flight},
              {"max_new_tokens", cfg.backend.max_new_tokens},
              {"temperature", cfg.backend.temperature},
              {"max_retries", cfg.backend.max_retries},
              {"initial_delay_ms", cfg.backend.initial_delay_ms}}},
            {"sanitize", cfg.sanitize == SanitizePolicy::Escape ? "escape" : "reject"},
            {"token_counter", cfg.token_counter},
            {"max_len", {{"tuning", cfg.tuning_max_len}, {"inference", cfg.inference_max_len}}}};
  if (cfg.template_pool) j["template_pool"] = cfg.template_pool->string();
  if (cfg.mix_spec) j["mix_spec"] = cfg.mix_spec->string();
  return j;
}

SynthesisOptions synthesis_options(const PipelineConfig& cfg) {
  SynthesisOptions o;
  o.num_rounds = cfg.num_rounds;
  o.fraction = cfg.fraction;
  o.seed = cfg.seed;
  o.inference_max_len = cfg.inference_max_len;
  o.backend_url = cfg.backend.url;
  o.limits.in_flight = cfg.backend.in_flight;
  o.limits.max_new_tokens = cfg.backend.max_new_tokens;
  o.limits.temperature = cfg.backend.temperature;
  o.limits.retry.max_retries = cfg.backend.max_retries;
  o.limits.retry.initial_delay = std::chrono::milliseconds(cfg.backend.initial_delay_ms);
  o.limits.sanitize = cfg.sanitize;
  return o;
}

}  // namespace instructpt
