#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "instructpt/backend.hpp"

#include <cstdlib>
#include <map>
#include <thread>

#include "instructpt/serialize.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

std::string apply_stop(std::string text, const std::vector<std::string>& stop) {
  std::size_t cut = text.size();
  for (const auto& s : stop) {
    if (s.empty()) continue;
    auto pos = text.find(s);
    if (pos != std::string::npos && pos < cut) cut = pos;
  }
  text.resize(cut);
  return text;
}

HttpBackend::HttpBackend(std::string url, std::string bearer_token, std::chrono::seconds timeout)
    : token_(std::move(bearer_token)), timeout_(timeout) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "backend URL needs a scheme: " + url);
  }
  auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string HttpBackend::request_body(const CompletionRequest& request) {
  json body = {{"prompt", request.prompt},
               {"max_tokens", request.max_new_tokens},
               {"stop", request.stop},
               {"temperature", request.temperature}};
  return body.dump();
}

std::string HttpBackend::response_text(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw BackendError(std::string("backend returned invalid JSON: ") + e.what(), false);
  }
  if (j.is_object()) {
    if (auto it = j.find("text"); it != j.end() && it->is_string()) return it->get<std::string>();
    if (auto it = j.find("choices"); it != j.end() && it->is_array() && !it->empty()) {
      const auto& first = it->front();
      if (auto t = first.find("text"); t != first.end() && t->is_string()) return t->get<std::string>();
    }
  }
  throw BackendError("backend response has no 'text' field", false);
}

std::string HttpBackend::complete(const CompletionRequest& request) {
  httplib::Client client(origin_);
  if (!client.is_valid()) throw BackendError("cannot create HTTP client for " + origin_, false);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
  auto res = client.Post(path_, headers, request_body(request), "application/json");
  if (!res) {
    throw BackendError("transport error: " + httplib::to_string(res.error()), true);
  }
  if (res->status == 429 || res->status >= 500) {
    throw BackendError("backend returned HTTP " + std::to_string(res->status), true);
  }
  if (res->status != 200) {
    throw BackendError("backend returned HTTP " + std::to_string(res->status) + ": " + res->body, false);
  }
  return apply_stop(response_text(res->body), request.stop);
}

namespace {

constexpr const char* kStubVocabulary[] = {
    "river",  "engine", "garden",  "signal", "harbor", "lantern", "meadow", "circuit", "orbit",   "canvas",
    "marble", "pepper", "compass", "violet", "summit", "thunder", "pillow", "glacier", "saddle",  "ribbon",
    "copper", "falcon", "quartz",  "willow", "cobalt", "ember",   "timber", "velvet",  "crystal", "beacon"};
constexpr std::size_t kStubVocabularySize = sizeof(kStubVocabulary) / sizeof(kStubVocabulary[0]);

std::string stub_words(SeededRng& rng, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += kStubVocabulary[rng.uniform(kStubVocabularySize)];
  }
  return out;
}

// Text of the last context span in the prompt: the document being synthesized for.
std::string_view current_text_of(std::string_view prompt, const SentinelConfig& cfg) {
  auto open = prompt.rfind(cfg.context_open);
  if (open == std::string_view::npos) return prompt;
  auto start = open + cfg.context_open.size();
  auto close = prompt.find(cfg.context_close, start);
  if (close == std::string_view::npos) return prompt.substr(start);
  return prompt.substr(start, close - start);
}

std::map<std::string, std::string> parse_query(std::string_view q) {
  std::map<std::string, std::string> out;
  while (!q.empty()) {
    auto amp = q.find('&');
    auto item = q.substr(0, amp);
    auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      out[std::string(item)] = "";
    } else {
      out[std::string(item.substr(0, eq))] = std::string(item.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    q.remove_prefix(amp + 1);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    auto v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "stub parameter '" + key + "' must be an integer");
  }
}

}  // namespace

StubBackend::StubBackend(Options options, SentinelConfig cfg) : options_(options), cfg_(std::move(cfg)) {}

const InstructionResponsePair& StubBackend::fixed_pair() {
  static const InstructionResponsePair pair{"What is the main topic of the text?", "The text describes its subject.",
                                            PairFormat::FreeForm, {}, {}};
  return pair;
}

std::unique_ptr<StubBackend> StubBackend::from_url(const std::string& url, SentinelConfig cfg) {
  if (url.rfind("stub:", 0) != 0) throw Error(ErrorCode::InvalidArgument, "not a stub URL: " + url);
  std::string_view rest(url);
  rest.remove_prefix(5);
  auto qmark = rest.find('?');
  auto mode = rest.substr(0, qmark);
  Options opt;
  if (mode.empty() || mode == "random") {
    opt.mode = Mode::Random;
  } else if (mode == "fixed") {
    opt.mode = Mode::Fixed;
  } else if (mode == "garbage") {
    opt.mode = Mode::Garbage;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown stub mode '" + std::string(mode) + "'");
  }
  if (qmark != std::string_view::npos) {
    for (const auto& [key, value] : parse_query(rest.substr(qmark + 1))) {
      if (key == "pairs") {
        opt.pairs = parse_u64(value, key);
      } else if (key == "words") {
        opt.words = std::max<std::uint64_t>(1, parse_u64(value, key));
      } else if (key == "seed") {
        opt.seed = parse_u64(value, key);
      } else if (key == "delay_ms") {
        opt.delay = std::chrono::milliseconds(parse_u64(value, key));
      } else if (key == "formats") {
        if (value != "all" && value != "free_form") {
          throw Error(ErrorCode::InvalidArgument, "stub formats must be 'all' or 'free_form'");
        }
        opt.all_formats = value == "all";
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown stub parameter '" + key + "'");
      }
    }
  }
  return std::make_unique<StubBackend>(opt, std::move(cfg));
}

std::vector<InstructionResponsePair> StubBackend::pairs_for(std::string_view current_text) const {
  if (options_.mode == Mode::Fixed) return {fixed_pair()};
  if (options_.mode == Mode::Garbage) return {};
  SeededRng rng(derive_seed(options_.seed, trim(current_text)));
  std::vector<InstructionResponsePair> pairs;
  for (std::size_t i = 0; i < options_.pairs; ++i) {
    InstructionResponsePair p;
    p.format = options_.all_formats ? static_cast<PairFormat>(i % 4) : PairFormat::FreeForm;
    p.instruction = "What connects " + stub_words(rng, 2) + "?";
    if (has_options(p.format)) {
      for (int k = 0; k < 3; ++k) p.options.push_back(stub_words(rng, 2));
    }
    if (has_cot(p.format)) p.cot = stub_words(rng, options_.words);
    p.response = stub_words(rng, options_.words);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::string StubBackend::complete(const CompletionRequest& request) {
  if (options_.delay.count() > 0) std::this_thread::sleep_for(options_.delay);
  if (options_.mode == Mode::Garbage) return "I am not sure what to ask about this text.";
  auto pairs = pairs_for(current_text_of(request.prompt, cfg_));
  // A model continues past the pair block into the example close; the stop string cuts it.
  std::string generation = render_pairs(pairs, cfg_) + " " + cfg_.example_close + cfg_.example_open;
  return apply_stop(std::move(generation), request.stop);
}

std::unique_ptr<CompletionBackend> make_backend(const std::string& url, const SentinelConfig& cfg) {
  if (url.rfind("stub:", 0) == 0) return StubBackend::from_url(url, cfg);
  if (url.rfind("http://", 0) == 0 || url.rfind("https://", 0) == 0) {
    const char* token = std::getenv(kApiKeyEnv);
    return std::make_unique<HttpBackend>(url, token ? token : "");
  }
  throw Error(ErrorCode::InvalidArgument, "unsupported backend URL '" + url + "'");
}

std::chrono::milliseconds RetryPolicy::delay_before_retry(std::size_t retry_index) const {
  auto d = initial_delay;
  for (std::size_t i = 0; i < retry_index; ++i) d *= multiplier;
  return d;
}

CompletionOutcome complete_with_retry(CompletionBackend& backend, const CompletionRequest& request,
                                      const RetryPolicy& policy, std::size_t* attempts) {
  CompletionOutcome outcome;
  for (std::size_t retry = 0;; ++retry) {
    ++outcome.attempts;
    if (attempts) *attempts = outcome.attempts;
    try {
      outcome.text = backend.complete(request);
      return outcome;
    } catch (const BackendError& e) {
      if (!e.retryable() || retry >= policy.max_retries) throw;
    }
    auto delay = policy.delay_before_retry(retry);
    if (policy.sleep) {
      policy.sleep(delay);
    } else {
      std::this_thread::sleep_for(delay);
    }
  }
}

}  // namespace instructpt
