#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "instructpt/error.hpp"
#include "instructpt/template_engine.hpp"

namespace instructpt {

struct CompletionRequest {
  std::string prompt;
  std::size_t max_new_tokens = 700;
  std::vector<std::string> stop;
  double temperature = 0.0;
};

// Raised by backends. Transport failures are retryable; anything the server
// rejected deterministically is not.
class BackendError : public Error {
 public:
  BackendError(const std::string& message, bool retryable)
      : Error(ErrorCode::BackendError, message), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

// Returns the continuation only: no prompt echo, and generation stops before
// the first stop string.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const CompletionRequest& request) = 0;
};

// Cuts text at the earliest occurrence of any stop string.
std::string apply_stop(std::string text, const std::vector<std::string>& stop);

// POSTs {"prompt", "max_tokens", "stop", "temperature"} and reads {"text"}
// (or the OpenAI-style {"choices": [{"text"}]}).
class HttpBackend final : public CompletionBackend {
 public:
  HttpBackend(std::string url, std::string bearer_token = {},
              std::chrono::seconds timeout = std::chrono::seconds(120));
  std::string complete(const CompletionRequest& request) override;

  static std::string request_body(const CompletionRequest& request);
  static std::string response_text(const std::string& body);

 private:
  std::string origin_;  // scheme://host[:port]
  std::string path_;
  std::string token_;
  std::chrono::seconds timeout_;
};

// In-process stand-in for the synthesizer, selected by "stub:" URLs:
//   stub: / stub:random   seeded pairs derived from the current text
//   stub:fixed            one canned free-form pair for every prompt
//   stub:garbage          text with no pairs
// Query parameters: pairs=<k>, words=<t>, seed=<s>, formats=free_form|all, delay_ms=<d>.
class StubBackend final : public CompletionBackend {
 public:
  enum class Mode { Random, Fixed, Garbage };

  struct Options {
    Mode mode = Mode::Random;
    std::size_t pairs = 3;
    std::size_t words = 8;
    std::uint64_t seed = 0;
    bool all_formats = false;
    std::chrono::milliseconds delay{0};
  };

  StubBackend(Options options, SentinelConfig cfg);
  static std::unique_ptr<StubBackend> from_url(const std::string& url, SentinelConfig cfg);

  std::string complete(const CompletionRequest& request) override;

  // The pairs the stub produces for a given current text; lets tests predict output.
  std::vector<InstructionResponsePair> pairs_for(std::string_view current_text) const;

  static const InstructionResponsePair& fixed_pair();

 private:
  Options options_;
  SentinelConfig cfg_;
};

// Environment variable holding the bearer token for HTTP backends.
inline constexpr const char* kApiKeyEnv = "INSTRUCTPT_API_KEY";

std::unique_ptr<CompletionBackend> make_backend(const std::string& url, const SentinelConfig& cfg);

struct RetryPolicy {
  std::size_t max_retries = 3;  // after the first attempt
  std::chrono::milliseconds initial_delay{1000};
  unsigned multiplier = 4;      // 1s, 4s, 16s
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to std::this_thread::sleep_for

  std::chrono::milliseconds delay_before_retry(std::size_t retry_index) const;
};

struct CompletionOutcome {
  std::string text;
  std::size_t attempts = 0;
};

// Retries retryable BackendErrors per policy; rethrows the last error when
// exhausted. *attempts (if given) holds the number of calls made either way.
CompletionOutcome complete_with_retry(CompletionBackend& backend, const CompletionRequest& request,
                                      const RetryPolicy& policy, std::size_t* attempts = nullptr);

}  // namespace instructpt
