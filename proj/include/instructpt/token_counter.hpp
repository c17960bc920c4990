#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>

namespace instructpt {

// Tokenizer stand-in. Implementations must return 0 for "" and satisfy
// count(a + b) <= count(a) + count(b) + slack().
class TokenCounter {
 public:
  virtual ~TokenCounter() = default;
  virtual std::size_t count(std::string_view text) const = 0;
  virtual std::size_t slack() const { return 0; }
  virtual std::string name() const = 0;
};

// Number of whitespace-delimited words.
class WordCounter final : public TokenCounter {
 public:
  std::size_t count(std::string_view text) const override;
  std::string name() const override { return "words"; }
};

// Approximate subword count: ceil(1.3 * words). Crude, but dependency free;
// plug a real tokenizer through TokenCounter for exact budgets.
class ApproxTokenCounter final : public TokenCounter {
 public:
  std::size_t count(std::string_view text) const override;
  std::string name() const override { return "approx"; }
};

std::size_t count_words(std::string_view text);

// "words" or "approx"; throws InvalidArgument otherwise.
std::unique_ptr<TokenCounter> make_token_counter(std::string_view name);

}  // namespace instructpt
