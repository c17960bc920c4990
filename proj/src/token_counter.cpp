#include "instructpt/token_counter.hpp"

#include "instructpt/error.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

std::size_t count_words(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

std::size_t WordCounter::count(std::string_view text) const { return count_words(text); }

std::size_t ApproxTokenCounter::count(std::string_view text) const {
  const std::size_t words = count_words(text);
  return (words * 13 + 9) / 10;
}

std::unique_ptr<TokenCounter> make_token_counter(std::string_view name) {
  if (name == "words") return std::make_unique<WordCounter>();
  if (name == "approx") return std::make_unique<ApproxTokenCounter>();
  throw Error(ErrorCode::InvalidArgument, "unknown token counter '" + std::string(name) + "'");
}

}  // namespace instructpt
