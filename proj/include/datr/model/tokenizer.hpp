#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace datr::model {

inline constexpr std::size_t kUnkId = 0;

// Lowercases ASCII letters, drops ASCII punctuation and splits on whitespace.
// Non-ASCII bytes are kept as part of words.
std::vector<std::string> normalize_words(std::string_view text);

class Vocabulary {
 public:
  Vocabulary() = default;
  // `words` must be sorted and unique; word i gets id i+1.
  explicit Vocabulary(std::vector<std::string> words);

  // Sorted unique words appearing in `texts` after normalization.
  static std::vector<std::string> collect(const std::vector<std::string>& texts);

  std::size_t id(const std::string& word) const;
  std::size_t size() const { return words_.size() + 1; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Token ids truncated to max_tokens; empty input yields a single UNK.
std::vector<std::size_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                  std::size_t max_tokens);

}  // namespace datr::model
