#include "datr/model/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "datr/error.hpp"

namespace datr::model {

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v')) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else if (u < 0x80 && std::ispunct(u)) {
      continue;
    } else {
      current.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (!std::is_sorted(words_.begin(), words_.end()) ||
      std::adjacent_find(words_.begin(), words_.end()) != words_.end()) {
    throw ConfigError("vocabulary words must be sorted and unique");
  }
  for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], i + 1);
}

std::vector<std::string> Vocabulary::collect(const std::vector<std::string>& texts) {
  std::set<std::string> seen;
  for (const auto& t : texts) {
    for (auto& w : normalize_words(t)) seen.insert(std::move(w));
  }
  return {seen.begin(), seen.end()};
}

std::size_t Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnkId : it->second;
}

std::vector<std::size_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                  std::size_t max_tokens) {
  std::vector<std::size_t> ids;
  for (const auto& w : normalize_words(text)) {
    if (ids.size() >= max_tokens) break;
    ids.push_back(vocab.id(w));
  }
  if (ids.empty()) ids.push_back(kUnkId);
  return ids;
}

}  // namespace datr::model
