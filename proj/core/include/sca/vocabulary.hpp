#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "sca/beam_search.hpp"

namespace sca {

// Word <-> id bijection with fixed reserved ids.
// File form: one token per line, line number = id.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kStart = 1;
  static constexpr TokenId kEnd = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary();
  // Reserved tokens followed by `words` in order.
  explicit Vocabulary(const std::vector<std::string>& words);

  TokenId add(const std::string& word);
  bool contains(const std::string& word) const {
    return ids_.count(word) != 0;
  }
  // Unknown words map to kUnk.
  TokenId id(const std::string& word) const;
  // Throws VocabularyError for ids outside [0, size()).
  const std::string& word(TokenId id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace sca
