#include "sca/vocabulary.hpp"

#include <fstream>

#include "sca/errors.hpp"

namespace sca {

namespace {
const char* const kReservedWords[] = {"<pad>", "<start>", "<end>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const char* w : kReservedWords) add(w);
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
  for (const auto& w : words) add(w);
}

TokenId Vocabulary::add(const std::string& word) {
  if (word.empty() || word.find_first_of(" \t\r\n") != std::string::npos) {
    throw VocabularyError("invalid token '" + word + "'");
  }
  auto it = ids_.find(word);
  if (it != ids_.end()) return it->second;
  const TokenId id = words_.size();
  words_.push_back(word);
  ids_.emplace(word, id);
  return id;
}

TokenId Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) {
    throw VocabularyError("token id " + std::to_string(id) +
                          " outside vocabulary of size " +
                          std::to_string(words_.size()));
  }
  return words_[id];
}

std::vector<TokenId> Vocabulary::encode(
    const std::vector<std::string>& tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(
    const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(word(id));
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() < kReserved) {
    throw VocabularyError(path.string() + ": fewer than the reserved tokens");
  }
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (lines[i] != kReservedWords[i]) {
      throw VocabularyError(path.string() + ": line " + std::to_string(i + 1) +
                            " must be " + kReservedWords[i]);
    }
  }
  Vocabulary v;
  for (std::size_t i = kReserved; i < lines.size(); ++i) {
    if (v.contains(lines[i])) {
      throw VocabularyError(path.string() + ": duplicate token " + lines[i]);
    }
    v.add(lines[i]);
  }
  return v;
}

}  // namespace sca
