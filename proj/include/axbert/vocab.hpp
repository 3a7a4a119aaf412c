#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "axbert/errors.hpp"

namespace axbert {

// Splits UTF-8 text into code-point strings. Invalid bytes become single-byte
// "characters" so nothing is silently dropped.
inline std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (b >= 0xF0 && b < 0xF8)
      len = 4;
    else if (b >= 0xE0)
      len = 3;
    else if (b >= 0xC0)
      len = 2;
    if (b >= 0xF8 || i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

inline std::string rstrip_newline(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

// Character vocabulary. Id 0 is padding, id 1 stands in for unknown characters.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  // Builds from the regular characters; PAD and UNK are prepended.
  explicit Vocabulary(const std::vector<std::string>& chars) {
    add(kPadToken);
    add(kUnkToken);
    for (const auto& c : chars) add(c);
  }

  // Sorted distinct characters of a corpus (one sentence per element).
  static Vocabulary from_corpus(const std::vector<std::string>& sentences) {
    std::set<std::string> seen;
    for (const auto& s : sentences)
      for (auto& c : utf8_chars(s)) seen.insert(std::move(c));
    return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
  }

  int size() const { return static_cast<int>(chars_.size()); }
  const std::string& at(int id) const {
    if (id < 0 || id >= size()) throw VocabularyError("vocabulary id " + std::to_string(id) + " out of range");
    return chars_[static_cast<std::size_t>(id)];
  }
  bool contains(const std::string& c) const { return ids_.count(c) != 0; }

  // Unknown characters map to UNK.
  int id(const std::string& c) const {
    auto it = ids_.find(c);
    return it == ids_.end() ? kUnk : it->second;
  }
  // Throws for characters that are not in the vocabulary.
  int require(const std::string& c) const {
    auto it = ids_.find(c);
    if (it == ids_.end()) throw VocabularyError("character '" + c + "' not in vocabulary");
    return it->second;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& c : utf8_chars(text)) ids.push_back(id(c));
    return ids;
  }

  // PAD ids are skipped.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int i : ids)
      if (i != kPad) out += at(i);
    return out;
  }

  // One character per line; the line number (from 0) is the id.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (const auto& c : chars_) out << c << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file " + path);
    Vocabulary v;
    v.chars_.clear();
    v.ids_.clear();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = rstrip_newline(line);
      if (v.ids_.count(line)) throw ParseError("duplicate vocabulary entry '" + line + "'", lineno);
      v.add(line);
    }
    if (v.size() < 2 || v.chars_[0] != kPadToken || v.chars_[1] != kUnkToken)
      throw ParseError("vocabulary must start with " + std::string(kPadToken) + " and " + kUnkToken, 1);
    return v;
  }

  bool operator==(const Vocabulary& o) const { return chars_ == o.chars_; }

 private:
  void add(const std::string& c) {
    if (ids_.count(c)) return;
    ids_.emplace(c, size());
    chars_.push_back(c);
  }

  std::vector<std::string> chars_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace axbert
