#pragma once

// Associative knowledge network: a sparse, symmetric store of character-pair
// co-occurrence scores. Every ingested sentence is one tick; all previously
// accumulated mass decays by `shrink_rate` per tick. Decay is lazy: an entry
// keeps the tick it was last written at and is scaled on read.

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "axbert/errors.hpp"
#include "axbert/numerics.hpp"

namespace axbert {

inline constexpr double kDefaultShrinkRate = 0.95;

namespace detail {
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

template <class T>
T parse_number(std::string_view tok, std::size_t line, const char* what) {
  T value{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw ParseError(std::string("bad ") + what + " '" + std::string(tok) + "'", line);
  return value;
}
}  // namespace detail

class CoocStore {
 public:
  struct Entry {
    double score = 0.0;
    std::uint64_t last_tick = 0;
    bool operator==(const Entry&) const = default;
  };
  using Key = std::pair<int, int>;  // first <= second

  explicit CoocStore(int vocab_size = 0, double shrink_rate = kDefaultShrinkRate)
      : vocab_size_(vocab_size), shrink_rate_(shrink_rate) {
    if (vocab_size < 0) throw ArgumentError("CoocStore: negative vocabulary size");
    if (!(shrink_rate > 0.0 && shrink_rate <= 1.0)) throw ArgumentError("CoocStore: shrink_rate must be in (0, 1]");
  }

  int vocab_size() const { return vocab_size_; }
  double shrink_rate() const { return shrink_rate_; }
  std::uint64_t global_tick() const { return tick_; }
  std::size_t entry_count() const { return entries_.size(); }
  const std::map<Key, Entry>& entries() const { return entries_; }

  // One tick: every position pair p < q adds 1/(q - p) to the pair's score.
  void ingest(std::span<const int> chars) {
    for (int c : chars) check_id(c);
    ++tick_;
    const std::size_t n = chars.size();
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q)
        touch(chars[p], chars[q]).score += 1.0 / static_cast<double>(q - p);
  }

  double effective_score(int i, int j) const {
    check_id(i);
    check_id(j);
    auto it = entries_.find(key(i, j));
    if (it == entries_.end()) return 0.0;
    return decayed(it->second);
  }

  // Multiplies the pair's effective score by `ratio`. Returns false (and warns)
  // when the pair had no mass, in which case a zero entry is materialized.
  bool adjust_score(int a, int b, double ratio) {
    if (!(ratio > 0.0)) throw ArgumentError("adjust_score: ratio must be > 0");
    check_id(a);
    check_id(b);
    const bool existed = entries_.count(key(a, b)) != 0;
    if (!existed && ratio == 1.0) return true;
    Entry& e = touch(a, b);
    e.score *= ratio;
    if (!existed) warn("adjust_score: pair (" + std::to_string(a) + ", " + std::to_string(b) + ") has no association; score stays 0");
    return existed;
  }

  // Combines two independently built shards as if `later`'s sentences had been
  // ingested after this store's: this store's mass decays by later's tick count.
  void merge(const CoocStore& later) {
    if (later.vocab_size_ != vocab_size_ || later.shrink_rate_ != shrink_rate_)
      throw ArgumentError("merge: stores disagree on vocabulary size or shrink rate");
    const std::uint64_t new_tick = tick_ + later.tick_;
    for (auto& [k, e] : entries_) {
      e.score = decayed(e) * std::pow(shrink_rate_, static_cast<double>(later.tick_));
      e.last_tick = new_tick;
    }
    for (const auto& [k, e] : later.entries_) {
      Entry& mine = entries_[k];
      mine.score += later.decayed(e);
      mine.last_tick = new_tick;
    }
    tick_ = new_tick;
  }

  // Text format: header "v shrink_rate global_tick", then one "i j score last_tick"
  // line per entry in key order. Doubles are written in shortest round-trip form.
  std::string serialize() const {
    std::ostringstream out;
    out << vocab_size_ << ' ' << detail::format_double(shrink_rate_) << ' ' << tick_ << '\n';
    for (const auto& [k, e] : entries_)
      out << k.first << ' ' << k.second << ' ' << detail::format_double(e.score) << ' ' << e.last_tick << '\n';
    return out.str();
  }

  static CoocStore deserialize(std::istream& in) {
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError("empty AKN file", 1);
    auto head = split(line);
    if (head.size() != 3) throw ParseError("header needs 'v shrink_rate global_tick'", lineno);
    CoocStore store(detail::parse_number<int>(head[0], lineno, "vocabulary size"),
                    detail::parse_number<double>(head[1], lineno, "shrink rate"));
    store.tick_ = detail::parse_number<std::uint64_t>(head[2], lineno, "global tick");
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = split(line);
      if (f.size() != 4) throw ParseError("entry needs 'i j score last_tick'", lineno);
      const int i = detail::parse_number<int>(f[0], lineno, "id");
      const int j = detail::parse_number<int>(f[1], lineno, "id");
      Entry e{detail::parse_number<double>(f[2], lineno, "score"),
              detail::parse_number<std::uint64_t>(f[3], lineno, "tick")};
      if (i < 0 || j < i || j >= store.vocab_size_) throw ParseError("entry ids must satisfy 0 <= i <= j < v", lineno);
      if (!(e.score >= 0.0) || !std::isfinite(e.score)) throw ParseError("score must be finite and >= 0", lineno);
      if (e.last_tick > store.tick_) throw ParseError("last_tick exceeds global tick", lineno);
      if (!store.entries_.emplace(Key{i, j}, e).second) throw ParseError("duplicate entry", lineno);
    }
    return store;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write AKN file " + path);
    out << serialize();
  }

  static CoocStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open AKN file " + path);
    return deserialize(in);
  }

  bool operator==(const CoocStore& o) const {
    return vocab_size_ == o.vocab_size_ && shrink_rate_ == o.shrink_rate_ && tick_ == o.tick_ &&
           entries_ == o.entries_;
  }

 private:
  static Key key(int i, int j) { return i <= j ? Key{i, j} : Key{j, i}; }

  void check_id(int c) const {
    if (c < 0 || c >= vocab_size_)
      throw VocabularyError("AKN: character id " + std::to_string(c) + " outside [0, " + std::to_string(vocab_size_) + ")");
  }

  double decayed(const Entry& e) const {
    if (e.last_tick == tick_) return e.score;
    return e.score * std::pow(shrink_rate_, static_cast<double>(tick_ - e.last_tick));
  }

  // Brings an entry up to the current tick (creating it if needed).
  Entry& touch(int i, int j) {
    Entry& e = entries_[key(i, j)];
    if (e.last_tick != tick_) {
      e.score = decayed(e);
      e.last_tick = tick_;
    }
    return e;
  }

  static std::vector<std::string_view> split(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
      if (j > i) out.push_back(s.substr(i, j - i));
      i = j;
    }
    return out;
  }

  int vocab_size_;
  double shrink_rate_;
  std::uint64_t tick_ = 0;
  std::map<Key, Entry> entries_;
};

// Contextified associative matrix of one sentence:
//   M[i][j] = sigmoid(A(c_i, c_j) / mean_{k != i} A(c_i, c_k)) - 0.5
// A ratio with a context mean below 1e-12 is taken as 0. Entries are kept
// strictly inside (-0.5, 0.5) even where the sigmoid saturates in float64.
inline Matrix associative_matrix(const CoocStore& store, std::span<const int> sentence) {
  const Index d = static_cast<Index>(sentence.size());
  Matrix scores(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = i; j < d; ++j) scores(i, j) = scores(j, i) = store.effective_score(sentence[i], sentence[j]);
  Matrix m = Matrix::Zero(d, d);
  const double bound = std::nextafter(0.5, 0.0);
  for (Index i = 0; i < d; ++i) {
    if (d < 2) continue;
    const double context_mean = (scores.row(i).sum() - scores(i, i)) / static_cast<double>(d - 1);
    if (context_mean < kNormFloor) continue;
    for (Index j = 0; j < d; ++j)
      m(i, j) = std::clamp(sigmoid(scores(i, j) / context_mean) - 0.5, -bound, bound);
  }
  return m;
}

// Associative matrix of the first `real_len` positions embedded in a
// padded_len x padded_len zero matrix.
inline Matrix padded_associative_matrix(const CoocStore& store, std::span<const int> tokens, std::size_t real_len) {
  Matrix full = Matrix::Zero(static_cast<Index>(tokens.size()), static_cast<Index>(tokens.size()));
  const auto real = static_cast<Index>(real_len);
  full.topLeftCorner(real, real) = associative_matrix(store, tokens.first(real_len));
  return full;
}

}  // namespace axbert
