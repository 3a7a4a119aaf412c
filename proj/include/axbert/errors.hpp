#pragma once

#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>

namespace axbert {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A linear system that cannot be solved as posed.
struct SingularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Token or character id outside the vocabulary.
struct VocabularyError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input file; the message carries the offending line number.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Inconsistent records (length mismatch, non-finite loss, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::ostream*& warning_sink() {
  static std::ostream* sink = &std::clog;
  return sink;
}
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

// Redirects library warnings (nullptr silences them). Returns the previous sink.
inline std::ostream* set_warning_sink(std::ostream* sink) {
  std::lock_guard lock(detail::warning_mutex());
  std::ostream* prev = detail::warning_sink();
  detail::warning_sink() = sink;
  return prev;
}

inline void warn(const std::string& message) {
  std::lock_guard lock(detail::warning_mutex());
  if (auto* sink = detail::warning_sink()) *sink << "warning: " << message << '\n';
}

}  // namespace axbert
