#pragma once

// Sentence- and character-level detection/correction precision, recall, F1.
// A zero denominator yields 0 for that ratio; F1 is 0 when P + R == 0.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "axbert/errors.hpp"

namespace axbert {

struct EvalRecord {
  std::vector<int> input;
  std::vector<int> gold;
  std::vector<int> predicted;

  std::vector<std::size_t> gold_errors() const { return diff(input, gold); }
  std::vector<std::size_t> predicted_changes() const { return diff(input, predicted); }

 private:
  static std::vector<std::size_t> diff(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] != b[i]) out.push_back(i);
    return out;
  }
};

struct PRF {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool operator==(const PRF&) const = default;

  static PRF from_counts(std::size_t tp, std::size_t predicted, std::size_t actual) {
    PRF r;
    r.tp = tp;
    r.fp = predicted - tp;
    r.fn = actual - tp;
    r.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    r.recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
  }
};

struct LevelMetrics {
  PRF detection;
  PRF correction;
  bool operator==(const LevelMetrics&) const = default;
};

struct MetricsReport {
  LevelMetrics sentence;
  LevelMetrics character;
  std::size_t records = 0;
  bool operator==(const MetricsReport&) const = default;
};

namespace detail {
inline void check_records(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw DataError("metrics: no records");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.gold.size() != r.input.size() || r.predicted.size() != r.input.size())
      throw DataError("metrics: length mismatch in record " + std::to_string(i + 1));
  }
}
}  // namespace detail

// A sentence is flagged when the prediction differs from the input anywhere.
// Detection hit: flagged and the changed positions equal the gold error
// positions. Correction hit: prediction equals gold and gold has errors.
inline LevelMetrics sentence_metrics(const std::vector<EvalRecord>& records) {
  detail::check_records(records);
  std::size_t flagged = 0, errorful = 0, det_tp = 0, cor_tp = 0;
  for (const auto& r : records) {
    const auto gold = r.gold_errors();
    const auto changed = r.predicted_changes();
    if (!changed.empty()) ++flagged;
    if (!gold.empty()) ++errorful;
    if (!changed.empty() && changed == gold) ++det_tp;
    if (!gold.empty() && r.predicted == r.gold) ++cor_tp;
  }
  return {PRF::from_counts(det_tp, flagged, errorful), PRF::from_counts(cor_tp, flagged, errorful)};
}

// Per position: detection hit = changed position that is a gold error;
// correction hit = gold error position whose prediction equals gold.
inline LevelMetrics character_metrics(const std::vector<EvalRecord>& records) {
  detail::check_records(records);
  std::size_t changed = 0, errors = 0, det_tp = 0, cor_tp = 0;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.input.size(); ++i) {
      const bool is_error = r.input[i] != r.gold[i];
      const bool is_changed = r.input[i] != r.predicted[i];
      changed += is_changed;
      errors += is_error;
      det_tp += is_error && is_changed;
      cor_tp += is_error && r.predicted[i] == r.gold[i];
    }
  }
  return {PRF::from_counts(det_tp, changed, errors), PRF::from_counts(cor_tp, changed, errors)};
}

inline MetricsReport evaluate(const std::vector<EvalRecord>& records) {
  return {sentence_metrics(records), character_metrics(records), records.size()};
}

inline nlohmann::json to_json(const PRF& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}, {"tp", p.tp}, {"fp", p.fp}, {"fn", p.fn}};
}

inline nlohmann::json to_json(const MetricsReport& m) {
  auto level = [](const LevelMetrics& l) { return nlohmann::json{{"detection", to_json(l.detection)}, {"correction", to_json(l.correction)}}; };
  return {{"records", m.records}, {"sentence", level(m.sentence)}, {"character", level(m.character)}};
}

inline std::string to_text(const MetricsReport& m) {
  std::ostringstream out;
  char buf[160];
  out << "level      task        precision  recall     f1         tp     fp     fn\n";
  auto row = [&](const char* level, const char* task, const PRF& p) {
    std::snprintf(buf, sizeof buf, "%-10s %-11s %-10.4f %-10.4f %-10.4f %-6zu %-6zu %zu\n", level, task, p.precision, p.recall,
                  p.f1, p.tp, p.fp, p.fn);
    out << buf;
  };
  row("sentence", "detection", m.sentence.detection);
  row("sentence", "correction", m.sentence.correction);
  row("character", "detection", m.character.detection);
  row("character", "correction", m.character.correction);
  return out.str();
}

}  // namespace axbert
