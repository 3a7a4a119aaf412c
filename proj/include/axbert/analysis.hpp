#pragma once

// Interpretability analyses: layer-wise attention/association similarity and
// controllability under adjusted associative scores.

#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "axbert/akn.hpp"
#include "axbert/alignment.hpp"
#include "axbert/correction.hpp"
#include "axbert/encoder.hpp"
#include "axbert/metrics.hpp"
#include "axbert/training.hpp"

namespace axbert {

// Runs two-pass correction over every pair and collects evaluation records.
inline std::vector<EvalRecord> run_correction(const EncoderState& state, const CoocStore& store,
                                              const std::vector<ParallelPair>& pairs, const CorrectOptions& opt = {}) {
  std::vector<EvalRecord> records;
  records.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.wrong.size() != p.correct.size()) throw DataError("run_correction: pair lengths differ");
    const std::size_t n = std::min<std::size_t>(p.wrong.size(), static_cast<std::size_t>(state.config.max_seq));
    EvalRecord r;
    r.input.assign(p.wrong.begin(), p.wrong.begin() + static_cast<std::ptrdiff_t>(n));
    r.gold.assign(p.correct.begin(), p.correct.begin() + static_cast<std::ptrdiff_t>(n));
    r.predicted = correct_sentence(state, store, r.input, opt);
    records.push_back(std::move(r));
  }
  return records;
}

// Mean over sentences of cos(flat(sum_h AttDis[l][h]), flat(M_S)) per layer,
// on the unregulated pass and over real positions only.
inline std::vector<double> similarity_analysis(const EncoderState& state, const CoocStore& store,
                                               const std::vector<std::vector<int>>& sentences) {
  const ModelConfig& cfg = state.config;
  std::vector<double> mean(static_cast<std::size_t>(cfg.layers), 0.0);
  if (sentences.empty()) return mean;
  for (const auto& s : sentences) {
    const std::size_t n = std::min<std::size_t>(s.size(), static_cast<std::size_t>(cfg.max_seq));
    const auto padded = pad_to(std::vector<int>(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(n)), cfg.max_seq);
    const ForwardOutput out = forward(state, padded, n);
    const RowVector ms = masked_flatten(padded_associative_matrix(store, padded, n), n);
    for (int l = 0; l < cfg.layers; ++l) {
      Matrix sum = Matrix::Zero(cfg.max_seq, cfg.max_seq);
      for (int h = 0; h < cfg.heads; ++h) sum += out.trace.at(l, h);
      mean[static_cast<std::size_t>(l)] += cosine_sim(masked_flatten(sum, n), ms);
    }
  }
  for (double& m : mean) m /= static_cast<double>(sentences.size());
  return mean;
}

inline std::string similarity_csv(const std::vector<double>& per_layer) {
  std::ostringstream out;
  out << "layer,similarity\n";
  for (std::size_t l = 0; l < per_layer.size(); ++l) out << l << ',' << detail::format_double(per_layer[l]) << '\n';
  return out.str();
}

struct ControlReport {
  std::vector<double> ratios;
  std::vector<double> retaining;  // retained / total corrected errors, per ratio
  std::size_t total_errors = 0;   // errors corrected with the unadjusted store
  std::vector<std::size_t> retained;
};

inline nlohmann::json to_json(const ControlReport& r) {
  return {{"ratios", r.ratios}, {"retaining_ratio", r.retaining}, {"retained", r.retained}, {"total_errors", r.total_errors}};
}

// For each error the model fixes with the original store, scales the scores
// of (error character, every other character of the sentence) by each ratio
// on a private copy of the store, reruns correction, and counts the errors
// that are no longer corrected.
inline ControlReport controllability_analysis(const EncoderState& state, const CoocStore& store,
                                              const std::vector<ParallelPair>& errorful, const std::vector<double>& ratios,
                                              const CorrectOptions& opt = {}) {
  ControlReport report;
  report.ratios = ratios;
  report.retained.assign(ratios.size(), 0);
  report.retaining.assign(ratios.size(), 0.0);

  struct Case {
    std::vector<int> input;
    std::vector<int> gold;
    std::vector<std::size_t> fixed;  // error positions corrected at ratio 1
  };
  std::vector<Case> cases;
  for (const auto& p : errorful) {
    const std::size_t n = std::min<std::size_t>(p.wrong.size(), static_cast<std::size_t>(state.config.max_seq));
    Case c;
    c.input.assign(p.wrong.begin(), p.wrong.begin() + static_cast<std::ptrdiff_t>(n));
    c.gold.assign(p.correct.begin(), p.correct.begin() + static_cast<std::ptrdiff_t>(n));
    const auto predicted = correct_sentence(state, store, c.input, opt);
    for (std::size_t i = 0; i < n; ++i)
      if (p.wrong[i] != p.correct[i] && predicted[i] == p.correct[i]) c.fixed.push_back(i);
    if (!c.fixed.empty()) {
      report.total_errors += c.fixed.size();
      cases.push_back(std::move(c));
    }
  }
  if (report.total_errors == 0) {
    warn("controllability_analysis: the model corrects none of the given errors; report is empty");
    return report;
  }

  for (std::size_t k = 0; k < ratios.size(); ++k) {
    for (const Case& c : cases) {
      CoocStore adjusted = store;
      std::set<std::pair<int, int>> pairs;
      for (std::size_t p : c.fixed)
        for (std::size_t q = 0; q < c.input.size(); ++q)
          if (q != p) pairs.insert(std::minmax(c.input[p], c.input[q]));
      std::ostream* prev = set_warning_sink(nullptr);
      for (const auto& [a, b] : pairs) adjusted.adjust_score(a, b, ratios[k]);
      set_warning_sink(prev);
      const auto predicted = correct_sentence(state, adjusted, c.input, opt);
      for (std::size_t p : c.fixed) report.retained[k] += predicted[p] != c.gold[p];
    }
    report.retaining[k] = static_cast<double>(report.retained[k]) / static_cast<double>(report.total_errors);
  }
  return report;
}

}  // namespace axbert
