#pragma once

// Two-pass regulated correction. The first, unregulated pass yields the
// attention trace from which M_A and the character weights are derived; the
// second pass regulates every layer's attention with those weights.

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "axbert/akn.hpp"
#include "axbert/alignment.hpp"
#include "axbert/encoder.hpp"
#include "axbert/regulator.hpp"

namespace axbert {

struct CorrectionDiagnostics {
  std::size_t real_len = 0;
  Matrix associative;       // M_S
  Matrix combined;          // M_A from the unregulated pass
  RegulatorWeights weights;
  AttentionTrace attention_before;
  AttentionTrace attention_after;
  Matrix logits_before;
  Matrix logits_after;
};

struct CorrectionResult {
  std::vector<int> corrected;  // padded to max_seq
  CorrectionDiagnostics diagnostics;
};

struct CorrectOptions {
  bool regulate = true;
  bool literal_regulation = false;
};

// `tokens` are unpadded character ids (truncated to max_seq).
inline CorrectionResult two_pass_correct(const EncoderState& state, const CoocStore& store, std::span<const int> tokens,
                                         const CorrectOptions& opt = {}) {
  const int d = state.config.max_seq;
  const std::size_t real_len = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(d));
  const std::vector<int> padded = pad_to(std::vector<int>(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(real_len)), d);

  CorrectionResult r;
  CorrectionDiagnostics& diag = r.diagnostics;
  diag.real_len = real_len;
  ForwardOutput first = forward(state, padded, real_len);
  diag.associative = padded_associative_matrix(store, padded, real_len);
  diag.combined = combined_attention(first.trace);
  diag.weights = character_weights(diag.combined, diag.associative, real_len);
  diag.attention_before = first.trace;
  diag.logits_before = first.logits;

  if (!opt.regulate) {
    diag.attention_after = first.trace;
    diag.logits_after = first.logits;
  } else {
    Regulation reg{diag.weights.w, opt.literal_regulation};
    ForwardOptions fopt;
    fopt.regulation = &reg;
    ForwardOutput second = forward(state, padded, real_len, fopt);
    diag.attention_after = std::move(second.trace);
    diag.logits_after = std::move(second.logits);
  }
  r.corrected = predict_corrections(diag.logits_after, padded, real_len);
  return r;
}

// Unpadded prediction for an unpadded input.
inline std::vector<int> correct_sentence(const EncoderState& state, const CoocStore& store, std::span<const int> tokens,
                                         const CorrectOptions& opt = {}) {
  auto r = two_pass_correct(state, store, tokens, opt);
  r.corrected.resize(r.diagnostics.real_len);
  return r.corrected;
}

namespace detail {
inline nlohmann::json grid(const Matrix& m, std::size_t n) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < static_cast<Index>(n); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}
}  // namespace detail

// Per-sentence case dump: characters, M_S, M_A, W (raw and clamped), and the
// per-layer head-summed attention before and after regulation. Grids cover the
// real (unpadded) positions only.
inline nlohmann::json diagnostics_json(const CorrectionDiagnostics& d, const std::vector<std::string>& chars) {
  const std::size_t n = d.real_len;
  nlohmann::json j;
  j["chars"] = chars;
  j["associative"] = detail::grid(d.associative, n);
  j["combined_attention"] = detail::grid(d.combined, n);
  j["weights"] = std::vector<double>(d.weights.w.data(), d.weights.w.data() + n);
  j["raw_weights"] = std::vector<double>(d.weights.raw.data(), d.weights.raw.data() + n);
  auto layers = [&](const AttentionTrace& t) {
    nlohmann::json out = nlohmann::json::array();
    for (int l = 0; l < t.layers; ++l) {
      Matrix sum = Matrix::Zero(t.seq_len(), t.seq_len());
      for (int h = 0; h < t.heads; ++h) sum += t.at(l, h);
      out.push_back(detail::grid(sum, n));
    }
    return out;
  };
  j["attention_before"] = layers(d.attention_before);
  j["attention_after"] = layers(d.attention_after);
  return j;
}

// Whitespace-separated numeric grid, one row per line (for plotting tools).
inline std::string grid_text(const Matrix& m, std::size_t n) {
  std::string out;
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    for (Index j = 0; j < static_cast<Index>(n); ++j) {
      if (j) out += ' ';
      out += detail::format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace axbert
