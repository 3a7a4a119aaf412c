#pragma once

// Small character-level BERT-style encoder (pre-LayerNorm) with attention
// tracing and an optional attention-regulation hook.

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "axbert/autodiff.hpp"
#include "axbert/errors.hpp"
#include "axbert/numerics.hpp"
#include "axbert/regulator.hpp"
#include "axbert/vocab.hpp"

namespace axbert {

struct ModelConfig {
  int vocab_size = 50;
  int layers = 4;
  int heads = 4;
  int hidden = 64;
  int ffn = 0;  // 0 means 4 * hidden
  int max_seq = 16;
  double dropout = 0.3;
  std::uint64_t seed = 1;

  int ffn_size() const { return ffn > 0 ? ffn : 4 * hidden; }
  int head_dim() const { return hidden / heads; }

  void validate() const {
    if (vocab_size < 2) throw ArgumentError("ModelConfig: vocab_size must be >= 2");
    if (layers < 1 || heads < 1 || hidden < 1) throw ArgumentError("ModelConfig: layers, heads, hidden must be >= 1");
    if (hidden % heads != 0) throw ArgumentError("ModelConfig: hidden must be divisible by heads");
    if (max_seq < 2) throw ArgumentError("ModelConfig: max_seq must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("ModelConfig: dropout must be in [0, 1)");
    if (ffn < 0) throw ArgumentError("ModelConfig: ffn must be >= 0");
  }
  bool operator==(const ModelConfig&) const = default;
};

// AttDis[l][h], each d x d and row-stochastic.
struct AttentionTrace {
  int layers = 0;
  int heads = 0;
  std::vector<Matrix> dis;  // layer-major

  AttentionTrace() = default;
  AttentionTrace(int l, int h, Index d) : layers(l), heads(h), dis(static_cast<std::size_t>(l * h), Matrix::Zero(d, d)) {}

  Matrix& at(int l, int h) { return dis[static_cast<std::size_t>(l * heads + h)]; }
  const Matrix& at(int l, int h) const { return dis[static_cast<std::size_t>(l * heads + h)]; }
  Index seq_len() const { return dis.empty() ? 0 : dis.front().rows(); }
};

struct ForwardOutput {
  Matrix logits;  // d x v
  AttentionTrace trace;
  Matrix embedded;  // E: d x H, output of the embedding block
  Matrix final_hidden;  // F: d x H, output of the last block
  std::vector<Matrix> attention_inputs;  // per layer: normalized input fed to attention
};

// Regulation applied to every layer's post-softmax attention.
struct Regulation {
  RowVector weights;
  bool literal = false;  // debug: use the literal weight-matrix product
};

struct ForwardOptions {
  const Regulation* regulation = nullptr;
  std::mt19937_64* dropout_rng = nullptr;  // null disables dropout
};

// Named parameter layout shared by the state, the optimizer and checkpoints.
namespace param {
enum Global : std::size_t { kTokEmb, kPosEmb, kEmbLnGain, kEmbLnBias, kGlobalCount };
enum Layer : std::size_t {
  kLn1Gain, kLn1Bias, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kLn2Gain, kLn2Bias, kW1, kB1, kW2, kB2, kLayerCount
};
enum Tail : std::size_t { kFinalLnGain, kFinalLnBias, kOutW, kOutB, kTailCount };

inline std::size_t layer(int l, Layer k) { return kGlobalCount + static_cast<std::size_t>(l) * kLayerCount + k; }
inline std::size_t tail(int layers, Tail k) { return kGlobalCount + static_cast<std::size_t>(layers) * kLayerCount + k; }
inline std::size_t count(int layers) { return tail(layers, kTailCount); }

inline std::string name(std::size_t index, int layers) {
  static const char* g[] = {"tok_emb", "pos_emb", "emb_ln.gain", "emb_ln.bias"};
  static const char* ln[] = {"ln1.gain", "ln1.bias", "wq", "bq", "wk", "bk", "wv", "bv",
                             "wo", "bo", "ln2.gain", "ln2.bias", "w1", "b1", "w2", "b2"};
  static const char* t[] = {"final_ln.gain", "final_ln.bias", "out.w", "out.b"};
  if (index < kGlobalCount) return g[index];
  const std::size_t rel = index - kGlobalCount;
  if (rel < static_cast<std::size_t>(layers) * kLayerCount)
    return "layer" + std::to_string(rel / kLayerCount) + "." + ln[rel % kLayerCount];
  return t[rel - static_cast<std::size_t>(layers) * kLayerCount];
}
}  // namespace param

struct EncoderState {
  ModelConfig config;
  std::vector<Matrix> params;

  // Gaussian(0, 0.02) weights, unit LayerNorm gains, zero biases.
  static EncoderState initialize(const ModelConfig& cfg) {
    cfg.validate();
    EncoderState s;
    s.config = cfg;
    const Index v = cfg.vocab_size, h = cfg.hidden, d = cfg.max_seq, f = cfg.ffn_size();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    auto gaussian = [&](Index r, Index c) {
      Matrix m(r, c);
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
      return m;
    };
    auto zeros = [](Index r, Index c) { return Matrix::Zero(r, c).eval(); };
    auto ones = [](Index r, Index c) { return Matrix::Ones(r, c).eval(); };

    s.params.resize(param::count(cfg.layers));
    s.params[param::kTokEmb] = gaussian(v, h);
    s.params[param::kPosEmb] = gaussian(d, h);
    s.params[param::kEmbLnGain] = ones(1, h);
    s.params[param::kEmbLnBias] = zeros(1, h);
    for (int l = 0; l < cfg.layers; ++l) {
      using namespace param;
      s.params[layer(l, kLn1Gain)] = ones(1, h);
      s.params[layer(l, kLn1Bias)] = zeros(1, h);
      s.params[layer(l, kWq)] = gaussian(h, h);
      s.params[layer(l, kBq)] = zeros(1, h);
      s.params[layer(l, kWk)] = gaussian(h, h);
      s.params[layer(l, kBk)] = zeros(1, h);
      s.params[layer(l, kWv)] = gaussian(h, h);
      s.params[layer(l, kBv)] = zeros(1, h);
      s.params[layer(l, kWo)] = gaussian(h, h);
      s.params[layer(l, kBo)] = zeros(1, h);
      s.params[layer(l, kLn2Gain)] = ones(1, h);
      s.params[layer(l, kLn2Bias)] = zeros(1, h);
      s.params[layer(l, kW1)] = gaussian(h, f);
      s.params[layer(l, kB1)] = zeros(1, f);
      s.params[layer(l, kW2)] = gaussian(f, h);
      s.params[layer(l, kB2)] = zeros(1, h);
    }
    s.params[param::tail(cfg.layers, param::kFinalLnGain)] = ones(1, h);
    s.params[param::tail(cfg.layers, param::kFinalLnBias)] = zeros(1, h);
    s.params[param::tail(cfg.layers, param::kOutW)] = gaussian(h, v);
    s.params[param::tail(cfg.layers, param::kOutB)] = zeros(1, v);
    return s;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += static_cast<std::size_t>(p.size());
    return n;
  }
};

// Differentiable view of one forward pass.
struct EncoderGraph {
  ad::Var logits;
  ad::Var embedded;
  ad::Var final_hidden;
  std::vector<std::vector<ad::Var>> attention;  // [layer][head], the attention actually used
  std::vector<ad::Var> attention_inputs;
};

// Additive key mask: columns at or past real_len get -inf. An all-padding
// sequence is left unmasked.
inline Matrix attention_mask(Index d, std::size_t real_len) {
  Matrix m = Matrix::Zero(d, d);
  if (real_len == 0) return m;
  for (Index j = static_cast<Index>(real_len); j < d; ++j) m.col(j).setConstant(-std::numeric_limits<double>::infinity());
  return m;
}

namespace detail {
inline Matrix dropout_mask(Index r, Index c, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix m(r, c);
  const double scale = 1.0 / (1.0 - rate);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
  return m;
}

inline ad::Var maybe_dropout(const ad::Var& x, const ForwardOptions& opt, double rate) {
  if (!opt.dropout_rng || rate <= 0.0) return x;
  return ad::mul_const(x, dropout_mask(x.rows(), x.cols(), rate, *opt.dropout_rng));
}

inline void check_tokens(const ModelConfig& cfg, std::span<const int> tokens, std::size_t real_len) {
  if (static_cast<int>(tokens.size()) != cfg.max_seq)
    throw DimensionError("forward: expected " + std::to_string(cfg.max_seq) + " tokens, got " + std::to_string(tokens.size()));
  if (real_len > tokens.size()) throw DimensionError("forward: real length exceeds sequence length");
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size)
      throw VocabularyError("forward: token id " + std::to_string(t) + " outside [0, " + std::to_string(cfg.vocab_size) + ")");
}
}  // namespace detail

// Builds the forward graph on `tape`. `params` are tape leaves in param:: order.
inline EncoderGraph build_encoder_graph(ad::Tape& tape, const ModelConfig& cfg, const std::vector<ad::Var>& params,
                                        std::span<const int> tokens, std::size_t real_len,
                                        const ForwardOptions& opt = {}) {
  using namespace param;
  detail::check_tokens(cfg, tokens, real_len);
  if (params.size() != count(cfg.layers)) throw DimensionError("build_encoder_graph: wrong parameter count");
  if (opt.regulation && opt.regulation->weights.size() != cfg.max_seq)
    throw DimensionError("forward: regulation weights must have length max_seq");

  const Index d = cfg.max_seq;
  const int dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix mask = attention_mask(d, real_len);
  const std::vector<int> ids(tokens.begin(), tokens.end());

  EncoderGraph g;
  ad::Var x = ad::add(ad::gather_rows(params[kTokEmb], ids), params[kPosEmb]);
  x = ad::layer_norm(x, params[kEmbLnGain], params[kEmbLnBias]);
  g.embedded = x;
  x = detail::maybe_dropout(x, opt, cfg.dropout);

  g.attention.resize(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    auto p = [&](Layer k) { return params[layer(l, k)]; };
    ad::Var h = ad::layer_norm(x, p(kLn1Gain), p(kLn1Bias));
    g.attention_inputs.push_back(h);
    ad::Var q = ad::add_row(ad::matmul(h, p(kWq)), p(kBq));
    ad::Var k = ad::add_row(ad::matmul(h, p(kWk)), p(kBk));
    ad::Var v = ad::add_row(ad::matmul(h, p(kWv)), p(kBv));
    std::vector<ad::Var> heads;
    for (int a = 0; a < cfg.heads; ++a) {
      ad::Var qh = ad::slice_cols(q, a * dh, dh);
      ad::Var kh = ad::slice_cols(k, a * dh, dh);
      ad::Var vh = ad::slice_cols(v, a * dh, dh);
      ad::Var scores = ad::add_const(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), mask);
      ad::Var att = ad::softmax_rows(scores);
      if (opt.regulation) {
        const RowVector& w = opt.regulation->weights;
        if (opt.regulation->literal) {
          check_regulation_args(att.value(), w, l, cfg.layers);
          att = ad::matmul(att, tape.constant(regulation_strength(l, cfg.layers) * regulation_matrix_literal(w)));
        } else {
          check_regulation_args(att.value(), w, l, cfg.layers);
          if (!weights_uniform_on_support(att.value(), w)) {
            const double beta = regulation_strength(l, cfg.layers);
            att = ad::axpby(beta, ad::row_normalize(ad::col_scale(att, w)), 1.0 - beta, att);
          }
        }
      }
      g.attention[static_cast<std::size_t>(l)].push_back(att);
      heads.push_back(ad::matmul(detail::maybe_dropout(att, opt, cfg.dropout), vh));
    }
    ad::Var attn_out = ad::add_row(ad::matmul(ad::concat_cols(heads), p(kWo)), p(kBo));
    x = ad::add(x, detail::maybe_dropout(attn_out, opt, cfg.dropout));
    ad::Var h2 = ad::layer_norm(x, p(kLn2Gain), p(kLn2Bias));
    ad::Var act = ad::gelu(ad::add_row(ad::matmul(h2, p(kW1)), p(kB1)));
    act = detail::maybe_dropout(act, opt, cfg.dropout);
    ad::Var ff = ad::add_row(ad::matmul(act, p(kW2)), p(kB2));
    x = ad::add(x, detail::maybe_dropout(ff, opt, cfg.dropout));
  }
  x = ad::layer_norm(x, params[tail(cfg.layers, kFinalLnGain)], params[tail(cfg.layers, kFinalLnBias)]);
  g.final_hidden = x;
  g.logits = ad::add_row(ad::matmul(x, params[tail(cfg.layers, kOutW)]), params[tail(cfg.layers, kOutB)]);
  return g;
}

// Puts every parameter on the tape, as variables or as constants.
inline std::vector<ad::Var> tape_parameters(ad::Tape& tape, const EncoderState& state, bool trainable) {
  std::vector<ad::Var> vars;
  vars.reserve(state.params.size());
  for (const auto& p : state.params) vars.push_back(trainable ? tape.variable(p) : tape.constant(p));
  return vars;
}

inline ForwardOutput collect_output(const EncoderGraph& g, const ModelConfig& cfg) {
  ForwardOutput out;
  out.logits = g.logits.value();
  out.embedded = g.embedded.value();
  out.final_hidden = g.final_hidden.value();
  out.trace = AttentionTrace(cfg.layers, cfg.heads, cfg.max_seq);
  for (int l = 0; l < cfg.layers; ++l) {
    out.attention_inputs.push_back(g.attention_inputs[static_cast<std::size_t>(l)].value());
    for (int h = 0; h < cfg.heads; ++h) out.trace.at(l, h) = g.attention[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)].value();
  }
  return out;
}

// Inference pass (no gradients).
inline ForwardOutput forward(const EncoderState& state, std::span<const int> tokens, std::size_t real_len,
                             const ForwardOptions& opt = {}) {
  ad::Tape tape;
  const auto params = tape_parameters(tape, state, false);
  return collect_output(build_encoder_graph(tape, state.config, params, tokens, real_len, opt), state.config);
}

// Recomputes layer l's unregulated attention from the recorded normalized input.
inline std::vector<Matrix> recompute_attention(const EncoderState& state, int l, const Matrix& attention_input,
                                               std::size_t real_len) {
  using namespace param;
  const ModelConfig& cfg = state.config;
  const int dh = cfg.head_dim();
  auto p = [&](Layer k) -> const Matrix& { return state.params[layer(l, k)]; };
  const Matrix q = (attention_input * p(kWq)).rowwise() + p(kBq).row(0);
  const Matrix k = (attention_input * p(kWk)).rowwise() + p(kBk).row(0);
  const Matrix mask = attention_mask(attention_input.rows(), real_len);
  std::vector<Matrix> out;
  for (int a = 0; a < cfg.heads; ++a) {
    Matrix scores = q.middleCols(a * dh, dh) * k.middleCols(a * dh, dh).transpose();
    scores = scores / std::sqrt(static_cast<double>(dh)) + mask;
    out.push_back(softmax_rows(scores));
  }
  return out;
}

// Per-position argmax (ties go to the lower id); padding positions copy the input.
inline std::vector<int> predict_corrections(const Matrix& logits, std::span<const int> input, std::size_t real_len) {
  if (static_cast<Index>(input.size()) != logits.rows()) throw DimensionError("predict_corrections: length mismatch");
  std::vector<int> out(input.begin(), input.end());
  for (std::size_t i = 0; i < real_len && i < input.size(); ++i) {
    const auto row = logits.row(static_cast<Index>(i));
    Index best = 0;
    for (Index j = 1; j < row.size(); ++j)
      if (row(j) > row(best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

// Number of leading non-PAD tokens.
inline std::size_t real_length(std::span<const int> tokens) {
  std::size_t n = 0;
  while (n < tokens.size() && tokens[n] != Vocabulary::kPad) ++n;
  return n;
}

// Truncates or pads with PAD to exactly `len` ids.
inline std::vector<int> pad_to(std::vector<int> ids, int len) {
  ids.resize(static_cast<std::size_t>(len), Vocabulary::kPad);
  return ids;
}

// Least-squares map M_T with M_T * E ~ F. No gradient flows through it.
inline Matrix transforming_matrix(const ForwardOutput& out, double ridge = kDefaultRidge) {
  return least_squares_transform(out.embedded, out.final_hidden, ridge);
}

}  // namespace axbert
