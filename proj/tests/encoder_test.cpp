#include <gtest/gtest.h>

#include <random>

#include "axbert/encoder.hpp"
#include "support/gradcheck.hpp"

namespace axbert {
namespace {

using namespace testing;

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 10;
  c.layers = 1;
  c.heads = 1;
  c.hidden = 8;
  c.max_seq = 4;
  c.dropout = 0.0;
  c.seed = 3;
  return c;
}

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 8;
  c.max_seq = 6;
  c.dropout = 0.0;
  c.seed = 5;
  return c;
}

// Spreads the weights so the check is not dominated by near-linear behaviour.
EncoderState perturbed(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  EncoderState s = EncoderState::initialize(cfg);
  std::mt19937_64 rng(seed);
  for (auto& p : s.params) p += random_matrix(p.rows(), p.cols(), rng, -scale, scale);
  return s;
}

TEST(Config, Validation) {
  ModelConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = tiny_config();
  c.max_seq = 1;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = tiny_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(Forward, ShapesAndStochasticTrace) {
  const EncoderState s = perturbed(small_config(), 1, 0.5);
  const std::vector<int> tokens{2, 5, 7, 3, 0, 0};
  const ForwardOutput out = forward(s, tokens, 4);
  EXPECT_EQ(out.logits.rows(), 6);
  EXPECT_EQ(out.logits.cols(), 12);
  EXPECT_EQ(out.embedded.rows(), 6);
  EXPECT_EQ(out.final_hidden.cols(), 8);
  ASSERT_EQ(out.trace.dis.size(), 4u);
  for (const Matrix& a : out.trace.dis) {
    EXPECT_GE(a.minCoeff(), 0.0);
    for (Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-6);
    EXPECT_TRUE(a.rightCols(2).isZero(0.0));
  }
}

TEST(Forward, RejectsBadTokens) {
  const EncoderState s = EncoderState::initialize(tiny_config());
  EXPECT_THROW(forward(s, std::vector<int>{2, 10, 0, 0}, 2), VocabularyError);
  EXPECT_THROW(forward(s, std::vector<int>{2, 3, 0}, 2), DimensionError);
}

TEST(Forward, DeterministicAcrossCalls) {
  const EncoderState a = EncoderState::initialize(small_config());
  const EncoderState b = EncoderState::initialize(small_config());
  ASSERT_EQ(a.params, b.params);
  const std::vector<int> tokens{3, 4, 5, 6, 7, 8};
  EXPECT_EQ(forward(a, tokens, 6).logits, forward(b, tokens, 6).logits);
}

TEST(Forward, DropoutIsSeededAndOffByDefault) {
  ModelConfig cfg = small_config();
  cfg.dropout = 0.3;
  const EncoderState s = EncoderState::initialize(cfg);
  const std::vector<int> tokens{3, 4, 5, 6, 7, 8};
  std::mt19937_64 r1(9), r2(9);
  ForwardOptions o1, o2;
  o1.dropout_rng = &r1;
  o2.dropout_rng = &r2;
  EXPECT_EQ(forward(s, tokens, 6, o1).logits, forward(s, tokens, 6, o2).logits);
  EXPECT_NE(forward(s, tokens, 6).logits, forward(s, tokens, 6, o1).logits);
  EXPECT_EQ(forward(s, tokens, 6).logits, forward(s, tokens, 6).logits);
}

TEST(Forward, PaddingTokensNeverReachRealPositions) {
  const EncoderState s = perturbed(small_config(), 2, 0.5);
  const std::vector<int> base{2, 5, 7, 0, 0, 0};
  const ForwardOutput ref = forward(s, base, 3);
  for (int alt = 1; alt < 12; ++alt) {
    std::vector<int> t = base;
    t[4] = alt;
    t[5] = (alt * 7) % 12;
    const ForwardOutput out = forward(s, t, 3);
    EXPECT_EQ(out.logits.topRows(3), ref.logits.topRows(3)) << alt;
  }
}

TEST(Forward, TraceMatchesRecomputedAttention) {
  const EncoderState s = perturbed(small_config(), 3, 0.5);
  const std::vector<int> tokens{2, 9, 4, 4, 11, 0};
  const ForwardOutput out = forward(s, tokens, 5);
  for (int l = 0; l < s.config.layers; ++l) {
    const auto again = recompute_attention(s, l, out.attention_inputs[static_cast<std::size_t>(l)], 5);
    for (int h = 0; h < s.config.heads; ++h)
      EXPECT_LT((again[static_cast<std::size_t>(h)] - out.trace.at(l, h)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Forward, UniformRegulationIsIdentity) {
  const EncoderState s = perturbed(small_config(), 4, 0.5);
  const std::vector<int> tokens{2, 9, 4, 6, 0, 0};
  Regulation reg{RowVector::Constant(6, 0.37), false};
  ForwardOptions opt;
  opt.regulation = &reg;
  const ForwardOutput plain = forward(s, tokens, 4);
  const ForwardOutput regulated = forward(s, tokens, 4, opt);
  EXPECT_LT((plain.logits - regulated.logits).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Forward, NonUniformRegulationChangesAttentionAndKeepsRowsStochastic) {
  const EncoderState s = perturbed(small_config(), 5, 0.5);
  const std::vector<int> tokens{2, 9, 4, 6, 3, 0};
  RowVector w = RowVector::Ones(6);
  w(1) = 1e-3;
  Regulation reg{w, false};
  ForwardOptions opt;
  opt.regulation = &reg;
  const ForwardOutput plain = forward(s, tokens, 5);
  const ForwardOutput regulated = forward(s, tokens, 5, opt);
  for (int l = 0; l < s.config.layers; ++l)
    for (int h = 0; h < s.config.heads; ++h) {
      const Matrix& a = regulated.trace.at(l, h);
      for (Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-9);
      EXPECT_LT(a.col(1).sum(), plain.trace.at(l, h).col(1).sum());
    }
}

TEST(Forward, RegulationWeightsMustBeInRange) {
  const EncoderState s = EncoderState::initialize(tiny_config());
  Regulation reg{RowVector::Constant(4, 2.0), false};
  ForwardOptions opt;
  opt.regulation = &reg;
  EXPECT_THROW(forward(s, std::vector<int>{2, 3, 4, 5}, 4, opt), ArgumentError);
  reg.weights = RowVector::Ones(3);
  EXPECT_THROW(forward(s, std::vector<int>{2, 3, 4, 5}, 4, opt), DimensionError);
}

TEST(Gradient, CorrectionLossMatchesFiniteDifferencesOnTinyConfig) {
  const ModelConfig cfg = tiny_config();
  const EncoderState s = perturbed(cfg, 6, 0.3);
  const std::vector<int> tokens{2, 7, 4, 0};
  const std::vector<int> targets{2, 5, 4, 0};
  const std::vector<char> mask{1, 1, 1, 0};
  const ScalarGraph f = [&](ad::Tape& t, const std::vector<ad::Var>& p) {
    const EncoderGraph g = build_encoder_graph(t, cfg, p, tokens, 3, {});
    return ad::cross_entropy_sum(g.logits, targets, mask);
  };
  const auto analytic = reverse_gradients(f, s.params);
  const auto numeric = numeric_gradients(f, s.params, 1e-5);
  for (std::size_t i = 0; i < s.params.size(); ++i)
    EXPECT_LE(relative_error(analytic[i], numeric[i]), 1e-4) << param::name(i, cfg.layers);
}

TEST(Gradient, RegulatedForwardMatchesFiniteDifferences) {
  const ModelConfig cfg = tiny_config();
  const EncoderState s = perturbed(cfg, 7, 0.3);
  const std::vector<int> tokens{2, 7, 4, 9};
  Regulation reg{(RowVector(4) << 1.0, 0.2, 0.6, 1e-3).finished(), false};
  ForwardOptions opt;
  opt.regulation = &reg;
  const ScalarGraph f = [&](ad::Tape& t, const std::vector<ad::Var>& p) {
    const EncoderGraph g = build_encoder_graph(t, cfg, p, tokens, 4, opt);
    return ad::cross_entropy_sum(g.logits, {3, 7, 4, 9}, {1, 1, 1, 1});
  };
  const auto analytic = reverse_gradients(f, s.params);
  const auto numeric = numeric_gradients(f, s.params, 1e-5);
  for (std::size_t i = 0; i < s.params.size(); ++i)
    EXPECT_LE(relative_error(analytic[i], numeric[i]), 1e-4) << param::name(i, cfg.layers);
}

TEST(TransformingMatrix, CopyingLayersGiveIdentity) {
  ModelConfig cfg = small_config();
  cfg.hidden = 16;
  EncoderState s = perturbed(cfg, 8, 0.5);
  using namespace param;
  for (int l = 0; l < cfg.layers; ++l)
    for (Layer k : {kWo, kBo, kW2, kB2}) s.params[layer(l, k)].setZero();
  for (std::size_t i : {std::size_t{kEmbLnGain}, tail(cfg.layers, kFinalLnGain)}) s.params[i].setOnes();
  for (std::size_t i : {std::size_t{kEmbLnBias}, tail(cfg.layers, kFinalLnBias)}) s.params[i].setZero();
  const ForwardOutput out = forward(s, std::vector<int>{2, 3, 4, 5, 6, 7}, 6);
  const Matrix mt = transforming_matrix(out);
  // the final LayerNorm re-normalizes an already normalized stream
  EXPECT_LT((mt - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(TransformingMatrix, OptimalOnTrainedLikeState) {
  ModelConfig cfg = small_config();
  cfg.hidden = 16;
  const EncoderState s = perturbed(cfg, 9, 0.8);
  const ForwardOutput out = forward(s, std::vector<int>{2, 3, 4, 5, 6, 7}, 6);
  const Matrix mt = transforming_matrix(out, 0.0);
  const double best = (mt * out.embedded - out.final_hidden).norm();
  std::mt19937_64 rng(10);
  for (int k = 0; k < 100; ++k) {
    const Matrix delta = random_matrix(6, 6, rng, -1e-3, 1e-3);
    EXPECT_GE(((mt + delta) * out.embedded - out.final_hidden).norm(), best);
  }
}

TEST(Predict, ArgmaxWithLowerIdTieBreak) {
  Matrix logits = Matrix::Zero(3, 5);
  logits(0, 4) = 1.0;
  logits(1, 2) = 2.0;
  logits(1, 3) = 2.0;
  const std::vector<int> input{1, 1, 0};
  const auto out = predict_corrections(logits, input, 2);
  EXPECT_EQ(out, (std::vector<int>{4, 2, 0}));
}

TEST(Sequence, PaddingHelpers) {
  EXPECT_EQ(pad_to({3, 4}, 4), (std::vector<int>{3, 4, 0, 0}));
  EXPECT_EQ(real_length(std::vector<int>{3, 4, 0, 0}), 2u);
  EXPECT_EQ(real_length(std::vector<int>{}), 0u);
}

TEST(State, ParameterLayoutNames) {
  const ModelConfig cfg = small_config();
  const EncoderState s = EncoderState::initialize(cfg);
  EXPECT_EQ(s.params.size(), param::count(cfg.layers));
  EXPECT_EQ(param::name(0, 2), "tok_emb");
  EXPECT_EQ(param::name(param::layer(1, param::kWq), 2), "layer1.wq");
  EXPECT_EQ(param::name(param::tail(2, param::kOutB), 2), "out.b");
  for (const auto& p : s.params) EXPECT_TRUE(p.allFinite());
}

}  // namespace
}  // namespace axbert
