#pragma once

// Translator matrix between flattened transforming matrices and flattened
// associative matrices, the layer-weighted attention combination, and the two
// cosine alignment losses built on them. Flattening is row-major throughout.

#include <string>
#include <vector>

#include "axbert/autodiff.hpp"
#include "axbert/encoder.hpp"
#include "axbert/numerics.hpp"

namespace axbert {

struct AlignmentReport {
  double s_ts = 0.0;  // cos(M_F * flat(M_T), flat(M_S))
  double s_as = 0.0;  // cos(flat(M_A), M_F^-1 * flat(M_S))
  double l_f = 1.0;
  double l_a = 1.0;
};

// Trainable d^2 x d^2 translator, initialized to the identity.
struct TranslatorMatrix {
  Matrix weights;

  TranslatorMatrix() = default;
  explicit TranslatorMatrix(Index seq_len) : weights(Matrix::Identity(seq_len * seq_len, seq_len * seq_len)) {}

  Index seq_len() const { return static_cast<Index>(std::llround(std::sqrt(static_cast<double>(weights.rows())))); }
};

// Layer weight (1 - l/L) for l = 0..L-1.
inline double layer_weight(int layer, int layers) {
  return 1.0 - static_cast<double>(layer) / static_cast<double>(layers);
}

// M_A = sum_l (1 - l/L) sum_h AttDis[l][h]
inline Matrix combined_attention(const AttentionTrace& trace) {
  const Index d = trace.seq_len();
  Matrix ma = Matrix::Zero(d, d);
  for (int l = 0; l < trace.layers; ++l) {
    const double w = layer_weight(l, trace.layers);
    for (int h = 0; h < trace.heads; ++h) ma += w * trace.at(l, h);
  }
  return ma;
}

inline ad::Var combined_attention(const std::vector<std::vector<ad::Var>>& attention) {
  const int layers = static_cast<int>(attention.size());
  ad::Var ma;
  for (int l = 0; l < layers; ++l) {
    const double w = layer_weight(l, layers);
    for (const ad::Var& a : attention[static_cast<std::size_t>(l)])
      ma = ma.valid() ? ad::axpby(1.0, ma, w, a) : ad::scale(a, w);
  }
  return ma;
}

// 1 on the real_len x real_len block, 0 on padded rows and columns.
inline Matrix padding_mask(Index d, std::size_t real_len) {
  const Index n = std::min<Index>(static_cast<Index>(real_len), d);
  Matrix m = Matrix::Zero(d, d);
  m.topLeftCorner(n, n).setOnes();
  return m;
}

inline RowVector masked_flatten(const Matrix& m, std::size_t real_len) {
  if (m.rows() != m.cols()) throw DimensionError("masked_flatten: matrix must be square");
  return flatten(m.cwiseProduct(padding_mask(m.rows(), real_len)));
}

inline ad::Var masked_flatten(const ad::Var& m, std::size_t real_len) {
  if (m.rows() != m.cols()) throw DimensionError("masked_flatten: matrix must be square");
  return ad::reshape(ad::mul_const(m, padding_mask(m.rows(), real_len)), 1, m.rows() * m.cols());
}

namespace detail {
inline void check_translator(const Matrix& mf, Index d) {
  if (mf.rows() != d * d || mf.cols() != d * d)
    throw DimensionError("translator is " + shape_str(mf.rows(), mf.cols()) + ", expected " + shape_str(d * d, d * d));
}
inline ad::Var one_minus(const ad::Var& x) { return ad::add_const(ad::scale(x, -1.0), Matrix::Ones(1, 1)); }
}  // namespace detail

// L_F = 1 - cos(M_F * flat(M_T), flat(M_S)); only M_F carries gradient.
inline ad::Var translator_loss(const ad::Var& mf, const Matrix& mt, const Matrix& ms, std::size_t real_len) {
  if (mt.rows() != ms.rows() || mt.cols() != ms.cols()) throw DimensionError("translator_loss: M_T and M_S differ in shape");
  detail::check_translator(mf.value(), mt.rows());
  ad::Tape& t = *mf.tape();
  ad::Var flat_t = t.constant(masked_flatten(mt, real_len).transpose());
  ad::Var flat_s = t.constant(masked_flatten(ms, real_len).transpose());
  return detail::one_minus(ad::cosine(ad::matmul(mf, flat_t), flat_s));
}

inline double translator_loss(const Matrix& mf, const Matrix& mt, const Matrix& ms, std::size_t real_len) {
  detail::check_translator(mf, mt.rows());
  const Vector translated = mf * masked_flatten(mt, real_len).transpose();
  return 1.0 - cosine_sim(translated, masked_flatten(ms, real_len).transpose());
}

inline double translator_loss(const Matrix& mf, const Matrix& mt, const Matrix& ms) {
  return translator_loss(mf, mt, ms, static_cast<std::size_t>(mt.rows()));
}

// M_F^-1 * flat(M_S), given a precomputed (regularized) inverse.
inline RowVector alignment_target(const Matrix& mf_inverse, const Matrix& ms, std::size_t real_len) {
  detail::check_translator(mf_inverse, ms.rows());
  return (mf_inverse * masked_flatten(ms, real_len).transpose()).transpose();
}

// L_A = 1 - cos(flat(M_A), target); the target is a constant.
inline ad::Var attention_alignment_loss(const ad::Var& ma, const RowVector& target, std::size_t real_len) {
  if (target.size() != ma.value().size()) throw DimensionError("attention_alignment_loss: target size mismatch");
  ad::Tape& t = *ma.tape();
  return detail::one_minus(ad::cosine(masked_flatten(ma, real_len), t.constant(target)));
}

inline double attention_alignment_loss(const Matrix& ma, const Matrix& ms, const Matrix& mf, double inv_eps,
                                       std::size_t real_len) {
  const RowVector target = alignment_target(regularized_inverse(mf, inv_eps), ms, real_len);
  return 1.0 - cosine_sim(masked_flatten(ma, real_len), target);
}

inline double attention_alignment_loss(const Matrix& ma, const Matrix& ms, const Matrix& mf, double inv_eps) {
  return attention_alignment_loss(ma, ms, mf, inv_eps, static_cast<std::size_t>(ma.rows()));
}

inline AlignmentReport alignment_report(const Matrix& mt, const Matrix& ma, const Matrix& ms, const Matrix& mf,
                                        double inv_eps, std::size_t real_len) {
  AlignmentReport r;
  r.l_f = translator_loss(mf, mt, ms, real_len);
  r.l_a = attention_alignment_loss(ma, ms, mf, inv_eps, real_len);
  r.s_ts = 1.0 - r.l_f;
  r.s_as = 1.0 - r.l_a;
  return r;
}

}  // namespace axbert
