#pragma once

// Weight regulator: per-character weights from the agreement between combined
// attention and the associative matrix, and the attention reweighting that
// uses them.

#include <algorithm>
#include <string>

#include "axbert/errors.hpp"
#include "axbert/numerics.hpp"

namespace axbert {

inline constexpr double kWeightFloor = 1e-3;

struct DegreeViews {
  Matrix in;   // row i: column i of M_A over its mean (incoming attention)
  Matrix out;  // row i: row i of M_A over its mean (outgoing attention)
};

struct RegulatorWeights {
  RowVector w;    // clamped to [1e-3, 1]; padding positions are 1
  RowVector raw;  // unclamped cosines
};

inline DegreeViews degree_normalize(const Matrix& ma) {
  if (ma.rows() != ma.cols()) throw DimensionError("degree_normalize: M_A must be square");
  const Index d = ma.rows();
  DegreeViews v{Matrix::Zero(d, d), Matrix::Zero(d, d)};
  for (Index i = 0; i < d; ++i) {
    const double row_mean = ma.row(i).mean();
    if (std::abs(row_mean) >= kNormFloor) v.out.row(i) = ma.row(i) / row_mean;
    const double col_mean = ma.col(i).mean();
    if (std::abs(col_mean) >= kNormFloor) v.in.row(i) = ma.col(i).transpose() / col_mean;
  }
  return v;
}

// raw[i] = cos(row_i(M_A_in + M_A_out), row_i(M_S)) over the first real_len
// positions; positions at or past real_len are padding and get weight 1.
inline RegulatorWeights character_weights(const Matrix& ma, const Matrix& ms, std::size_t real_len) {
  if (ma.rows() != ms.rows() || ma.cols() != ms.cols() || ma.rows() != ma.cols())
    throw DimensionError("character_weights: M_A and M_S must be the same square shape");
  const Index d = ma.rows();
  const Index n = std::min<Index>(static_cast<Index>(real_len), d);
  RegulatorWeights rw{RowVector::Ones(d), RowVector::Zero(d)};
  if (n == 0) return rw;
  const DegreeViews views = degree_normalize(ma.topLeftCorner(n, n));
  const Matrix undirected = views.in + views.out;
  const Matrix s = ms.topLeftCorner(n, n);
  for (Index i = 0; i < n; ++i) {
    rw.raw(i) = cosine_sim(undirected.row(i), s.row(i));
    rw.w(i) = std::clamp(rw.raw(i), kWeightFloor, 1.0);
  }
  return rw;
}

// Blend factor for layer l of L: full regulation at the bottom, 1/L at the top.
inline double regulation_strength(int layer, int layers) {
  return 1.0 - static_cast<double>(layer) / static_cast<double>(layers);
}

// True when W takes a single value over every column that carries attention
// mass; column scaling then cancels under row renormalization.
inline bool weights_uniform_on_support(const Matrix& att, const RowVector& w) {
  bool seen = false;
  double value = 0.0;
  for (Index j = 0; j < att.cols(); ++j) {
    if (att.col(j).cwiseAbs().maxCoeff() == 0.0) continue;
    if (seen && w(j) != value) return false;
    seen = true;
    value = w(j);
  }
  return true;
}

inline void check_regulation_args(const Matrix& att, const RowVector& w, int layer, int layers) {
  if (att.rows() != att.cols() || w.size() != att.cols())
    throw DimensionError("regulate: attention must be d x d with |W| = d");
  if (layers <= 0 || layer < 0 || layer >= layers) throw ArgumentError("regulate: layer index out of range");
  for (Index j = 0; j < w.size(); ++j)
    if (!(w(j) >= kWeightFloor && w(j) <= 1.0)) throw ArgumentError("regulate: W entries must lie in [1e-3, 1]");
}

// Scales attention columns by W, renormalizes rows, then blends with the
// original by the layer's regulation strength. Rows stay stochastic.
inline Matrix regulate(const Matrix& att, const RowVector& w, int layer, int layers) {
  check_regulation_args(att, w, layer, layers);
  if (weights_uniform_on_support(att, w)) return att;
  const double beta = regulation_strength(layer, layers);
  Matrix scaled = att * w.asDiagonal();
  for (Index i = 0; i < scaled.rows(); ++i) {
    const double s = scaled.row(i).sum();
    if (!(s > 0.0)) throw DataError("regulate: row " + std::to_string(i) + " vanished after scaling");
    scaled.row(i) /= s;
  }
  return beta * scaled + (1.0 - beta) * att;
}

// Literal reading kept for comparison: M_W[i][j] = W_i (from W (1/W)^T diag(W)),
// result = (1 - l/L) * AttDis * M_W. Not row-stochastic.
inline Matrix regulation_matrix_literal(const RowVector& w) {
  const Index d = w.size();
  Matrix mw(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) mw(i, j) = w(i) * (1.0 / w(j)) * w(j);
  return mw;
}

inline Matrix regulate_literal(const Matrix& att, const RowVector& w, int layer, int layers) {
  check_regulation_args(att, w, layer, layers);
  return regulation_strength(layer, layers) * att * regulation_matrix_literal(w);
}

}  // namespace axbert
