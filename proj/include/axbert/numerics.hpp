#pragma once

// Dense linear algebra shared by every module. All matrices are row-major
// float64 so that flattening is a plain view over the storage.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "axbert/errors.hpp"

namespace axbert {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kDefaultRidge = 1e-6;
inline constexpr double kNormFloor = 1e-12;

inline std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + shape_str(a.rows(), a.cols()) + " * " +
                         shape_str(b.rows(), b.cols()));
  return a * b;
}

// Row-major flattening into a 1 x (rows*cols) vector.
inline RowVector flatten(const Matrix& m) {
  return Eigen::Map<const RowVector>(m.data(), m.size());
}

inline Matrix unflatten(const RowVector& v, Index rows, Index cols) {
  if (v.size() != rows * cols) throw DimensionError("unflatten: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Cosine between two equally sized vectors (or same-shape matrices, read
// flattened). Returns 0 when either norm is below 1e-12.
template <class U, class V>
double cosine_sim(const Eigen::MatrixBase<U>& u, const Eigen::MatrixBase<V>& v) {
  if (u.size() != v.size())
    throw DimensionError("cosine_sim: length " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu < kNormFloor || nv < kNormFloor) return 0.0;
  double dot = 0.0;
  if (u.rows() == v.rows()) {
    dot = u.cwiseProduct(v).sum();
  } else {
    // row vs column vector
    for (Index i = 0; i < u.size(); ++i) dot += u.derived().reshaped()(i) * v.derived().reshaped()(i);
  }
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

// Row-wise softmax with max subtraction. Entries equal to -inf get exactly 0.
inline Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    double sum = 0.0;
    for (Index j = 0; j < m.cols(); ++j) {
      const double e = std::exp(m(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    out.row(i) /= sum;
  }
  return out;
}

// Solves min_T ||T*e - f||^2 + ridge*||T||^2 for T (d x d) given e, f (d x H).
// Normal equations: T (e e^T + ridge I) = f e^T.
inline Matrix least_squares_transform(const Matrix& e, const Matrix& f, double ridge = kDefaultRidge) {
  if (e.rows() != f.rows() || e.cols() != f.cols())
    throw DimensionError("least_squares_transform: E is " + shape_str(e.rows(), e.cols()) + ", F is " +
                         shape_str(f.rows(), f.cols()));
  if (!(ridge >= 0.0)) throw ArgumentError("least_squares_transform: ridge must be >= 0");
  const Index d = e.rows();
  Matrix normal = e * e.transpose();
  normal.diagonal().array() += ridge;
  const Matrix rhs = e * f.transpose();
  Matrix solved;
  if (ridge == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(normal);
    if (qr.rank() < d)
      throw SingularityError("least_squares_transform: E E^T is singular (rank " + std::to_string(qr.rank()) +
                             " < " + std::to_string(d) + "); set ridge > 0");
    solved = qr.solve(rhs);
  } else {
    Eigen::LDLT<Matrix> ldlt(normal);
    if (ldlt.info() != Eigen::Success)
      throw SingularityError("least_squares_transform: factorization failed; increase ridge");
    solved = ldlt.solve(rhs);
  }
  return solved.transpose();
}

// (m + eps I)^-1 through a fully pivoted LU.
inline Matrix regularized_inverse(const Matrix& m, double eps) {
  if (m.rows() != m.cols()) throw DimensionError("regularized_inverse: matrix is " + shape_str(m.rows(), m.cols()));
  if (!(eps > 0.0)) throw ArgumentError("regularized_inverse: eps must be > 0");
  Matrix shifted = m;
  shifted.diagonal().array() += eps;
  Eigen::FullPivLU<Matrix> lu(shifted);
  if (!lu.isInvertible())
    throw SingularityError("regularized_inverse: matrix + eps*I is singular; raise inv_eps");
  Matrix inv = lu.inverse();
  if (!inv.allFinite()) throw SingularityError("regularized_inverse: non-finite inverse; raise inv_eps");
  return inv;
}

}  // namespace axbert
