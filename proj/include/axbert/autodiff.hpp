#pragma once

// Minimal matrix-level reverse-mode automatic differentiation.
//
// A Tape records every node produced during a forward computation. Each node
// owns its value and (lazily) its adjoint. Tape::backward seeds a 1x1 output
// with 1 and walks the nodes in reverse creation order. Nodes whose inputs all
// come from constants are never visited on the way back.

#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "axbert/numerics.hpp"

namespace axbert::ad {

class Tape;

// Handle to a node on a Tape (a differentiable value). Cheap to copy.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Adjoint after Tape::backward; zeros when no gradient reached the node.
  Matrix grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient is requested.
  Var variable(Matrix value) { return push(std::move(value), true, {}); }
  // Leaf treated as a constant; no gradient flows into it.
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  // Records an op result. `backward` is only kept if some input needs grad.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[check(in)].requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }
  Var record(Matrix value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[check(in)].requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Matrix& value(const Var& v) const { return nodes_[check(v)].value; }
  bool requires_grad(const Var& v) const { return nodes_[check(v)].requires_grad; }

  Matrix grad(const Var& v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Adds `g` into the adjoint of `v` (no-op for constants).
  void accumulate(const Var& v, const Matrix& g) {
    Node& n = nodes_[check(v)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Zeroes every adjoint, then back-propagates from a 1x1 output.
  void backward(const Var& out) {
    const std::size_t root = check(out);
    if (nodes_[root].value.size() != 1) throw DimensionError("backward: output must be 1x1");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[root].requires_grad) return;
    nodes_[root].grad = Matrix::Constant(1, 1, 1.0);
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::size_t check(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw ArgumentError("Var does not belong to this tape");
    return v.id_;
  }

  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline Matrix Var::grad() const { return tape_->grad(*this); }

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
}
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  Matrix v = axbert::matmul(a.value(), b.value());
  return t.record(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
  Matrix v = a.value() * b.value().transpose();
  return t.record(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

inline Var transpose(const Var& a) {
  Tape& t = *a.tape();
  return t.record(a.value().transpose(), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

inline Var add(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

// alpha*a + beta*b
inline Var axpby(double alpha, const Var& a, double beta, const Var& b) {
  detail::same_shape(a, b, "axpby");
  Tape& t = *a.tape();
  return t.record(alpha * a.value() + beta * b.value(), {a, b}, [a, b, alpha, beta](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, alpha * g);
    if (t.requires_grad(b)) t.accumulate(b, beta * g);
  });
}

inline Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

// Adds a 1 x n row to every row of a (bias broadcast).
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: bias shape mismatch");
  Tape& t = *a.tape();
  Matrix v = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(v), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  detail::same_shape(a, b, "hadamard");
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

// Elementwise product with a constant matrix (dropout masks, padding masks).
inline Var mul_const(const Var& a, const Matrix& m) {
  if (a.rows() != m.rows() || a.cols() != m.cols()) throw DimensionError("mul_const: shape mismatch");
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(m), {a}, [a, m](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(m)); });
}

inline Var add_const(const Var& a, const Matrix& m) {
  if (a.rows() != m.rows() || a.cols() != m.cols()) throw DimensionError("add_const: shape mismatch");
  Tape& t = *a.tape();
  return t.record(a.value() + m, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

// Scales column j of a by w[j].
inline Var col_scale(const Var& a, const RowVector& w) {
  if (w.size() != a.cols()) throw DimensionError("col_scale: weight length mismatch");
  Tape& t = *a.tape();
  Matrix v = a.value() * w.asDiagonal();
  return t.record(std::move(v), {a}, [a, w](Tape& t, const Matrix& g) { t.accumulate(a, g * w.asDiagonal()); });
}

inline Var softmax_rows(const Var& a) {
  Tape& t = *a.tape();
  Matrix y = axbert::softmax_rows(a.value());
  return t.record(y, {a}, [a, y](Tape& t, const Matrix& g) {
    Matrix gy = g.cwiseProduct(y);
    Eigen::VectorXd s = gy.rowwise().sum();
    t.accumulate(a, gy - y.cwiseProduct(s.replicate(1, y.cols())));
  });
}

// Divides every row by its sum. Rows must have nonzero sums.
inline Var row_normalize(const Var& a) {
  Tape& t = *a.tape();
  Eigen::VectorXd s = a.value().rowwise().sum();
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) == 0.0) throw DataError("row_normalize: zero row sum at row " + std::to_string(i));
  Matrix y = s.cwiseInverse().asDiagonal() * a.value();
  return t.record(y, {a}, [a, y, s](Tape& t, const Matrix& g) {
    Eigen::VectorXd gy = g.cwiseProduct(y).rowwise().sum();
    Matrix d = g - gy.replicate(1, y.cols());
    t.accumulate(a, s.cwiseInverse().asDiagonal() * d);
  });
}

// tanh approximation of GELU
inline Var gelu(const Var& a) {
  static constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double c = 0.044715;
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix th = (k * (x.array() + c * x.array().cube())).tanh().matrix();
  Matrix y = (0.5 * x.array() * (1.0 + th.array())).matrix();
  return t.record(std::move(y), {a}, [a, th](Tape& t, const Matrix& g) {
    const auto x = a.value().array();
    auto dx = 0.5 * (1.0 + th.array()) + 0.5 * x * (1.0 - th.array().square()) * k * (1.0 + 3.0 * c * x.square());
    t.accumulate(a, (g.array() * dx).matrix());
  });
}

// Row-wise layer normalization with learned gain/bias rows (1 x n).
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const Index n = x.cols();
  if (gamma.cols() != n || beta.cols() != n || gamma.rows() != 1 || beta.rows() != 1)
    throw DimensionError("layer_norm: parameter shape mismatch");
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  return t.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g) {
    const Index n = xhat.cols();
    if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
    if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
    if (t.requires_grad(x)) {
      Matrix dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
      Matrix dx(xhat.rows(), n);
      for (Index i = 0; i < xhat.rows(); ++i) {
        const double s1 = dxhat.row(i).sum();
        const double s2 = dxhat.row(i).dot(xhat.row(i));
        dx.row(i) = (inv_std(i) / static_cast<double>(n)) *
                    (static_cast<double>(n) * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2).matrix();
      }
      t.accumulate(x, dx);
    }
  });
}

// Gathers rows of `table` (embedding lookup).
inline Var gather_rows(const Var& table, const std::vector<int>& ids) {
  Tape& t = *table.tape();
  Matrix v(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw VocabularyError("gather_rows: id " + std::to_string(ids[i]) + " outside [0, " +
                            std::to_string(table.rows()) + ")");
    v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  return t.record(std::move(v), {table}, [table, ids](Tape& t, const Matrix& g) {
    Matrix gt = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(static_cast<Index>(i));
    t.accumulate(table, gt);
  });
}

// First `rows` rows of a.
inline Var top_rows(const Var& a, Index rows) {
  Tape& t = *a.tape();
  if (rows > a.rows()) throw DimensionError("top_rows: too many rows");
  return t.record(a.value().topRows(rows), {a}, [a, rows](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.topRows(rows) = g;
    t.accumulate(a, full);
  });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || start + count > a.cols()) throw DimensionError("slice_cols: out of range");
  Tape& t = *a.tape();
  return t.record(a.value().middleCols(start, count), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != parts.front().rows()) throw DimensionError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(parts.front().rows(), cols);
  Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.record(std::move(v), std::span<const Var>(parts), [parts](Tape& t, const Matrix& g) {
    Index at = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

// Row-major reshape.
inline Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw DimensionError("reshape: size mismatch");
  Tape& t = *a.tape();
  Matrix v = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Index r0 = a.rows(), c0 = a.cols();
  return t.record(std::move(v), {a}, [a, r0, c0](Tape& t, const Matrix& g) {
    t.accumulate(a, Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

inline Var sum(const Var& a) {
  Tape& t = *a.tape();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

// 1 - cos(u, v) style helpers build on this: cosine of two same-sized values
// read flattened. Degenerate norms give value 0 and no gradient.
inline Var cosine(const Var& u, const Var& v) {
  if (u.value().size() != v.value().size()) throw DimensionError("cosine: size mismatch");
  Tape& t = *u.tape();
  const RowVector uf = Eigen::Map<const RowVector>(u.value().data(), u.value().size());
  const RowVector vf = Eigen::Map<const RowVector>(v.value().data(), v.value().size());
  const double nu = uf.norm(), nv = vf.norm();
  const bool degenerate = nu < kNormFloor || nv < kNormFloor;
  const double c = degenerate ? 0.0 : uf.dot(vf) / (nu * nv);
  return t.record(Matrix::Constant(1, 1, c), {u, v}, [u, v, uf, vf, nu, nv, c, degenerate](Tape& t, const Matrix& g) {
    if (degenerate) return;
    const double s = g(0, 0);
    if (t.requires_grad(u)) {
      RowVector du = s * (vf / (nu * nv) - c * uf / (nu * nu));
      t.accumulate(u, Eigen::Map<const Matrix>(du.data(), u.rows(), u.cols()));
    }
    if (t.requires_grad(v)) {
      RowVector dv = s * (uf / (nu * nv) - c * vf / (nv * nv));
      t.accumulate(v, Eigen::Map<const Matrix>(dv.data(), v.rows(), v.cols()));
    }
  });
}

// Sum over rows with mask[i] != 0 of -log softmax(logits_i)[target_i].
inline Var cross_entropy_sum(const Var& logits, const std::vector<int>& targets, const std::vector<char>& mask) {
  const Index n = logits.rows();
  if (static_cast<Index>(targets.size()) != n || static_cast<Index>(mask.size()) != n)
    throw DimensionError("cross_entropy_sum: targets/mask length mismatch");
  Tape& t = *logits.tape();
  const Matrix probs = axbert::softmax_rows(logits.value());
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || targets[i] >= logits.cols()) throw VocabularyError("cross_entropy_sum: target out of range");
    const auto row = logits.value().row(i);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += lse - row(targets[i]);
  }
  return t.record(Matrix::Constant(1, 1, loss), {logits}, [logits, targets, mask, probs](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(probs.rows(), probs.cols());
    for (Index i = 0; i < probs.rows(); ++i) {
      if (!mask[i]) continue;
      d.row(i) = probs.row(i);
      d(i, targets[i]) -= 1.0;
    }
    t.accumulate(logits, d * g(0, 0));
  });
}

}  // namespace axbert::ad
