#pragma once

// Reverse-mode differentiation over dense matrices.
//
// Every node holds an Eigen matrix value. Operations record a closure that maps the
// node's output adjoint to its parents' adjoints. Nodes that depend only on constants
// record no closure, so evaluating a model on a tape built from constants costs little
// more than a plain forward pass.

#include "dspp/kernels.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

namespace dspp::ad {

using Matrix = Eigen::MatrixXd;
using IndexMatrix = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic>;

class Tape;

class Var {
 public:
  Var() = default;

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var variable(Matrix value);
  /// Leaf that never receives a gradient.
  Var constant(Matrix value);
  Var constant(double value);

  /// Records an operation result. `fn` runs only if some parent requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward fn);
  Var record(Matrix value, const std::vector<Var>& parents, Backward fn);

  [[nodiscard]] const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Adjoint of `v` after backward(); a zero matrix of the right shape if `v` was not reached.
  [[nodiscard]] Matrix grad(Var v) const;

  /// Adds `g` into the adjoint of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& g);

  /// Seeds d(output)/d(output) = 1 and sweeps the tape backwards. `output` must be 1 x 1.
  void backward(Var output);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
};

// ---- elementwise and broadcasting arithmetic ----------------------------------------------
// Binary ops accept equal shapes, or a right/left operand that is 1x1, 1xC or Rx1 and is
// broadcast against the other.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);

/// max(a, lo) elementwise; the gradient passes straight through the clamp.
Var clamp_min(Var a, double lo);

// ---- reductions and reshaping -----------------------------------------------------------------

Var sum(Var a);
Var row_sums(Var a);  // R x 1
Var col_sums(Var a);  // 1 x C
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);  // column-major
Var transpose(Var a);
Var matmul(Var a, Var b);

/// out(i, j) = a.data()[index(i, j)] (column-major linear index).
Var gather(Var a, const IndexMatrix& index);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Vertically repeats `a` `times` times.
Var tile_rows(Var a, Eigen::Index times);
/// Repeats every row of `a` `times` times consecutively.
Var repeat_rows(Var a, Eigen::Index times);

Var diag_part(Var square_matrix);  // n x 1
Var diag_matrix(Var vector);       // n x n

// ---- probability helpers --------------------------------------------------------------------

Var log_softmax(Var column);         // n x 1
Var logsumexp_rows(Var a);           // R x 1, reduces across columns
/// log N(y | mean, var) elementwise.
Var gaussian_log_density(Var y, Var mean, Var var);

// ---- linear algebra -------------------------------------------------------------------------

/// Strictly lower part of `p` plus exp(diag p) on the diagonal.
Var lower_factor(Var p);
/// Cholesky factor with the escalating-jitter policy; the jitter's dependence on mean(diag A)
/// is included in the gradient.
Var cholesky(Var a, const JitterPolicy& policy = {});
/// Solves L X = B (transposed = false) or L^T X = B (transposed = true) for lower-triangular L.
Var tri_solve(Var lower, Var b, bool transposed);

/// Matérn cross-covariance k(x1, x2) parameterized by log lengthscales (d x 1) and
/// log outputscale (1 x 1).
Var kernel_matrix(Var x1, Var x2, Var log_lengthscales, Var log_outputscale, Smoothness nu);

}  // namespace dspp::ad
