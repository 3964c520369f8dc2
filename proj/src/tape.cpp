#include "dspp/tape.hpp"

#include "dspp/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dspp::ad {

// ---- Var / Tape ---------------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DimensionMismatch("Var::scalar on a non-scalar node");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix{}, true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix{}, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward fn) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || requires_grad(p);
  nodes_.push_back(Node{std::move(value), Matrix{}, needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward fn) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || requires_grad(p);
  nodes_.push_back(Node{std::move(value), Matrix{}, needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw DimensionMismatch("Tape::accumulate: adjoint " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()) +
                            " does not match node " + std::to_string(n.value.rows()) + "x" +
                            std::to_string(n.value.cols()));
  }
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var output) {
  if (value(output).size() != 1) throw DimensionMismatch("Tape::backward needs a scalar output");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(output, Matrix::Ones(1, 1));
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad, n.value);
  }
}

// ---- broadcasting helpers -------------------------------------------------------------------

namespace {

bool broadcastable(const Matrix& m, Eigen::Index r, Eigen::Index c) {
  return (m.rows() == r && m.cols() == c) || (m.rows() == 1 && m.cols() == 1) ||
         (m.rows() == 1 && m.cols() == c) || (m.cols() == 1 && m.rows() == r);
}

Matrix expand(const Matrix& m, Eigen::Index r, Eigen::Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(r, c, m(0, 0));
  if (m.rows() == 1) return m.replicate(r, 1);
  return m.replicate(1, c);
}

Matrix reduce_to(const Matrix& g, Eigen::Index r, Eigen::Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  if (r == 1 && c == 1) return Matrix::Constant(1, 1, g.sum());
  if (r == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

std::pair<Eigen::Index, Eigen::Index> result_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (broadcastable(b, a.rows(), a.cols())) return {a.rows(), a.cols()};
  if (broadcastable(a, b.rows(), b.cols())) return {b.rows(), b.cols()};
  throw DimensionMismatch(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
}

Tape& tape_of(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

// Lower triangle of m with its diagonal halved.
Matrix phi(const Matrix& m) {
  Matrix out = m.triangularView<Eigen::StrictlyLower>();
  out.diagonal() = 0.5 * m.diagonal();
  return out;
}

}  // namespace

// ---- arithmetic ------------------------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto [r, c] = result_shape(a.value(), b.value(), "add");
  Matrix out = expand(a.value(), r, c) + expand(b.value(), r, c);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    tp.accumulate(b, reduce_to(g, b.rows(), b.cols()));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto [r, c] = result_shape(a.value(), b.value(), "sub");
  Matrix out = expand(a.value(), r, c) - expand(b.value(), r, c);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    tp.accumulate(b, reduce_to(-g, b.rows(), b.cols()));
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto [r, c] = result_shape(a.value(), b.value(), "mul");
  Matrix out = expand(a.value(), r, c).cwiseProduct(expand(b.value(), r, c));
  return t.record(std::move(out), {a, b}, [a, b, r = r, c = c](Tape& tp, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) tp.accumulate(a, reduce_to(g.cwiseProduct(expand(b.value(), r, c)), a.rows(), a.cols()));
    if (b.requires_grad()) tp.accumulate(b, reduce_to(g.cwiseProduct(expand(a.value(), r, c)), b.rows(), b.cols()));
  });
}

Var div(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const auto [r, c] = result_shape(a.value(), b.value(), "div");
  Matrix out = expand(a.value(), r, c).cwiseQuotient(expand(b.value(), r, c));
  return t.record(std::move(out), {a, b}, [a, b, r = r, c = c](Tape& tp, const Matrix& g, const Matrix& y) {
    const Matrix bb = expand(b.value(), r, c);
    if (a.requires_grad()) tp.accumulate(a, reduce_to(g.cwiseQuotient(bb), a.rows(), a.cols()));
    if (b.requires_grad()) tp.accumulate(b, reduce_to(-g.cwiseProduct(y).cwiseQuotient(bb), b.rows(), b.cols()));
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  return a.tape().record(a.value() * s, {a},
                         [a, s](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
  return a.tape().record(a.value().array() + s, {a},
                         [a](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(a, g); });
}

Var exp(Var a) {
  return a.tape().record(a.value().array().exp(), {a}, [a](Tape& tp, const Matrix& g, const Matrix& y) {
    tp.accumulate(a, g.cwiseProduct(y));
  });
}

Var log(Var a) {
  return a.tape().record(a.value().array().log(), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

Var sqrt(Var a) {
  return a.tape().record(a.value().array().sqrt(), {a}, [a](Tape& tp, const Matrix& g, const Matrix& y) {
    tp.accumulate(a, (0.5 * g.array() / y.array()).matrix());
  });
}

Var square(Var a) {
  return a.tape().record(a.value().array().square(), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var clamp_min(Var a, double lo) {
  return a.tape().record(a.value().array().max(lo), {a},
                         [a](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(a, g); });
}

// ---- reductions and reshaping -----------------------------------------------------------------

Var sum(Var a) {
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), {a},
                         [a](Tape& tp, const Matrix& g, const Matrix&) {
                           tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                         });
}

Var row_sums(Var a) {
  return a.tape().record(a.value().rowwise().sum(), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g.replicate(1, a.cols()));
  });
}

Var col_sums(Var a) {
  return a.tape().record(a.value().colwise().sum(), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g.replicate(a.rows(), 1));
  });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw DimensionMismatch("reshape: element count changes");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, Eigen::Map<const Matrix>(g.data(), a.rows(), a.cols()));
  });
}

Var transpose(Var a) {
  return a.tape().record(a.value().transpose(), {a},
                         [a](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(a, g.transpose()); });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionMismatch("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                            std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    if (a.requires_grad()) tp.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) tp.accumulate(b, a.value().transpose() * g);
  });
}

Var gather(Var a, const IndexMatrix& index) {
  const Matrix& src = a.value();
  Matrix out(index.rows(), index.cols());
  for (Eigen::Index j = 0; j < index.cols(); ++j) {
    for (Eigen::Index i = 0; i < index.rows(); ++i) {
      const Eigen::Index k = index(i, j);
      if (k < 0 || k >= src.size()) throw DimensionMismatch("gather: index out of range");
      out(i, j) = src.data()[k];
    }
  }
  return a.tape().record(std::move(out), {a}, [a, index](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < index.cols(); ++j) {
      for (Eigen::Index i = 0; i < index.rows(); ++i) ga.data()[index(i, j)] += g(i, j);
    }
    tp.accumulate(a, ga);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionMismatch("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [parts](Tape& tp, const Matrix& g, const Matrix&) {
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) tp.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionMismatch("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionMismatch("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return parts.front().tape().record(std::move(out), parts, [parts](Tape& tp, const Matrix& g, const Matrix&) {
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) tp.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var tile_rows(Var a, Eigen::Index times) {
  if (times == 1) return a;
  return a.tape().record(a.value().replicate(times, 1), {a},
                         [a, times](Tape& tp, const Matrix& g, const Matrix&) {
                           Matrix ga = Matrix::Zero(a.rows(), a.cols());
                           for (Eigen::Index k = 0; k < times; ++k) ga += g.middleRows(k * a.rows(), a.rows());
                           tp.accumulate(a, ga);
                         });
}

Var repeat_rows(Var a, Eigen::Index times) {
  if (times == 1) return a;
  const Matrix& src = a.value();
  Matrix out(src.rows() * times, src.cols());
  for (Eigen::Index i = 0; i < src.rows(); ++i) out.middleRows(i * times, times) = src.row(i).replicate(times, 1);
  return a.tape().record(std::move(out), {a}, [a, times](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix ga(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) ga.row(i) = g.middleRows(i * times, times).colwise().sum();
    tp.accumulate(a, ga);
  });
}

Var diag_part(Var m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("diag_part: matrix is not square");
  return m.tape().record(m.value().diagonal(), {m}, [m](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix gm = Matrix::Zero(m.rows(), m.cols());
    gm.diagonal() = g.col(0);
    tp.accumulate(m, gm);
  });
}

Var diag_matrix(Var v) {
  if (v.cols() != 1) throw DimensionMismatch("diag_matrix: expects a column vector");
  Matrix out = v.value().col(0).asDiagonal();
  return v.tape().record(std::move(out), {v},
                         [v](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(v, g.diagonal()); });
}

// ---- probability helpers --------------------------------------------------------------------

Var log_softmax(Var column) {
  if (column.cols() != 1) throw DimensionMismatch("log_softmax: expects a column vector");
  const Matrix& x = column.value();
  const double mx = x.maxCoeff();
  const double lse = mx + std::log((x.array() - mx).exp().sum());
  Matrix out = x.array() - lse;
  return column.tape().record(std::move(out), {column}, [column](Tape& tp, const Matrix& g, const Matrix& y) {
    const Matrix p = y.array().exp();
    tp.accumulate(column, g - p * g.sum());
  });
}

Var logsumexp_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      out(i, 0) = mx;
      continue;
    }
    out(i, 0) = mx + std::log((x.row(i).array() - mx).exp().sum());
  }
  return a.tape().record(std::move(out), {a}, [a](Tape& tp, const Matrix& g, const Matrix& y) {
    const Matrix& x = a.value();
    Matrix ga(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) ga.row(i) = g(i, 0) * (x.row(i).array() - y(i, 0)).exp();
    tp.accumulate(a, ga);
  });
}

Var gaussian_log_density(Var y, Var mean, Var var) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Var resid = sub(y, mean);
  Var quad = div(square(resid), var);
  Var out = add(scale(quad, -0.5), scale(log(var), -0.5));
  return add_scalar(out, -half_log_2pi);
}

// ---- linear algebra -------------------------------------------------------------------------

Var lower_factor(Var p) {
  if (p.rows() != p.cols()) throw DimensionMismatch("lower_factor: matrix is not square");
  Matrix out = p.value().triangularView<Eigen::StrictlyLower>();
  out.diagonal() = p.value().diagonal().array().exp();
  return p.tape().record(std::move(out), {p}, [p](Tape& tp, const Matrix& g, const Matrix& y) {
    Matrix gp = g.triangularView<Eigen::StrictlyLower>();
    gp.diagonal() = g.diagonal().cwiseProduct(y.diagonal());
    tp.accumulate(p, gp);
  });
}

Var cholesky(Var a, const JitterPolicy& policy) {
  const Matrix sym = 0.5 * (a.value() + a.value().transpose());
  CholeskyResult chol = robust_cholesky(sym, policy);
  const double mean_diag = sym.diagonal().mean();
  const double relative_jitter = chol.jitter > 0.0 ? chol.jitter / mean_diag : 0.0;
  return a.tape().record(std::move(chol.factor), {a},
                         [a, relative_jitter](Tape& tp, const Matrix& g, const Matrix& lower) {
                           const auto l = lower.triangularView<Eigen::Lower>();
                           Matrix p = phi(lower.transpose() * g.triangularView<Eigen::Lower>().toDenseMatrix());
                           // S = L^{-T} P L^{-1}
                           Matrix s = l.transpose().solve(p);
                           s = l.transpose().solve(s.transpose()).transpose();
                           Matrix ga = 0.5 * (s + s.transpose());
                           if (relative_jitter > 0.0) {
                             ga.diagonal().array() += relative_jitter * ga.trace() / static_cast<double>(ga.rows());
                           }
                           tp.accumulate(a, ga);
                         });
}

Var tri_solve(Var lower, Var b, bool transposed) {
  Tape& t = tape_of(lower, b);
  if (lower.rows() != lower.cols() || lower.rows() != b.rows()) throw DimensionMismatch("tri_solve: shape mismatch");
  const auto l = lower.value().triangularView<Eigen::Lower>();
  Matrix x = transposed ? Matrix(l.transpose().solve(b.value())) : Matrix(l.solve(b.value()));
  return t.record(std::move(x), {lower, b}, [lower, b, transposed](Tape& tp, const Matrix& g, const Matrix& x) {
    const auto l = lower.value().triangularView<Eigen::Lower>();
    if (!transposed) {
      Matrix gb = l.transpose().solve(g);
      if (lower.requires_grad()) tp.accumulate(lower, -(gb * x.transpose()).triangularView<Eigen::Lower>().toDenseMatrix());
      tp.accumulate(b, gb);
    } else {
      Matrix gb = l.solve(g);
      if (lower.requires_grad()) tp.accumulate(lower, -(x * gb.transpose()).triangularView<Eigen::Lower>().toDenseMatrix());
      tp.accumulate(b, gb);
    }
  });
}

Var kernel_matrix(Var x1, Var x2, Var log_lengthscales, Var log_outputscale, Smoothness nu) {
  Tape& t = tape_of(x1, x2);
  const Eigen::Index d = log_lengthscales.rows();
  if (x1.cols() != d || x2.cols() != d || log_lengthscales.cols() != 1 || log_outputscale.value().size() != 1) {
    throw DimensionMismatch("kernel_matrix: input dimension " + std::to_string(x1.cols()) + "/" +
                            std::to_string(x2.cols()) + " vs " + std::to_string(d) + " lengthscales");
  }
  const Eigen::VectorXd inv_ls = (-log_lengthscales.value().col(0).array()).exp();
  const double os = std::exp(log_outputscale.scalar());
  // Scaled coordinates, one point per column, so the pair loop is a contiguous Euclidean distance.
  const Matrix a = inv_ls.asDiagonal() * x1.value().transpose();
  const Matrix b = inv_ls.asDiagonal() * x2.value().transpose();
  const Eigen::Index n1 = a.cols();
  const Eigen::Index n2 = b.cols();
  Matrix out(n1, n2);
  for (Eigen::Index j = 0; j < n2; ++j) {
    const double* bj = b.col(j).data();
    for (Eigen::Index i = 0; i < n1; ++i) {
      const double* ai = a.col(i).data();
      double r2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double u = ai[k] - bj[k];
        r2 += u * u;
      }
      out(i, j) = os * matern_correlation(std::sqrt(r2), nu);
    }
  }
  return t.record(std::move(out), {x1, x2, log_lengthscales, log_outputscale},
                  [x1, x2, log_lengthscales, log_outputscale, nu, a, b, inv_ls, os](Tape& tp, const Matrix& g,
                                                                                   const Matrix& k) {
                    const Eigen::Index dd = inv_ls.size();
                    Matrix ga = Matrix::Zero(dd, a.cols());  // adjoints w.r.t. scaled coordinates
                    Matrix gb = Matrix::Zero(dd, b.cols());
                    Eigen::VectorXd g_log_ls = Eigen::VectorXd::Zero(dd);
                    double u[64];
                    std::vector<double> u_heap;
                    double* up = u;
                    if (dd > 64) {
                      u_heap.resize(static_cast<std::size_t>(dd));
                      up = u_heap.data();
                    }
                    for (Eigen::Index j = 0; j < b.cols(); ++j) {
                      const double* bj = b.col(j).data();
                      double* gbj = gb.col(j).data();
                      for (Eigen::Index i = 0; i < a.cols(); ++i) {
                        const double gij = g(i, j);
                        if (gij == 0.0) continue;
                        const double* ai = a.col(i).data();
                        double r2 = 0.0;
                        for (Eigen::Index q = 0; q < dd; ++q) {
                          up[q] = ai[q] - bj[q];
                          r2 += up[q] * up[q];
                        }
                        const double c = gij * os * matern_slope_over_r(std::sqrt(r2), nu);
                        double* gai = ga.col(i).data();
                        for (Eigen::Index q = 0; q < dd; ++q) {
                          gai[q] += c * up[q];
                          gbj[q] -= c * up[q];
                          g_log_ls[q] -= c * up[q] * up[q];
                        }
                      }
                    }
                    if (x1.requires_grad()) tp.accumulate(x1, (inv_ls.asDiagonal() * ga).transpose());
                    if (x2.requires_grad()) tp.accumulate(x2, (inv_ls.asDiagonal() * gb).transpose());
                    tp.accumulate(log_lengthscales, g_log_ls);
                    tp.accumulate(log_outputscale, Matrix::Constant(1, 1, g.cwiseProduct(k).sum()));
                  });
}

}  // namespace dspp::ad
