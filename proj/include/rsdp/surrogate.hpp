#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include "rsdp/problem.hpp"
#include "rsdp/types.hpp"

namespace rsdp {

namespace detail {

inline double frob_dot(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b).sum();
}

}  // namespace detail

// Q_tau * X_k as an operator. Materialized form stores only the nonzero rows
// (link terms touch two rows), which keeps anchor memory at O(nnz * r);
// implicit form re-reads Q_tau on every application when a memory budget is
// exceeded. The referenced Q_tau must outlive the operator.
class TermOp {
 public:
  static TermOp materialized(const SparseMatrix& q, const Matrix& x) {
    TermOp op;
    op.materialized_ = true;
    std::vector<Eigen::Index> rows;
    for (int k = 0; k < q.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(q, k); it; ++it)
        rows.push_back(it.row());
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    op.rows_ = std::move(rows);
    op.vals_ = Matrix::Zero(static_cast<Eigen::Index>(op.rows_.size()), x.cols());
    for (int k = 0; k < q.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(q, k); it; ++it)
        op.vals_.row(op.local_index(it.row())) += it.value() * x.row(it.col());
    return op;
  }

  static TermOp implicit(const SparseMatrix& q, std::shared_ptr<const Matrix> x) {
    TermOp op;
    op.materialized_ = false;
    op.q_ = &q;
    op.x_ = std::move(x);
    return op;
  }

  /// tr(V^T Q X_k)
  double dot(const Matrix& v) const {
    double acc = 0.0;
    if (materialized_) {
      for (std::size_t l = 0; l < rows_.size(); ++l)
        acc += vals_.row(static_cast<Eigen::Index>(l)).dot(v.row(rows_[l]));
      return acc;
    }
    for (int k = 0; k < q_->outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(*q_, k); it; ++it)
        acc += it.value() * v.row(it.row()).dot(x_->row(it.col()));
    return acc;
  }

  /// Y += alpha * Q X_k
  void add_scaled(Matrix& y, double alpha) const {
    if (alpha == 0.0) return;
    if (materialized_) {
      for (std::size_t l = 0; l < rows_.size(); ++l)
        y.row(rows_[l]) += alpha * vals_.row(static_cast<Eigen::Index>(l));
      return;
    }
    for (int k = 0; k < q_->outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(*q_, k); it; ++it)
        y.row(it.row()) += alpha * it.value() * x_->row(it.col());
  }

  /// ||Q X_k||_F^2
  double squared_norm() const {
    if (materialized_) return vals_.squaredNorm();
    Matrix tmp = Matrix::Zero(x_->rows(), x_->cols());
    add_scaled(tmp, 1.0);
    return tmp.squaredNorm();
  }

  std::size_t materialized_doubles() const {
    return materialized_ ? rows_.size() * static_cast<std::size_t>(vals_.cols()) : 0;
  }

 private:
  Eigen::Index local_index(Eigen::Index row) const {
    return static_cast<Eigen::Index>(
        std::lower_bound(rows_.begin(), rows_.end(), row) - rows_.begin());
  }

  bool materialized_ = true;
  std::vector<Eigen::Index> rows_;
  Matrix vals_;
  const SparseMatrix* q_ = nullptr;
  std::shared_ptr<const Matrix> x_;
};

/// Iteration-independent part of the surrogate: B = Q + (lambda I + gamma A+)/2
/// with its factorization, C = A + (lambda/gamma) I, Q = sum of Qbar_tau.
class SurrogateStatic {
 public:
  Eigen::Index n() const { return n_; }
  bool diagonal() const { return diagonal_; }
  const Matrix& b_matrix() const { return b_; }
  const Vector& b_diagonal() const { return b_diag_; }
  const Matrix& c_matrix() const { return c_; }
  const Matrix& q_sum() const { return q_sum_; }
  const Matrix& a_plus() const { return a_plus_; }
  double lambda() const { return lambda_; }
  double gamma() const { return gamma_; }

  Matrix b_apply(const Matrix& v) const {
    if (diagonal_) return b_diag_.asDiagonal() * v;
    return b_ * v;
  }

  /// B^{-1} V through the stored factorization (diagonal divide or
  /// triangular solves), never an explicit inverse.
  Matrix b_solve(const Matrix& v) const {
    if (diagonal_) return b_diag_.cwiseInverse().asDiagonal() * v;
    return llt_.solve(v);
  }

  friend SurrogateStatic build_static(const SdpProblem& problem);

 private:
  Eigen::Index n_ = 0;
  bool diagonal_ = false;
  Matrix b_;
  Vector b_diag_;
  Eigen::LLT<Matrix> llt_;
  Matrix c_;
  Matrix q_sum_;
  Matrix a_plus_;
  double lambda_ = 0.0, gamma_ = 0.0;
};

/// Builds B, C, Q and the PSD part of A. B does not depend on the anchor, so
/// this runs exactly once per problem. When B comes out diagonal (sparse PCA)
/// only the diagonal is stored and factorization is skipped.
inline SurrogateStatic build_static(const SdpProblem& problem) {
  const Eigen::Index n = problem.n();
  SurrogateStatic s;
  s.n_ = n;
  s.lambda_ = problem.lambda();
  s.gamma_ = problem.gamma();

  // split A into its PSD and NSD parts; eigenvalues within the noise floor
  // of zero are dropped so that A <= 0 gives an exactly zero A+
  Eigen::SelfAdjointEigenSolver<Matrix> es(problem.a());
  if (es.info() != Eigen::Success)
    throw NumericalError("build_static: eigendecomposition of A failed");
  const Vector& w = es.eigenvalues();
  const Matrix& v = es.eigenvectors();
  const double eps = 1e-12 * std::max(1.0, w.cwiseAbs().maxCoeff());
  s.a_plus_ = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (w[i] > eps) s.a_plus_.noalias() += w[i] * v.col(i) * v.col(i).transpose();

  s.q_sum_ = Matrix::Zero(n, n);
  for (const ConstraintTerm& term : problem.terms()) term.qbar.add_to(s.q_sum_);

  Matrix b = s.q_sum_ + 0.5 * problem.lambda() * Matrix::Identity(n, n) +
             0.5 * problem.gamma() * s.a_plus_;

  bool diagonal = true;
  for (Eigen::Index j = 0; j < n && diagonal; ++j)
    for (Eigen::Index i = 0; i < n && diagonal; ++i)
      if (i != j && b(i, j) != 0.0) diagonal = false;

  s.diagonal_ = diagonal;
  if (diagonal) {
    s.b_diag_ = b.diagonal();
  } else {
    s.llt_.compute(b);
    if (s.llt_.info() != Eigen::Success)
      throw NumericalError("build_static: Cholesky factorization of B failed");
  }
  s.b_ = std::move(b);

  s.c_ = problem.a() + (problem.lambda() / problem.gamma()) * Matrix::Identity(n, n);
  return s;
}

struct AnchorOptions {
  // materialize Q_tau X_k rows up to this many doubles, then fall back to
  // implicit application (keeps the O(nnz + nr) memory regime)
  std::size_t materialize_budget = static_cast<std::size_t>(1) << 28;
};

/// Per-iteration surrogate data anchored at X_k. The owning problem must
/// outlive the anchor (term operators reference its sparse matrices).
struct SurrogateAnchor {
  std::shared_ptr<const Matrix> x_k;  // X_k
  Vector b;                           // b_tau = (tr(X_k^T Q_tau X_k) - t_tau)/2
  double c = 0.0;                     // c_k = (gamma/2) tr(X_k^T C X_k)
  Matrix linear;                      // gamma C X_k
  std::vector<TermOp> qx;             // Q_tau X_k

  const Matrix& x_anchor() const { return *x_k; }
};

inline SurrogateAnchor anchor(const SurrogateStatic& s, const SdpProblem& problem,
                              const Iterate& iterate, const AnchorOptions& opts = {}) {
  require_dims(iterate.x.rows() == problem.n() && iterate.x.cols() == problem.r(),
               "anchor: iterate dimensions do not match problem");
  require_dims(iterate.traces.size() == problem.num_terms(),
               "anchor: trace cache length mismatch");
  require_dims(s.n() == problem.n(), "anchor: static data does not match problem");

  SurrogateAnchor a;
  a.x_k = std::make_shared<const Matrix>(iterate.x);
  const Eigen::Index m = problem.num_terms();
  a.b.resize(m);
  for (Eigen::Index tau = 0; tau < m; ++tau)
    a.b[tau] = 0.5 * (iterate.traces[tau] - problem.terms()[tau].t);

  const Matrix cx = s.c_matrix() * (*a.x_k);
  a.c = 0.5 * problem.gamma() * ((*a.x_k).transpose() * cx).trace();
  a.linear = problem.gamma() * cx;

  a.qx.reserve(static_cast<std::size_t>(m));
  std::size_t used = 0;
  for (Eigen::Index tau = 0; tau < m; ++tau) {
    const SparseMatrix& q = problem.terms()[tau].q;
    if (used < opts.materialize_budget) {
      TermOp op = TermOp::materialized(q, *a.x_k);
      used += op.materialized_doubles();
      a.qx.push_back(std::move(op));
    } else {
      a.qx.push_back(TermOp::implicit(q, a.x_k));
    }
  }
  return a;
}

/// H^k(X~) = tr(X~^T (B X~ + gamma C X_k)) + 2 sum |tr(X~^T Q_tau X_k) + b_tau| + c_k
inline double eval_surrogate(const SurrogateStatic& s, const SurrogateAnchor& a,
                             const Matrix& xt) {
  require_dims(xt.rows() == a.x_anchor().rows() && xt.cols() == a.x_anchor().cols(),
               "eval_surrogate: dimension mismatch");
  if (!all_finite(xt)) throw NumericalError("eval_surrogate: non-finite input");
  double h = (xt.transpose() * (s.b_apply(xt) + a.linear)).trace() + a.c;
  for (Eigen::Index tau = 0; tau < a.b.size(); ++tau)
    h += 2.0 * std::abs(a.qx[static_cast<std::size_t>(tau)].dot(xt) + a.b[tau]);
  return h;
}

/// H^k(0) = 2 sum |b_tau| + c_k, which equals R(X_k).
inline double surrogate_at_zero(const SurrogateAnchor& a) {
  return 2.0 * a.b.cwiseAbs().sum() + a.c;
}

}  // namespace rsdp
