#pragma once

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <utility>
#include <vector>

#include "rsdp/types.hpp"

namespace rsdp {

/// Returns (M + M^T)/2. The quadratic form tr(X^T M X) is invariant under
/// this map, so constraint matrices can always be stored symmetric.
inline Matrix symmetrize(const Matrix& m) {
  require_dims(m.rows() == m.cols(), "symmetrize: matrix must be square");
  return 0.5 * (m + m.transpose());
}

inline SparseMatrix symmetrize(const SparseMatrix& m) {
  require_dims(m.rows() == m.cols(), "symmetrize: matrix must be square");
  SparseMatrix mt = m.transpose();
  SparseMatrix s = 0.5 * (m + mt);
  s.prune(0.0);
  s.makeCompressed();
  return s;
}

inline double max_asymmetry(const SparseMatrix& m) {
  SparseMatrix mt = m.transpose();
  SparseMatrix d = m - mt;
  double worst = 0.0;
  for (int k = 0; k < d.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(d, k); it; ++it)
      worst = std::max(worst, std::abs(it.value()));
  return worst;
}

inline double max_abs(const SparseMatrix& m) {
  double worst = 0.0;
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      worst = std::max(worst, std::abs(it.value()));
  return worst;
}

/// tr(X^T Q X) evaluated through the sparsity of Q.
inline double quad_trace(const SparseMatrix& q, const Matrix& x) {
  require_dims(q.rows() == q.cols() && q.rows() == x.rows(),
               "quad_trace: dimension mismatch");
  double acc = 0.0;
  for (int k = 0; k < q.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(q, k); it; ++it)
      acc += it.value() * x.row(it.row()).dot(x.row(it.col()));
  return acc;
}

// PSD matrix stored either dense or as a sum of scaled outer products
// w_l * v_l v_l^T (used when the rank is small, e.g. link terms have rank 2).
class PsdForm {
 public:
  struct Pair {
    double value;  // >= 0
    Vector vec;
  };

  static PsdForm dense(Matrix m) {
    PsdForm f;
    f.n_ = m.rows();
    f.dense_ = std::move(m);
    f.is_dense_ = true;
    return f;
  }

  static PsdForm low_rank(Eigen::Index n, std::vector<Pair> pairs) {
    PsdForm f;
    f.n_ = n;
    f.pairs_ = std::move(pairs);
    f.is_dense_ = false;
    return f;
  }

  bool is_dense() const { return is_dense_; }
  Eigen::Index dim() const { return n_; }
  Eigen::Index rank() const {
    return is_dense_ ? n_ : static_cast<Eigen::Index>(pairs_.size());
  }
  const std::vector<Pair>& pairs() const { return pairs_; }

  /// tr(X^T Qbar X), always >= 0 up to roundoff.
  double quad(const Matrix& x) const {
    require_dims(x.rows() == n_, "PsdForm::quad: dimension mismatch");
    if (is_dense_) return (x.transpose() * dense_ * x).trace();
    double acc = 0.0;
    for (const Pair& p : pairs_) acc += p.value * (p.vec.transpose() * x).squaredNorm();
    return acc;
  }

  void add_to(Matrix& acc) const {
    if (is_dense_) {
      acc += dense_;
    } else {
      for (const Pair& p : pairs_) acc.noalias() += p.value * p.vec * p.vec.transpose();
    }
  }

  Matrix to_dense() const {
    if (is_dense_) return dense_;
    Matrix m = Matrix::Zero(n_, n_);
    add_to(m);
    return m;
  }

 private:
  Eigen::Index n_ = 0;
  bool is_dense_ = true;
  Matrix dense_;
  std::vector<Pair> pairs_;
};

namespace detail {

// Dense general path: eigendecompose, take absolute eigenvalues.
inline PsdForm qbar_via_eig(const Matrix& q, Eigen::Index low_rank_threshold = 4) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(q);
  if (es.info() != Eigen::Success)
    throw NumericalError("build_qbar: eigendecomposition failed");
  const Vector w = es.eigenvalues();
  const Matrix& v = es.eigenvectors();
  const double scale = w.cwiseAbs().maxCoeff();
  const double drop = 1e-14 * std::max(1.0, scale);

  std::vector<PsdForm::Pair> pairs;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (std::abs(w[i]) > drop) pairs.push_back({std::abs(w[i]), v.col(i)});

  if (static_cast<Eigen::Index>(pairs.size()) <= low_rank_threshold)
    return PsdForm::low_rank(q.rows(), std::move(pairs));
  return PsdForm::dense(v * w.cwiseAbs().asDiagonal() * v.transpose());
}

}  // namespace detail

/// Builds Qbar, the PSD matrix with the eigenvectors of q and absolute
/// eigenvalues, so that |tr(X^T q X)| <= tr(X^T Qbar X) for all X.
///
/// q must already be symmetric. Structural fast paths cover the term shapes
/// the applications generate (single diagonal entry; one symmetric
/// off-diagonal pair); `psd_hint` short-circuits for terms known PSD by
/// construction.
inline PsdForm build_qbar(const SparseMatrix& q, bool psd_hint = false) {
  require_dims(q.rows() == q.cols(), "build_qbar: matrix must be square");
  const double scale = std::max(1.0, max_abs(q));
  if (max_asymmetry(q) > 1e-12 * scale)
    throw ContractViolation("build_qbar: input is not symmetric");

  const Eigen::Index n = q.rows();

  // collect nonzeros once; tiny patterns get closed forms
  std::vector<Triplet> nz;
  for (int k = 0; k < q.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(q, k); it; ++it)
      if (it.value() != 0.0) nz.emplace_back(it.row(), it.col(), it.value());

  if (nz.empty()) return PsdForm::low_rank(n, {});

  if (nz.size() == 1 && nz[0].row() == nz[0].col()) {
    Vector e = Vector::Zero(n);
    e[nz[0].row()] = 1.0;
    return PsdForm::low_rank(n, {{std::abs(nz[0].value()), e}});
  }
  if (nz.size() == 2 && nz[0].row() == nz[1].col() && nz[0].col() == nz[1].row() &&
      nz[0].row() != nz[0].col() && nz[0].value() == nz[1].value()) {
    // q = v (e_i e_j^T + e_j e_i^T) has eigenvalues +-v on (e_i +- e_j)/sqrt(2),
    // so Qbar = |v| (e_i e_i^T + e_j e_j^T)
    Vector ei = Vector::Zero(n), ej = Vector::Zero(n);
    ei[nz[0].row()] = 1.0;
    ej[nz[0].col()] = 1.0;
    const double v = std::abs(nz[0].value());
    return PsdForm::low_rank(n, {{v, ei}, {v, ej}});
  }

  if (psd_hint) return PsdForm::dense(Matrix(q));

  Matrix qd(q);
  Eigen::SelfAdjointEigenSolver<Matrix> probe(qd, Eigen::EigenvaluesOnly);
  const double wmax = probe.eigenvalues().cwiseAbs().maxCoeff();
  if (probe.eigenvalues().minCoeff() >= -1e-12 * std::max(1.0, wmax))
    return PsdForm::dense(std::move(qd));  // verified PSD: Qbar = q exactly

  return detail::qbar_via_eig(qd);
}

/// One tau: sparse symmetric Q_tau, target t_tau and the PSD bound Qbar.
struct ConstraintTerm {
  SparseMatrix q;
  double t = 0.0;
  PsdForm qbar;
};

struct TermInput {
  SparseMatrix q;
  double t = 0.0;
  bool psd_hint = false;
  // builders may pass an exact Qbar (e.g. the rank-1 form of a Gram term)
  std::optional<PsdForm> qbar;
};

struct ProblemOptions {
  // opt-in: silently symmetrize inputs whose asymmetry exceeds 1e-12
  bool symmetrize_inputs = false;
  bool warn_noncoercive = true;
};

/// The full robust SDP instance. Immutable after construction; safe to share
/// across threads for reading.
class SdpProblem {
 public:
  using Options = ProblemOptions;

  static SdpProblem make(Eigen::Index n, Eigen::Index r,
                         std::vector<TermInput> term_inputs, Matrix a,
                         double gamma, double lambda,
                         ProblemOptions opts = ProblemOptions{}) {
    require(n >= 1, "SdpProblem: n must be positive");
    require(r >= 1 && r <= n, "SdpProblem: rank must satisfy 1 <= r <= n");
    require(gamma > 0.0, "SdpProblem: gamma must be positive");
    require(lambda > 0.0, "SdpProblem: lambda must be positive");
    require_dims(a.rows() == n && a.cols() == n, "SdpProblem: A must be n x n");

    SdpProblem p;
    p.n_ = n;
    p.r_ = r;
    p.gamma_ = gamma;
    p.lambda_ = lambda;

    const double a_asym = (a - a.transpose()).cwiseAbs().maxCoeff();
    const double a_scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if (a_asym > 1e-12 * a_scale && !opts.symmetrize_inputs)
      throw ContractViolation("SdpProblem: A is not symmetric");
    p.a_ = symmetrize(a);

    p.terms_.reserve(term_inputs.size());
    for (auto& ti : term_inputs) {
      require_dims(ti.q.rows() == n && ti.q.cols() == n,
                   "SdpProblem: term matrix must be n x n");
      const double scale = std::max(1.0, max_abs(ti.q));
      if (max_asymmetry(ti.q) > 1e-12 * scale && !opts.symmetrize_inputs)
        throw ContractViolation("SdpProblem: term matrix is not symmetric");
      SparseMatrix q = symmetrize(ti.q);
      PsdForm qbar = ti.qbar ? std::move(*ti.qbar) : build_qbar(q, ti.psd_hint);
      p.terms_.push_back({std::move(q), ti.t, std::move(qbar)});
    }

    Eigen::SelfAdjointEigenSolver<Matrix> es(p.a_, Eigen::EigenvaluesOnly);
    p.a_min_eig_ = es.eigenvalues().minCoeff();
    p.coercive_ = p.lambda_ + p.gamma_ * p.a_min_eig_ > 0.0;
    if (!p.coercive_ && opts.warn_noncoercive)
      std::cerr << "rsdp: warning: lambda + gamma*lambda_min(A) <= 0; "
                   "iterates are not guaranteed bounded\n";
    return p;
  }

  /// Copy of the problem with new term targets (structure untouched).
  SdpProblem replace_targets(const Vector& targets) const {
    require_dims(targets.size() == num_terms(),
                 "replace_targets: wrong number of targets");
    SdpProblem p = *this;
    for (Eigen::Index tau = 0; tau < p.num_terms(); ++tau)
      p.terms_[static_cast<std::size_t>(tau)].t = targets[tau];
    return p;
  }

  /// Copy of the problem with different regularization weights.
  SdpProblem with_hyperparameters(double gamma, double lambda) const {
    require(gamma > 0.0 && lambda > 0.0,
            "with_hyperparameters: weights must be positive");
    SdpProblem p = *this;
    p.gamma_ = gamma;
    p.lambda_ = lambda;
    p.coercive_ = lambda + gamma * p.a_min_eig_ > 0.0;
    return p;
  }

  /// Copy of the problem with a different factor rank.
  SdpProblem with_rank(Eigen::Index r) const {
    require(r >= 1 && r <= n_, "with_rank: rank must satisfy 1 <= r <= n");
    SdpProblem p = *this;
    p.r_ = r;
    return p;
  }

  Eigen::Index n() const { return n_; }
  Eigen::Index r() const { return r_; }
  Eigen::Index num_terms() const { return static_cast<Eigen::Index>(terms_.size()); }
  const std::vector<ConstraintTerm>& terms() const { return terms_; }
  const Matrix& a() const { return a_; }
  double gamma() const { return gamma_; }
  double lambda() const { return lambda_; }
  bool coercive() const { return coercive_; }
  double a_min_eigenvalue() const { return a_min_eig_; }

 private:
  Eigen::Index n_ = 0, r_ = 0;
  std::vector<ConstraintTerm> terms_;
  Matrix a_;
  double gamma_ = 1.0, lambda_ = 1.0;
  bool coercive_ = true;
  double a_min_eig_ = 0.0;
};

/// R(X) = sum_tau |tr(X^T Q_tau X) - t_tau| + (gamma/2) tr(X^T A X)
///        + (lambda/2) ||X||_F^2
inline double eval_objective(const SdpProblem& p, const Matrix& x) {
  require_dims(x.rows() == p.n() && x.cols() == p.r(),
               "eval_objective: X must be n x r");
  if (!all_finite(x)) throw NumericalError("eval_objective: X has non-finite entries");
  double data = 0.0;
  for (const ConstraintTerm& term : p.terms())
    data += std::abs(quad_trace(term.q, x) - term.t);
  const double reg = 0.5 * p.gamma() * (x.transpose() * p.a() * x).trace() +
                     0.5 * p.lambda() * x.squaredNorm();
  return data + reg;
}

/// Root mean squared residual over the given terms.
inline double eval_rmse(const std::vector<ConstraintTerm>& terms, const Matrix& x) {
  require(!terms.empty(), "eval_rmse: term list is empty");
  double acc = 0.0;
  for (const ConstraintTerm& term : terms) {
    const double resid = quad_trace(term.q, x) - term.t;
    acc += resid * resid;
  }
  return std::sqrt(acc / static_cast<double>(terms.size()));
}

/// Current factor X_k with its cached per-term traces and objective value.
struct Iterate {
  Matrix x;
  Vector traces;
  double objective = 0.0;
};

inline Iterate make_iterate(const SdpProblem& p, Matrix x) {
  Iterate it;
  it.traces.resize(p.num_terms());
  for (Eigen::Index tau = 0; tau < p.num_terms(); ++tau)
    it.traces[tau] = quad_trace(p.terms()[tau].q, x);
  it.objective = eval_objective(p, x);
  it.x = std::move(x);
  return it;
}

}  // namespace rsdp
