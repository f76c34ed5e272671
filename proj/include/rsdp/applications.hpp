#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "rsdp/random.hpp"
#include "rsdp/solver.hpp"
#include "rsdp/types.hpp"

namespace rsdp {

/// Largest r >= 1 with r(r+1) <= m, capped at n.
inline Eigen::Index auto_rank(Eigen::Index m, Eigen::Index n) {
  Eigen::Index r = 1;
  while ((r + 1) * (r + 2) <= m) ++r;
  return std::min(r, n);
}

// ---------------------------------------------------------------------------
// Problem builders
// ---------------------------------------------------------------------------

/// Kernel learning from must-link / cannot-link pairs.
struct NpklSpec {
  Eigen::Index n = 0;
  struct Link {
    Eigen::Index i = 0, j = 0;
    double label = 0.0;  // 1 = must-link, 0 = cannot-link
  };
  std::vector<Link> links;
  Matrix laplacian;  // symmetric PSD graph Laplacian
  double gamma = 1.0;
  double lambda = 1e-2;
  Eigen::Index rank = 0;  // 0: largest r with r(r+1) <= |links|
};

/// One term per link with q = sym(e_j e_i^T), so tr(X^T q X) = (X X^T)_ij;
/// the Laplacian regularizes through A = L.
inline SdpProblem build_npkl(const NpklSpec& spec,
                             ProblemOptions opts = ProblemOptions{}) {
  require(spec.n >= 2, "build_npkl: need at least two patterns");
  require(!spec.links.empty(), "build_npkl: link list is empty");
  require_dims(spec.laplacian.rows() == spec.n && spec.laplacian.cols() == spec.n,
               "build_npkl: Laplacian must be n x n");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> keys;
  keys.reserve(spec.links.size());
  for (const auto& link : spec.links) {
    require(link.i >= 0 && link.i < spec.n && link.j >= 0 && link.j < spec.n,
            "build_npkl: link index out of range");
    require(link.i != link.j, "build_npkl: self-link");
    keys.push_back(std::minmax(link.i, link.j));
  }
  std::sort(keys.begin(), keys.end());
  require(std::adjacent_find(keys.begin(), keys.end()) == keys.end(),
          "build_npkl: duplicate link pair");

  std::vector<TermInput> terms;
  terms.reserve(spec.links.size());
  for (const auto& link : spec.links) {
    SparseMatrix q(spec.n, spec.n);
    q.insert(link.j, link.i) = 1.0;  // raw e_j e_i^T; symmetrized on ingestion
    q.makeCompressed();
    terms.push_back({std::move(q), link.label, false, std::nullopt});
  }
  const Eigen::Index m = static_cast<Eigen::Index>(spec.links.size());
  const Eigen::Index r = spec.rank > 0 ? std::min(spec.rank, spec.n)
                                       : auto_rank(m, spec.n);
  opts.symmetrize_inputs = true;
  return SdpProblem::make(spec.n, r, std::move(terms), spec.laplacian, spec.gamma,
                          spec.lambda, opts);
}

/// Colored maximum variance unfolding: preserve local distances, align the
/// embedding with a label kernel.
struct CmvuSpec {
  Matrix points;  // n x d data matrix
  std::vector<std::pair<Eigen::Index, Eigen::Index>> neighbor_pairs;
  Matrix label_kernel;  // n x n PSD
  double gamma = 0.01;
  double lambda = 1e-3;
  Eigen::Index rank = 0;
};

/// One term per neighbor pair with q = E_ij E_ij^T (PSD, so Qbar = q), target
/// the squared distance in the original space. The alignment term enters the
/// generic objective with a sign flip: A = -H T H.
inline SdpProblem build_cmvu(const CmvuSpec& spec,
                             ProblemOptions opts = ProblemOptions{}) {
  const Eigen::Index n = spec.points.rows();
  require(n >= 2, "build_cmvu: need at least two points");
  require(!spec.neighbor_pairs.empty(), "build_cmvu: need at least one neighbor pair");
  require_dims(spec.label_kernel.rows() == n && spec.label_kernel.cols() == n,
               "build_cmvu: label kernel must be n x n");

  std::vector<TermInput> terms;
  terms.reserve(spec.neighbor_pairs.size());
  for (const auto& [i, j] : spec.neighbor_pairs) {
    require(i >= 0 && i < n && j >= 0 && j < n && i != j,
            "build_cmvu: neighbor index out of range");
    SparseMatrix q(n, n);
    q.insert(i, i) = 1.0;
    q.insert(j, j) = 1.0;
    q.insert(std::min(i, j), std::max(i, j)) = -1.0;
    q.insert(std::max(i, j), std::min(i, j)) = -1.0;
    q.makeCompressed();
    Vector e = Vector::Zero(n);
    e[i] = 1.0;
    e[j] = -1.0;
    // rank-1 form kept exact: q = (e_i - e_j)(e_i - e_j)^T
    PsdForm qbar = PsdForm::low_rank(n, {{1.0, std::move(e)}});
    const double dist2 = (spec.points.row(i) - spec.points.row(j)).squaredNorm();
    terms.push_back({std::move(q), dist2, true, std::move(qbar)});
  }

  const Matrix h = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / double(n));
  Matrix a = -(h * spec.label_kernel * h);
  a = symmetrize(a);

  const Eigen::Index m = static_cast<Eigen::Index>(spec.neighbor_pairs.size());
  const Eigen::Index r = spec.rank > 0 ? std::min(spec.rank, n) : auto_rank(m, n);
  opts.symmetrize_inputs = true;
  return SdpProblem::make(n, r, std::move(terms), std::move(a), spec.gamma,
                          spec.lambda, opts);
}

/// Sparse leading principal component of a covariance matrix.
struct SpcaSpec {
  Matrix sigma;  // n x n covariance, PSD
  double gamma = 10.0;
  double lambda = 1e-3;
  Eigen::Index rank = 10;
};

/// n(n+1)/2 terms over upper-triangular index pairs with t = 0 and A = -Sigma.
/// The Qbar sum is ((n+1)/2) I, which makes B diagonal.
inline SdpProblem build_spca(const SpcaSpec& spec,
                             ProblemOptions opts = ProblemOptions{}) {
  const Eigen::Index n = spec.sigma.rows();
  require_dims(spec.sigma.cols() == n, "build_spca: covariance must be square");
  require(n >= 1, "build_spca: empty covariance");

  std::vector<TermInput> terms;
  terms.reserve(static_cast<std::size_t>(n * (n + 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      SparseMatrix q(n, n);
      q.insert(j, i) = 1.0;
      q.makeCompressed();
      terms.push_back({std::move(q), 0.0, false, std::nullopt});
    }
  }
  const Eigen::Index r = std::min(spec.rank, n);
  opts.symmetrize_inputs = true;
  return SdpProblem::make(n, r, std::move(terms), -spec.sigma, spec.gamma,
                          spec.lambda, opts);
}

// ---------------------------------------------------------------------------
// Noise injection
// ---------------------------------------------------------------------------

struct LabelNoise {
  enum class Mode { gaussian, flip };
  Mode mode = Mode::gaussian;
  double fraction = 0.1;
  double variance = 5.0;  // gaussian mode
};

/// Perturbs the targets of a seed-chosen fraction of terms; the input problem
/// is untouched. Repeated calls with the same seed select the same terms, so
/// flipping twice restores the original labels.
inline SdpProblem inject_label_noise(const SdpProblem& problem, const LabelNoise& noise,
                                     std::uint64_t seed) {
  require(noise.fraction > 0.0 && noise.fraction < 1.0,
          "inject_label_noise: fraction must be in (0, 1)");
  const Eigen::Index m = problem.num_terms();
  const auto k = static_cast<std::size_t>(
      std::llround(noise.fraction * static_cast<double>(m)));
  Rng rng(seed);
  const std::vector<std::size_t> chosen = rng.pick(static_cast<std::size_t>(m), k);

  Vector targets(m);
  for (Eigen::Index tau = 0; tau < m; ++tau) targets[tau] = problem.terms()[tau].t;
  for (std::size_t idx : chosen) {
    auto tau = static_cast<Eigen::Index>(idx);
    if (noise.mode == LabelNoise::Mode::flip)
      targets[tau] = 1.0 - targets[tau];
    else
      targets[tau] += std::sqrt(noise.variance) * rng.normal();
  }
  return problem.replace_targets(targets);
}

struct FeatureNoise {
  enum class Mode { small, outliers };
  Mode mode = Mode::small;
  double fraction = 0.1;      // outlier mode
  double small_variance = 0.01;   // times the per-feature mean
  double outlier_variance = 5.0;  // times the per-feature max magnitude
};

/// Small mode perturbs every entry with variance 0.01 |mean_d| per feature;
/// outlier mode corrupts a seed-chosen fraction of rows with variance
/// 5 max_d |x| per feature.
inline Matrix inject_feature_noise(const Matrix& points, const FeatureNoise& noise,
                                   std::uint64_t seed) {
  require(points.rows() > 0 && points.cols() > 0, "inject_feature_noise: empty data");
  const Eigen::Index n = points.rows(), d = points.cols();
  Rng rng(seed);
  Matrix out = points;
  if (noise.mode == FeatureNoise::Mode::small) {
    Vector sigma(d);
    for (Eigen::Index c = 0; c < d; ++c)
      sigma[c] = std::sqrt(noise.small_variance * std::abs(points.col(c).mean()));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < d; ++c) out(i, c) += sigma[c] * rng.normal();
    return out;
  }
  require(noise.fraction > 0.0 && noise.fraction < 1.0,
          "inject_feature_noise: fraction must be in (0, 1)");
  Vector sigma(d);
  for (Eigen::Index c = 0; c < d; ++c)
    sigma[c] = std::sqrt(noise.outlier_variance * points.col(c).cwiseAbs().maxCoeff());
  const auto k = static_cast<std::size_t>(
      std::llround(noise.fraction * static_cast<double>(n)));
  for (std::size_t row : rng.pick(static_cast<std::size_t>(n), k))
    for (Eigen::Index c = 0; c < d; ++c)
      out(static_cast<Eigen::Index>(row), c) += sigma[c] * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// F(X) = sum (tr(X^T Q_tau X) - t_tau)^2 / 2 + (gamma/2) tr(X^T A X)
///        + (lambda/2) ||X||^2 for the squared-loss comparison runs.
inline double eval_squared_objective(const SdpProblem& p, const Matrix& x) {
  double data = 0.0;
  for (const ConstraintTerm& term : p.terms()) {
    const double resid = quad_trace(term.q, x) - term.t;
    data += 0.5 * resid * resid;
  }
  return data + 0.5 * p.gamma() * (x.transpose() * p.a() * x).trace() +
         0.5 * p.lambda() * x.squaredNorm();
}

inline Matrix squared_objective_gradient(const SdpProblem& p, const Matrix& x) {
  Matrix g = p.gamma() * (p.a() * x) + p.lambda() * x;
  for (const ConstraintTerm& term : p.terms()) {
    const double resid = quad_trace(term.q, x) - term.t;
    g += 2.0 * resid * (term.q * x);
  }
  return g;
}

/// Gradient descent with Armijo backtracking on the smooth squared-loss
/// objective, stopped by the same relative objective-change rule as the
/// robust solver.
inline SolveReport squared_loss_baseline(const SdpProblem& problem,
                                         const SolveOptions& opts) {
  require(opts.outer_tol > 0.0, "squared_loss_baseline: outer_tol must be positive");
  Matrix x = detail::initial_x(problem, opts.init, opts.seed);

  SolveReport report;
  double f = eval_squared_objective(problem, x);
  if (!std::isfinite(f)) throw NumericalError("squared_loss_baseline: non-finite start");
  report.objective_trace.push_back(f);

  double eta = 1.0;
  for (int k = 0; k < opts.max_outer; ++k) {
    const Matrix g = squared_objective_gradient(problem, x);
    const double g2 = g.squaredNorm();
    if (g2 <= 1e-24) {
      report.termination = Termination::tolerance;
      break;
    }
    eta = std::min(eta * 1.5, 1e8);
    Matrix x_next;
    double f_next = 0.0;
    int trials = 0;
    for (;;) {
      x_next = x - eta * g;
      f_next = eval_squared_objective(problem, x_next);
      ++trials;
      if (std::isfinite(f_next) && f_next <= f - 1e-4 * eta * g2) break;
      eta *= 0.5;
      if (eta < 1e-18) throw NumericalError("squared_loss_baseline: line search failed");
    }

    const double step = (x_next - x).norm();
    const double decrease = f - f_next;
    report.objective_trace.push_back(f_next);
    report.step_norms.push_back(step);
    report.decrease_ratios.push_back(
        step >= 1e-12 ? decrease / (step * step)
                      : std::numeric_limits<double>::quiet_NaN());
    report.inner_stats.push_back({trials, std::sqrt(g2), true, false, "gd", 0.0});

    const double rel = std::abs(decrease) / (1.0 + std::abs(f));
    x = std::move(x_next);
    f = f_next;
    if (rel < opts.outer_tol) {
      report.termination = Termination::tolerance;
      break;
    }
    if (k + 1 == opts.max_outer) report.termination = Termination::max_iters;
  }
  report.final_x = std::move(x);
  report.final_objective = f;
  return report;
}

/// Eigenvalue clipping onto the PSD cone.
inline Matrix psd_project(const Matrix& z) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(z));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
         es.eigenvectors().transpose();
}

/// Convex objective over full matrices Z (reference value for the factored
/// solver): sum |tr(Z Q_tau) - t_tau| + (gamma/2) tr(Z A) + (lambda/2) ||Z||^2.
inline double convex_l1_objective(const SdpProblem& p, const Matrix& z) {
  double data = 0.0;
  for (const ConstraintTerm& term : p.terms()) {
    double tz = 0.0;
    for (int k = 0; k < term.q.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(term.q, k); it; ++it)
        tz += it.value() * z(it.col(), it.row());
    data += std::abs(tz - term.t);
  }
  return data + 0.5 * p.gamma() * (z * p.a()).trace() +
         0.5 * p.lambda() * z.squaredNorm();
}

struct ConvexOracleOptions {
  double tol = 1e-8;
  int max_iters = 20000;
  double rho0 = 1.0;
  bool adaptive_rho = true;
  Eigen::Index n_cap = 80;  // full eigendecomposition per iteration
};

struct ConvexOracleResult {
  Matrix z;  // PSD
  double objective = 0.0;
  int iters = 0;
  bool converged = false;
};

/// ADMM on the full-matrix convex problem min_{Z >= 0} convex_l1_objective,
/// splitting the residuals e_tau = tr(Z Q_tau) - t_tau and the cone variable
/// W = Z (PSD projection by eigenvalue clipping).
inline ConvexOracleResult convex_l1_oracle(const SdpProblem& problem,
                                           const ConvexOracleOptions& opts = {}) {
  const Eigen::Index n = problem.n();
  if (n > opts.n_cap)
    throw ContractViolation("convex_l1_oracle: n exceeds the configured cap");
  const Eigen::Index m = problem.num_terms();

  const auto traces_of = [&](const Matrix& z) -> Vector {
    Vector v(m);
    for (Eigen::Index tau = 0; tau < m; ++tau) {
      double acc = 0.0;
      const SparseMatrix& q = problem.terms()[tau].q;
      for (int k = 0; k < q.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(q, k); it; ++it)
          acc += it.value() * z(it.col(), it.row());
      v[tau] = acc;
    }
    return v;
  };

  Matrix z = Matrix::Zero(n, n);
  Matrix w = Matrix::Zero(n, n);
  Matrix s_dual = Matrix::Zero(n, n);
  Vector e = Vector::Zero(m), p_dual = Vector::Zero(m);
  Vector t(m);
  for (Eigen::Index tau = 0; tau < m; ++tau) t[tau] = problem.terms()[tau].t;
  double rho = opts.rho0;

  ConvexOracleResult result;
  for (int it = 0; it < opts.max_iters; ++it) {
    // Z block: (lambda + rho) Z + rho sum tr(Z Q_tau) Q_tau = RHS, by CG
    Matrix rhs = rho * w - s_dual - 0.5 * problem.gamma() * problem.a();
    for (Eigen::Index tau = 0; tau < m; ++tau) {
      const double coef = p_dual[tau] - rho * (t[tau] + e[tau]);
      const SparseMatrix& q = problem.terms()[tau].q;
      for (int k = 0; k < q.outerSize(); ++k)
        for (SparseMatrix::InnerIterator jt(q, k); jt; ++jt)
          rhs(jt.row(), jt.col()) -= coef * jt.value();
    }
    const auto apply = [&](const Matrix& v) -> Matrix {
      Matrix out = (problem.lambda() + rho) * v;
      const Vector tv = traces_of(v);
      for (Eigen::Index tau = 0; tau < m; ++tau) {
        const SparseMatrix& q = problem.terms()[tau].q;
        for (int k = 0; k < q.outerSize(); ++k)
          for (SparseMatrix::InnerIterator jt(q, k); jt; ++jt)
            out(jt.row(), jt.col()) += rho * tv[tau] * jt.value();
      }
      return out;
    };
    {
      Matrix res = rhs - apply(z);
      Matrix dir = res;
      double r2 = res.squaredNorm();
      const double rhs2 = std::max(rhs.squaredNorm(), 1e-300);
      for (int cg = 0; cg < 4 * static_cast<int>(n * n) + 100; ++cg) {
        if (r2 <= 1e-20 * rhs2) break;
        const Matrix ad = apply(dir);
        const double curv = detail::frob_dot(dir, ad);
        if (!std::isfinite(curv) || curv <= 0.0)
          throw NumericalError("convex_l1_oracle: CG breakdown");
        const double alpha = r2 / curv;
        z += alpha * dir;
        res -= alpha * ad;
        const double r2_new = res.squaredNorm();
        dir = res + (r2_new / r2) * dir;
        r2 = r2_new;
      }
    }

    const Vector tz = traces_of(z);
    const Vector e_old = e;
    for (Eigen::Index tau = 0; tau < m; ++tau)
      e[tau] = soft_threshold(tz[tau] - t[tau] + p_dual[tau] / rho, 1.0 / rho);
    const Matrix w_old = w;
    w = psd_project(z + s_dual / rho);

    p_dual += rho * (tz - t - e);
    s_dual += rho * (z - w);

    const double pri = std::sqrt((tz - t - e).squaredNorm() + (z - w).squaredNorm());
    const double dua = rho * std::sqrt((e - e_old).squaredNorm() + (w - w_old).squaredNorm());
    result.iters = it + 1;
    const double scale = std::max({1.0, tz.norm(), e.norm(), z.norm(), w.norm()});
    if (pri <= opts.tol * scale && dua <= opts.tol * scale) {
      result.converged = true;
      break;
    }
    if (opts.adaptive_rho) {
      if (pri > 10.0 * dua)
        rho = std::min(rho * 2.0, 1e8);
      else if (dua > 10.0 * pri)
        rho = std::max(rho * 0.5, 1e-8);
    }
  }

  result.z = std::move(w);  // the PSD-feasible copy
  result.objective = convex_l1_objective(problem, result.z);
  return result;
}

// ---------------------------------------------------------------------------
// Sparse PCA metrics
// ---------------------------------------------------------------------------

struct SpcaMetrics {
  double sparsity = 0.0;            // fraction of near-zero entries of u
  double explained_variance = 0.0;  // u^T Sigma u / u^T u
};

/// Metrics of the leading component u (top left singular vector of X).
inline SpcaMetrics spca_metrics(const Matrix& sigma, const Matrix& x) {
  require_dims(sigma.rows() == sigma.cols() && sigma.rows() == x.rows(),
               "spca_metrics: dimension mismatch");
  if (!all_finite(x)) throw NumericalError("spca_metrics: non-finite input");
  if (x.norm() == 0.0)
    throw ContractViolation("spca_metrics: zero factor has no leading component");
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU);
  const Vector u = svd.matrixU().col(0);
  const double umax = u.cwiseAbs().maxCoeff();
  Eigen::Index zeros = 0;
  for (Eigen::Index i = 0; i < u.size(); ++i)
    if (std::abs(u[i]) < 1e-3 * umax) ++zeros;
  SpcaMetrics mets;
  mets.sparsity = static_cast<double>(zeros) / static_cast<double>(u.size());
  mets.explained_variance = u.dot(sigma * u) / u.squaredNorm();
  return mets;
}

}  // namespace rsdp
