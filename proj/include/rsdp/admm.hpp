#pragma once

#include <cmath>
#include <vector>

#include "rsdp/surrogate.hpp"
#include "rsdp/types.hpp"

namespace rsdp {

/// Proximal operator of kappa*|.|: sign(v) * max(|v| - kappa, 0).
inline double soft_threshold(double v, double kappa) {
  require(kappa > 0.0, "soft_threshold: kappa must be positive");
  const double mag = std::abs(v) - kappa;
  return mag > 0.0 ? (v > 0.0 ? mag : -mag) : 0.0;
}

struct AdmmOptions {
  double tol = 1e-6;      // combined primal/dual residual tolerance
  int max_iters = 500;
  double cg_tol = 1e-10;  // relative residual of the X~ linear solve
  int cg_max_iters = 0;   // 0 = auto (10*n*r + 200)
  double rho0 = 1.0;
  bool adaptive_rho = true;
};

struct AdmmStats {
  int iters = 0;
  bool converged = false;
  bool safeguard_used = false;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double h_value = 0.0;
  int total_cg_iters = 0;
  std::vector<double> residual_history;  // sqrt(primal^2 + dual^2) per iteration
};

struct AdmmState {
  Matrix xt;    // current X~
  Vector e;     // auxiliary residual variables e_tau
  Vector p;     // unscaled dual variables p_tau
  double rho = 1.0;
  double primal_res = 0.0;
  double dual_res = 0.0;
  int iters = 0;
};

struct AdmmResult {
  Matrix xt;
  AdmmStats stats;
};

/// Exact minimizer of the X~ block of the augmented Lagrangian:
///   min tr(X~^T (B X~ + gamma C X_k)) + sum p_tau g_tau(X~)
///       + (rho/2) sum (g_tau(X~) - e_tau)^2,   g_tau(X~) = tr(X~^T Q_tau X_k) + b_tau.
/// The optimality system L(V) = 2 B V + rho sum tr(V^T Q_tau X_k) Q_tau X_k = RHS
/// is SPD and solved matrix-free by preconditioned CG (M = 2B), warm-started
/// from state.xt. Returns the CG iteration count through state.iters delta.
inline Matrix admm_xtilde_update(const AdmmState& state, const SurrogateStatic& s,
                                 const SurrogateAnchor& a, const AdmmOptions& opts,
                                 int* cg_iters_out = nullptr) {
  const Eigen::Index m = a.b.size();
  const Eigen::Index n = a.x_anchor().rows();
  const Eigen::Index r = a.x_anchor().cols();
  const double rho = state.rho;

  Matrix rhs = -a.linear;
  for (Eigen::Index tau = 0; tau < m; ++tau) {
    const double coef = state.p[tau] + rho * (a.b[tau] - state.e[tau]);
    a.qx[static_cast<std::size_t>(tau)].add_scaled(rhs, -coef);
  }

  const auto apply = [&](const Matrix& v) -> Matrix {
    Matrix out = 2.0 * s.b_apply(v);
    for (Eigen::Index tau = 0; tau < m; ++tau) {
      const double sv = a.qx[static_cast<std::size_t>(tau)].dot(v);
      a.qx[static_cast<std::size_t>(tau)].add_scaled(out, rho * sv);
    }
    return out;
  };
  const auto precond = [&](const Matrix& v) -> Matrix { return 0.5 * s.b_solve(v); };

  const double rhs_norm = rhs.norm();
  Matrix x = state.xt;
  if (rhs_norm == 0.0) return Matrix::Zero(n, r);

  Matrix res = rhs - apply(x);
  Matrix z = precond(res);
  Matrix dir = z;
  double rz = detail::frob_dot(res, z);
  const int cap = opts.cg_max_iters > 0 ? opts.cg_max_iters
                                        : 10 * static_cast<int>(n * r) + 200;
  int it = 0;
  for (; it < cap; ++it) {
    if (res.norm() <= opts.cg_tol * rhs_norm) break;
    const Matrix ld = apply(dir);
    const double curvature = detail::frob_dot(dir, ld);
    if (!std::isfinite(curvature) || curvature <= 0.0)
      throw NumericalError("admm_xtilde_update: CG breakdown, residual " +
                           std::to_string(res.norm()));
    const double alpha = rz / curvature;
    x += alpha * dir;
    res -= alpha * ld;
    z = precond(res);
    const double rz_new = detail::frob_dot(res, z);
    dir = z + (rz_new / rz) * dir;
    rz = rz_new;
  }
  if (res.norm() > opts.cg_tol * rhs_norm)
    throw NumericalError("admm_xtilde_update: CG did not converge, residual " +
                         std::to_string(res.norm() / rhs_norm));
  if (cg_iters_out) *cg_iters_out = it;
  return x;
}

/// ADMM on the constrained reformulation of the surrogate,
///   min tr(X~^T (B X~ + gamma C X_k)) + 2 sum |e_tau|
///   s.t. e_tau = tr(X~^T Q_tau X_k) + b_tau,
/// with unscaled duals p_tau and residual-balancing rho adaptation. The
/// returned point never increases the surrogate over the zero step.
inline AdmmResult admm_minimize(const SurrogateStatic& s, const SurrogateAnchor& a,
                                const AdmmOptions& opts) {
  require(opts.max_iters >= 1, "admm_minimize: max_iters must be >= 1");
  require(opts.tol > 0.0, "admm_minimize: tol must be positive");

  const Eigen::Index m = a.b.size();
  const Eigen::Index n = a.x_anchor().rows();
  const Eigen::Index r = a.x_anchor().cols();

  AdmmState st;
  st.xt = Matrix::Zero(n, r);
  st.rho = opts.rho0;
  st.e = Vector::Zero(m);
  st.p = Vector::Zero(m);
  for (Eigen::Index tau = 0; tau < m; ++tau)
    st.e[tau] = soft_threshold(a.b[tau], 2.0 / st.rho);

  AdmmStats stats;
  stats.residual_history.reserve(static_cast<std::size_t>(opts.max_iters));

  Vector g(m);
  for (int it = 0; it < opts.max_iters; ++it) {
    int cg_iters = 0;
    st.xt = admm_xtilde_update(st, s, a, opts, &cg_iters);
    stats.total_cg_iters += cg_iters;

    for (Eigen::Index tau = 0; tau < m; ++tau)
      g[tau] = a.qx[static_cast<std::size_t>(tau)].dot(st.xt) + a.b[tau];

    const Vector e_old = st.e;
    for (Eigen::Index tau = 0; tau < m; ++tau)
      st.e[tau] = soft_threshold(g[tau] + st.p[tau] / st.rho, 2.0 / st.rho);
    st.p += st.rho * (g - st.e);

    if (!st.xt.allFinite() || !st.e.allFinite() || !st.p.allFinite())
      throw NumericalError("admm_minimize: non-finite state");

    st.primal_res = (g - st.e).norm();
    Matrix dual_mat = Matrix::Zero(n, r);
    for (Eigen::Index tau = 0; tau < m; ++tau)
      a.qx[static_cast<std::size_t>(tau)].add_scaled(dual_mat, st.e[tau] - e_old[tau]);
    st.dual_res = st.rho * dual_mat.norm();
    st.iters = it + 1;
    stats.residual_history.push_back(
        std::sqrt(st.primal_res * st.primal_res + st.dual_res * st.dual_res));

    Matrix p_mat = Matrix::Zero(n, r);
    for (Eigen::Index tau = 0; tau < m; ++tau)
      a.qx[static_cast<std::size_t>(tau)].add_scaled(p_mat, st.p[tau]);
    const double pri_scale = std::max({1.0, g.norm(), st.e.norm()});
    const double dua_scale = std::max(1.0, p_mat.norm());
    if (st.primal_res <= opts.tol * pri_scale && st.dual_res <= opts.tol * dua_scale) {
      stats.converged = true;
      break;
    }

    if (opts.adaptive_rho) {
      if (st.primal_res > 10.0 * st.dual_res)
        st.rho = std::min(st.rho * 2.0, 1e8);
      else if (st.dual_res > 10.0 * st.primal_res)
        st.rho = std::max(st.rho * 0.5, 1e-8);
    }
  }

  stats.iters = st.iters;
  stats.primal_residual = st.primal_res;
  stats.dual_residual = st.dual_res;

  const double h0 = surrogate_at_zero(a);
  double h = eval_surrogate(s, a, st.xt);
  if (h > h0) {  // inner loop failed to beat the zero step
    st.xt.setZero();
    h = h0;
    stats.safeguard_used = true;
  }
  stats.h_value = h;
  return {std::move(st.xt), std::move(stats)};
}

}  // namespace rsdp
