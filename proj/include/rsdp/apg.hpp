#pragma once

#include <cmath>
#include <vector>

#include "rsdp/surrogate.hpp"
#include "rsdp/types.hpp"

namespace rsdp {

struct ApgOptions {
  double tol = 1e-7;  // projected-gradient norm, relative to 1 + |D|
  int max_iters = 1000;
  double backtrack_factor = 0.5;
  bool restart = true;     // function-value restart of the momentum sequence
  bool warm_start = true;  // reuse the previous outer iteration's z
};

struct ApgStats {
  int iters = 0;
  bool converged = false;
  bool safeguard_used = false;
  double pg_norm = 0.0;
  double h_value = 0.0;
  double d_value = 0.0;
  double duality_residual = 0.0;  // H(X~) - (c_k - D(z))
  int backtrack_violations = 0;   // accepted steps failing the decrease model
  std::vector<double> d_history;  // accepted D values per iteration
};

struct ApgResult {
  Matrix xt;
  Vector z;
  ApgStats stats;
};

struct DualState {
  Vector z, z_prev, y;
  double step = 1.0;
  double d_val = 0.0;
  int iters = 0;
};

namespace detail {

inline Matrix dual_p(const SurrogateAnchor& a, const Vector& z) {
  Matrix p = 0.5 * a.linear;  // (gamma/2) C X_k
  for (Eigen::Index tau = 0; tau < z.size(); ++tau)
    a.qx[static_cast<std::size_t>(tau)].add_scaled(p, z[tau]);
  return p;
}

// D(z) and optionally its gradient; W = B^{-1} P(z) is shared across all
// gradient entries (one solve per evaluation).
inline double dual_eval(const SurrogateStatic& s, const SurrogateAnchor& a,
                        const Vector& z, Vector* grad, Matrix* w_out) {
  const Matrix p = dual_p(a, z);
  const Matrix w = s.b_solve(p);
  const double d = frob_dot(p, w) - 2.0 * a.b.dot(z);
  if (grad) {
    grad->resize(z.size());
    for (Eigen::Index tau = 0; tau < z.size(); ++tau)
      (*grad)[tau] = 2.0 * a.qx[static_cast<std::size_t>(tau)].dot(w) - 2.0 * a.b[tau];
  }
  if (w_out) *w_out = w;
  return d;
}

inline Vector clip_box(Vector z) {
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = std::clamp(z[i], -1.0, 1.0);
  return z;
}

inline void check_box(const Vector& z) {
  for (Eigen::Index i = 0; i < z.size(); ++i)
    if (std::abs(z[i]) > 1.0 + 1e-12)
      throw ContractViolation("dual variable outside [-1, 1] box");
}

}  // namespace detail

/// D(z) = tr(P(z)^T B^{-1} P(z)) - 2 sum b_tau z_tau with
/// P(z) = (sum z_tau Q_tau + (gamma/2) C) X_k.
inline double dual_value(const SurrogateStatic& s, const SurrogateAnchor& a,
                         const Vector& z) {
  require_dims(z.size() == a.b.size(), "dual_value: z has wrong length");
  detail::check_box(z);
  return detail::dual_eval(s, a, z, nullptr, nullptr);
}

/// grad_tau D = 2 tr((Q_tau X_k)^T B^{-1} P(z)) - 2 b_tau.
inline Vector dual_gradient(const SurrogateStatic& s, const SurrogateAnchor& a,
                            const Vector& z) {
  require_dims(z.size() == a.b.size(), "dual_gradient: z has wrong length");
  detail::check_box(z);
  Vector g;
  detail::dual_eval(s, a, z, &g, nullptr);
  return g;
}

/// Minimizes D over the box by accelerated projected gradient with
/// backtracking and (optional) function-value restart, then recovers the
/// primal X~ = -B^{-1} P(z*). `z_warm` seeds the dual variables when
/// warm starts are enabled.
inline ApgResult apg_minimize(const SurrogateStatic& s, const SurrogateAnchor& a,
                              const ApgOptions& opts, const Vector* z_warm = nullptr) {
  require(opts.max_iters >= 1, "apg_minimize: max_iters must be >= 1");
  require(opts.tol > 0.0, "apg_minimize: tol must be positive");
  require(opts.backtrack_factor > 0.0 && opts.backtrack_factor < 1.0,
          "apg_minimize: backtrack_factor must be in (0, 1)");

  const Eigen::Index m = a.b.size();
  ApgStats stats;

  DualState st;
  if (opts.warm_start && z_warm && z_warm->size() == m)
    st.z = detail::clip_box(*z_warm);
  else
    st.z = Vector::Zero(m);
  // coordinates with b_tau = 0 and Q_tau X_k = 0 have identically zero
  // gradient; pin them to the minimum-norm choice
  for (Eigen::Index tau = 0; tau < m; ++tau)
    if (a.b[tau] == 0.0 && a.qx[static_cast<std::size_t>(tau)].squared_norm() == 0.0)
      st.z[tau] = 0.0;
  st.z_prev = st.z;
  st.y = st.z;

  Vector grad_y;
  Matrix w_z;
  st.d_val = detail::dual_eval(s, a, st.z, nullptr, nullptr);
  double t_momentum = 1.0;
  double eta = st.step;

  // one backtracked projected-gradient step from `base`; acceptance allows a
  // roundoff-level slack on the decrease model, strict failures are counted
  const auto take_step = [&](const Vector& base, double d_base, const Vector& g_base,
                             Vector* z_out, double* d_out) {
    eta = std::min(eta * 1.25, 1e12);
    for (;;) {
      Vector cand = detail::clip_box(base - eta * g_base);
      const double d_cand = detail::dual_eval(s, a, cand, nullptr, nullptr);
      const Vector diff = cand - base;
      const double model =
          d_base + g_base.dot(diff) + diff.squaredNorm() / (2.0 * eta);
      if (d_cand <= model + 1e-14 * (1.0 + std::abs(d_base))) {
        if (d_cand > model) ++stats.backtrack_violations;
        *z_out = std::move(cand);
        *d_out = d_cand;
        return;
      }
      eta *= opts.backtrack_factor;
      // the floor only guards infinite loops; divergent outer iterates can
      // push the dual Lipschitz constant arbitrarily high
      if (eta < 1e-30)
        throw NumericalError("apg_minimize: line search failed");
    }
  };

  int it = 0;
  if (m > 0) {
    for (; it < opts.max_iters; ++it) {
      const double d_y = detail::dual_eval(s, a, st.y, &grad_y, nullptr);
      if (!std::isfinite(d_y)) throw NumericalError("apg_minimize: non-finite dual value");

      Vector z_new;
      double d_new = 0.0;
      take_step(st.y, d_y, grad_y, &z_new, &d_new);

      if (opts.restart && d_new > st.d_val) {
        // momentum overshoot: restart the sequence and step from z instead
        t_momentum = 1.0;
        Vector grad_z;
        const double d_z = detail::dual_eval(s, a, st.z, &grad_z, nullptr);
        take_step(st.z, d_z, grad_z, &z_new, &d_new);
      }

      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_momentum * t_momentum));
      st.y = z_new + ((t_momentum - 1.0) / t_next) * (z_new - st.z);
      st.z_prev = st.z;
      st.z = std::move(z_new);
      st.d_val = d_new;
      t_momentum = t_next;
      st.iters = it + 1;
      stats.d_history.push_back(st.d_val);

      Vector grad_z;
      detail::dual_eval(s, a, st.z, &grad_z, &w_z);
      stats.pg_norm = (st.z - detail::clip_box(st.z - grad_z)).norm();
      if (stats.pg_norm <= opts.tol * (1.0 + std::abs(st.d_val))) {
        stats.converged = true;
        break;
      }
    }
    st.step = eta;
    if (w_z.size() == 0) detail::dual_eval(s, a, st.z, nullptr, &w_z);
  } else {
    // no l1 terms: the dual is empty and the primal block is a plain
    // strongly convex quadratic
    w_z = s.b_solve(detail::dual_p(a, st.z));
    stats.converged = true;
  }

  stats.iters = st.iters;
  stats.d_value = st.d_val;

  Matrix xt = -w_z;  // X~ = -B^{-1} P(z*)
  const double h0 = surrogate_at_zero(a);
  double h = eval_surrogate(s, a, xt);
  if (h > h0) {
    xt.setZero();
    h = h0;
    stats.safeguard_used = true;
  }
  stats.h_value = h;
  stats.duality_residual = h - (a.c - st.d_val);
  return {std::move(xt), std::move(st.z), std::move(stats)};
}

}  // namespace rsdp
