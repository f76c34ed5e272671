#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rsdp/admm.hpp"
#include "rsdp/apg.hpp"
#include "rsdp/random.hpp"
#include "rsdp/surrogate.hpp"
#include "rsdp/types.hpp"

namespace rsdp {

enum class InnerSolver { admm, apg };
enum class Termination { tolerance, max_iters, stalled };

inline const char* to_string(InnerSolver s) {
  return s == InnerSolver::admm ? "admm" : "apg";
}
inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::tolerance: return "tolerance";
    case Termination::max_iters: return "max_iters";
    default: return "stalled";
  }
}

struct InitSpec {
  enum class Kind { zero, gaussian, given };
  Kind kind = Kind::gaussian;
  double scale = -1.0;  // <= 0: use 1/sqrt(n r)
  Matrix x0;            // for Kind::given

  static InitSpec zero() { return {Kind::zero, 0.0, {}}; }
  static InitSpec gaussian(double s = -1.0) { return {Kind::gaussian, s, {}}; }
  static InitSpec given(Matrix x) { return {Kind::given, 0.0, std::move(x)}; }
};

struct SolveOptions {
  InnerSolver inner = InnerSolver::apg;
  double outer_tol = 1e-5;  // relative objective change
  int max_outer = 2000;
  InitSpec init;
  std::uint64_t seed = 0;
  AdmmOptions admm;
  ApgOptions apg;
};

struct InnerSummary {
  int iters = 0;
  double residual = 0.0;  // solver-specific: combined ADMM residual / APG pg norm
  bool converged = false;
  bool safeguard_used = false;
  std::string solver;
  double wall_ms = 0.0;
};

struct SolveReport {
  std::vector<double> objective_trace;  // R(X_1) ... R(X_K)
  std::vector<double> step_norms;
  // (R(X_k) - R(X_{k+1})) / ||X_{k+1} - X_k||^2; NaN where the step norm
  // is below 1e-12 and the ratio is not recorded
  std::vector<double> decrease_ratios;
  std::vector<InnerSummary> inner_stats;
  Termination termination = Termination::max_iters;
  Matrix final_x;
  double final_objective = 0.0;
};

/// Inner-solver failure; carries whatever progress was made.
struct SolverAborted : NumericalError {
  SolverAborted(const std::string& msg, SolveReport partial_report)
      : NumericalError(msg), partial(std::move(partial_report)) {}
  SolveReport partial;
};

namespace detail {

inline Matrix initial_x(const SdpProblem& problem, const InitSpec& init,
                        std::uint64_t seed) {
  const Eigen::Index n = problem.n(), r = problem.r();
  switch (init.kind) {
    case InitSpec::Kind::zero:
      return Matrix::Zero(n, r);
    case InitSpec::Kind::given:
      require_dims(init.x0.rows() == n && init.x0.cols() == r,
                   "solve: init matrix must be n x r");
      return init.x0;
    case InitSpec::Kind::gaussian:
    default: {
      const double scale =
          init.scale > 0.0 ? init.scale : 1.0 / std::sqrt(double(n) * double(r));
      Rng rng(seed);
      return rng.gaussian_matrix(n, r, scale);
    }
  }
}

}  // namespace detail

/// The outer majorization-minimization loop: anchor the surrogate at X_k,
/// minimize it with the chosen inner solver, step X_{k+1} = X_k + X~, stop on
/// relative objective change below outer_tol (or max_outer / stall).
/// The surrogate safeguard makes the objective trace nonincreasing.
inline SolveReport solve(const SdpProblem& problem, const SolveOptions& opts) {
  require(opts.outer_tol > 0.0, "solve: outer_tol must be positive");
  require(opts.max_outer >= 1, "solve: max_outer must be >= 1");

  const SurrogateStatic stat = build_static(problem);
  Iterate it = make_iterate(problem, detail::initial_x(problem, opts.init, opts.seed));

  SolveReport report;
  report.objective_trace.push_back(it.objective);

  Vector z_warm;  // APG duals carried across outer iterations
  int stall_count = 0;

  for (int k = 0; k < opts.max_outer; ++k) {
    const SurrogateAnchor anc = anchor(stat, problem, it);

    Matrix xt;
    InnerSummary summary;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (opts.inner == InnerSolver::admm) {
        AdmmResult res = admm_minimize(stat, anc, opts.admm);
        xt = std::move(res.xt);
        summary = {res.stats.iters,
                   std::sqrt(res.stats.primal_residual * res.stats.primal_residual +
                             res.stats.dual_residual * res.stats.dual_residual),
                   res.stats.converged, res.stats.safeguard_used, "admm", 0.0};
      } else {
        ApgResult res = apg_minimize(stat, anc, opts.apg,
                                     opts.apg.warm_start ? &z_warm : nullptr);
        z_warm = std::move(res.z);
        xt = std::move(res.xt);
        summary = {res.stats.iters, res.stats.pg_norm, res.stats.converged,
                   res.stats.safeguard_used, "apg", 0.0};
      }
    } catch (const NumericalError& err) {
      report.final_x = it.x;
      report.final_objective = it.objective;
      throw SolverAborted(std::string("inner solver failed at outer iteration ") +
                              std::to_string(k + 1) + ": " + err.what(),
                          std::move(report));
    }
    summary.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();

    Iterate next = make_iterate(problem, it.x + xt);
    if (!std::isfinite(next.objective)) {
      report.final_x = it.x;
      report.final_objective = it.objective;
      throw SolverAborted("non-finite objective", std::move(report));
    }
    if (next.objective > it.objective) {
      // the surrogate guarantees descent in exact arithmetic; treat a
      // roundoff-level increase as a null step
      xt.setZero();
      next = it;
    }

    const double step = xt.norm();
    const double decrease = it.objective - next.objective;
    report.objective_trace.push_back(next.objective);
    report.step_norms.push_back(step);
    report.decrease_ratios.push_back(
        step >= 1e-12 ? decrease / (step * step)
                      : std::numeric_limits<double>::quiet_NaN());
    report.inner_stats.push_back(std::move(summary));

    const double rel_change = std::abs(decrease) / (1.0 + std::abs(it.objective));
    it = std::move(next);

    if (rel_change < opts.outer_tol) {
      report.termination = Termination::tolerance;
      break;
    }
    if (step < 1e-14) {
      if (++stall_count >= 3) {
        report.termination = Termination::stalled;
        break;
      }
    } else {
      stall_count = 0;
    }
    if (k + 1 == opts.max_outer) report.termination = Termination::max_iters;
  }

  report.final_x = it.x;
  report.final_objective = it.objective;
  return report;
}

/// True iff every recorded step achieved the strong-convexity decrease
/// R(X_k) - R(X_{k+1}) >= (lambda/2)(1 - slack) ||dX||^2. A roundoff floor of
/// 1e-12 (1 + |R|) absorbs cancellation in the objective difference.
inline bool check_sufficient_decrease(const SolveReport& report, double lambda,
                                      double slack = 0.1) {
  for (std::size_t k = 0; k < report.step_norms.size(); ++k) {
    const double ratio = report.decrease_ratios[k];
    if (std::isnan(ratio)) continue;
    const double step = report.step_norms[k];
    const double decrease = report.objective_trace[k] - report.objective_trace[k + 1];
    const double floor = 1e-12 * (1.0 + std::abs(report.objective_trace[k]));
    if (decrease + floor < 0.5 * lambda * (1.0 - slack) * step * step) return false;
  }
  return true;
}

/// ||X~*|| / (1 + ||x||) for one tightly solved extra surrogate step at x;
/// zero exactly when x is a fixed point of the MM map.
inline double stationarity_residual(const SdpProblem& problem, const Matrix& x,
                                    const SurrogateStatic& stat) {
  if (!all_finite(x)) throw NumericalError("stationarity_residual: non-finite input");
  const Iterate it = make_iterate(problem, x);
  const SurrogateAnchor anc = anchor(stat, problem, it);
  ApgOptions tight;
  tight.tol = 1e-10;
  tight.max_iters = 20000;
  const ApgResult res = apg_minimize(stat, anc, tight);
  return res.xt.norm() / (1.0 + x.norm());
}

}  // namespace rsdp
