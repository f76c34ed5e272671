#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rsdp/problem.hpp"
#include "rsdp/solver.hpp"
#include "rsdp/types.hpp"

namespace rsdp {

using Json = nlohmann::json;

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw ConfigError("matrix: expected a 2-D array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols)
      throw ConfigError("matrix: ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline Json triplets_to_json(const SparseMatrix& q) {
  Json arr = Json::array();
  for (int k = 0; k < q.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(q, k); it; ++it)
      arr.push_back(Json::array({it.row(), it.col(), it.value()}));
  return arr;
}

inline SparseMatrix triplets_from_json(const Json& arr, Eigen::Index n) {
  std::vector<Triplet> trips;
  for (const auto& entry : arr) {
    if (!entry.is_array() || entry.size() != 3)
      throw ConfigError("sparse matrix: each triplet must be [row, col, value]");
    const auto i = entry[0].get<Eigen::Index>();
    const auto j = entry[1].get<Eigen::Index>();
    if (i < 0 || i >= n || j < 0 || j >= n)
      throw ConfigError("sparse matrix: triplet index out of range");
    trips.emplace_back(i, j, entry[2].get<double>());
  }
  SparseMatrix q(n, n);
  q.setFromTriplets(trips.begin(), trips.end());
  q.makeCompressed();
  return q;
}

}  // namespace detail

/// Problem document: {n, r, gamma, lambda, A, terms: [{q: triplets, t}]}.
/// A is either a dense 2-D array or {"triplets": [[i, j, v], ...]}.
inline Json problem_to_json(const SdpProblem& p) {
  Json j;
  j["n"] = p.n();
  j["r"] = p.r();
  j["gamma"] = p.gamma();
  j["lambda"] = p.lambda();
  j["A"] = detail::matrix_to_json(p.a());
  Json terms = Json::array();
  for (const ConstraintTerm& term : p.terms())
    terms.push_back(Json{{"q", detail::triplets_to_json(term.q)}, {"t", term.t}});
  j["terms"] = std::move(terms);
  return j;
}

/// Sparse triplets are interpreted as the raw matrix and symmetrized on load.
inline SdpProblem problem_from_json(const Json& j) {
  for (const char* key : {"n", "r", "gamma", "lambda", "A", "terms"})
    if (!j.contains(key)) throw ConfigError(std::string("problem: missing field ") + key);
  const auto n = j["n"].get<Eigen::Index>();
  const auto r = j["r"].get<Eigen::Index>();
  if (n < 1) throw ConfigError("problem: n must be positive");

  Matrix a;
  if (j["A"].is_object() && j["A"].contains("triplets"))
    a = Matrix(detail::triplets_from_json(j["A"]["triplets"], n));
  else
    a = detail::matrix_from_json(j["A"]);
  if (a.rows() != n || a.cols() != n) throw ConfigError("problem: A must be n x n");

  std::vector<TermInput> terms;
  if (!j["terms"].is_array()) throw ConfigError("problem: terms must be an array");
  for (const auto& tj : j["terms"]) {
    if (!tj.contains("q") || !tj.contains("t"))
      throw ConfigError("problem: each term needs q and t");
    terms.push_back(
        {detail::triplets_from_json(tj["q"], n), tj["t"].get<double>(), false, {}});
  }

  ProblemOptions opts;
  opts.symmetrize_inputs = true;
  try {
    return SdpProblem::make(n, r, std::move(terms), std::move(a),
                            j["gamma"].get<double>(), j["lambda"].get<double>(), opts);
  } catch (const std::invalid_argument& err) {
    throw ConfigError(std::string("problem: ") + err.what());
  }
}

inline Json report_to_json(const SolveReport& report) {
  Json j;
  j["termination"] = to_string(report.termination);
  j["outer_iterations"] = report.step_norms.size();
  j["final_objective"] = report.final_objective;
  j["objective_trace"] = report.objective_trace;
  j["step_norms"] = report.step_norms;
  j["decrease_ratios"] = report.decrease_ratios;  // NaN serializes as null
  Json inner = Json::array();
  for (const InnerSummary& s : report.inner_stats)
    inner.push_back(Json{{"iters", s.iters},
                         {"residual", s.residual},
                         {"converged", s.converged},
                         {"safeguard_used", s.safeguard_used},
                         {"solver", s.solver},
                         {"wall_ms", s.wall_ms}});
  j["inner"] = std::move(inner);
  j["final_x"] = detail::matrix_to_json(report.final_x);
  return j;
}

/// Iteration trace as CSV for external plotting. Row 0 carries the initial
/// objective; the remaining columns of that row are empty.
inline std::string trace_to_csv(const SolveReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "iter,objective,step_norm,decrease_ratio,inner_iters,inner_solver,wall_time_ms\n";
  if (report.objective_trace.empty()) return out.str();
  out << "0," << report.objective_trace[0] << ",,,,,\n";
  for (std::size_t k = 0; k < report.step_norms.size(); ++k) {
    out << (k + 1) << ',' << report.objective_trace[k + 1] << ','
        << report.step_norms[k] << ',';
    if (!std::isnan(report.decrease_ratios[k])) out << report.decrease_ratios[k];
    out << ',' << report.inner_stats[k].iters << ',' << report.inner_stats[k].solver
        << ',' << report.inner_stats[k].wall_ms << '\n';
  }
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void emit_trace_plot_data(const SolveReport& report, const std::string& path) {
  write_text_file(path, trace_to_csv(report));
}

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open: " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& err) {
    throw ConfigError(std::string("invalid JSON in ") + path + ": " + err.what());
  }
  return j;
}

}  // namespace rsdp
