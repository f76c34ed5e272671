#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rsdp/applications.hpp"
#include "rsdp/serialize.hpp"
#include "rsdp/solver.hpp"
#include "rsdp/synthetic.hpp"
#include "rsdp/types.hpp"

namespace rsdp {

inline constexpr const char* kReportSchemaVersion = "1";

struct TuningGrid {
  std::vector<double> gammas = {0.1, 1.0, 10.0};
  std::vector<double> lambdas = {1e-3, 1e-2, 1e-1};
};

struct NoiseConfig {
  std::string target = "none";  // none | labels | features
  std::string mode;             // gaussian | flip | small | outliers
  double fraction = 0.1;
  double variance = 5.0;  // gaussian label noise
};

struct GeneratorConfig {
  Eigen::Index n = 100;
  int clusters = 4;         // npkl
  Eigen::Index links = 600; // npkl
  Eigen::Index dims = 5;    // npkl feature dimension
  double separation = 8.0;  // npkl cluster separation
  double feature_noise = 0.5;
  int knn = 8;              // npkl graph / cmvu neighbor count
  int classes = 3;          // cmvu label classes
  Eigen::Index factors = 25;  // spca covariance factors
  double cov_max_eig = 0.1;   // spca covariance spectral norm
};

struct ExperimentConfig {
  std::string problem = "npkl";  // npkl | cmvu | spca | file
  std::string problem_path;
  GeneratorConfig gen;
  NoiseConfig noise;
  std::string solver = "rsdp-apg";  // rsdp-admm | rsdp-apg | squared-gd | convex-oracle
  double gamma = -1.0;   // resolved at parse time; <= 0 for file problems = keep file value
  double lambda = -1.0;
  int rank = 0;          // 0 = auto (largest r with r(r+1) <= m)
  double outer_tol = 1e-5;
  int max_outer = 2000;
  AdmmOptions admm;
  ApgOptions apg;
  std::optional<TuningGrid> tuning;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir;
  bool trace = false;
};

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t v = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  v ^= v >> 30;
  v *= 0xBF58476D1CE4E5B9ULL;
  v ^= v >> 27;
  v *= 0x94D049BB133111EBULL;
  v ^= v >> 31;
  return v;
}

inline constexpr std::uint64_t kSaltSplit = 1;
inline constexpr std::uint64_t kSaltNoise = 2;
inline constexpr std::uint64_t kSaltInit = 3;

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw ConfigError("unknown field '" + key + "' in " + where);
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const Json& j) {
  detail::reject_unknown(j,
                         {"problem", "problem_path", "generator", "noise", "solver",
                          "gamma", "lambda", "rank", "outer", "admm", "apg", "tuning",
                          "seeds", "output_dir", "trace"},
                         "config");
  ExperimentConfig c;
  detail::read_field(j, "problem", c.problem);
  if (c.problem != "npkl" && c.problem != "cmvu" && c.problem != "spca" &&
      c.problem != "file")
    throw ConfigError("problem must be one of npkl, cmvu, spca, file");
  detail::read_field(j, "problem_path", c.problem_path);
  if (c.problem == "file" && c.problem_path.empty())
    throw ConfigError("problem = file requires problem_path");

  if (j.contains("generator")) {
    const Json& g = j["generator"];
    detail::reject_unknown(g,
                           {"n", "clusters", "links", "dims", "separation",
                            "feature_noise", "knn", "classes", "factors"},
                           "generator");
    detail::read_field(g, "n", c.gen.n);
    detail::read_field(g, "clusters", c.gen.clusters);
    detail::read_field(g, "links", c.gen.links);
    detail::read_field(g, "dims", c.gen.dims);
    detail::read_field(g, "separation", c.gen.separation);
    detail::read_field(g, "feature_noise", c.gen.feature_noise);
    detail::read_field(g, "knn", c.gen.knn);
    detail::read_field(g, "classes", c.gen.classes);
    detail::read_field(g, "factors", c.gen.factors);
    if (c.gen.n < 2) throw ConfigError("generator.n must be at least 2");
  }

  if (j.contains("noise")) {
    const Json& nj = j["noise"];
    detail::reject_unknown(nj, {"target", "mode", "fraction", "variance"}, "noise");
    detail::read_field(nj, "target", c.noise.target);
    detail::read_field(nj, "mode", c.noise.mode);
    detail::read_field(nj, "fraction", c.noise.fraction);
    detail::read_field(nj, "variance", c.noise.variance);
    if (c.noise.target != "none" && c.noise.target != "labels" &&
        c.noise.target != "features")
      throw ConfigError("noise.target must be none, labels or features");
    if (c.noise.target == "labels" && c.noise.mode != "gaussian" &&
        c.noise.mode != "flip")
      throw ConfigError("label noise mode must be gaussian or flip");
    if (c.noise.target == "features" && c.noise.mode != "small" &&
        c.noise.mode != "outliers")
      throw ConfigError("feature noise mode must be small or outliers");
    if (c.noise.target != "none" &&
        (c.noise.fraction <= 0.0 || c.noise.fraction >= 1.0))
      throw ConfigError("noise.fraction must lie in (0, 1)");
  }

  detail::read_field(j, "solver", c.solver);
  if (c.solver != "rsdp-admm" && c.solver != "rsdp-apg" && c.solver != "squared-gd" &&
      c.solver != "convex-oracle")
    throw ConfigError("solver must be rsdp-admm, rsdp-apg, squared-gd or convex-oracle");

  detail::read_field(j, "gamma", c.gamma);
  detail::read_field(j, "lambda", c.lambda);
  detail::read_field(j, "rank", c.rank);
  if (c.rank < 0) throw ConfigError("rank must be nonnegative (0 = auto)");

  // per-application defaults when not given
  if (c.gamma <= 0.0 && c.problem != "file")
    c.gamma = c.problem == "cmvu" ? 0.01 : (c.problem == "spca" ? 10.0 : 1.0);
  if (c.lambda <= 0.0 && c.problem != "file")
    c.lambda = c.problem == "npkl" ? 1e-2 : 1e-3;
  if (c.rank == 0 && c.problem == "spca") c.rank = 10;

  if (j.contains("outer")) {
    detail::reject_unknown(j["outer"], {"tol", "max_iters"}, "outer");
    detail::read_field(j["outer"], "tol", c.outer_tol);
    detail::read_field(j["outer"], "max_iters", c.max_outer);
    if (c.outer_tol <= 0.0) throw ConfigError("outer.tol must be positive");
    if (c.max_outer < 1) throw ConfigError("outer.max_iters must be at least 1");
  }
  if (j.contains("admm")) {
    const Json& aj = j["admm"];
    detail::reject_unknown(aj, {"tol", "max_iters", "cg_tol", "rho0", "adaptive_rho"},
                           "admm");
    detail::read_field(aj, "tol", c.admm.tol);
    detail::read_field(aj, "max_iters", c.admm.max_iters);
    detail::read_field(aj, "cg_tol", c.admm.cg_tol);
    detail::read_field(aj, "rho0", c.admm.rho0);
    detail::read_field(aj, "adaptive_rho", c.admm.adaptive_rho);
    if (c.admm.tol <= 0.0 || c.admm.rho0 <= 0.0 || c.admm.max_iters < 1)
      throw ConfigError("invalid admm options");
  }
  if (j.contains("apg")) {
    const Json& pj = j["apg"];
    detail::reject_unknown(
        pj, {"tol", "max_iters", "backtrack_factor", "restart", "warm_start"}, "apg");
    detail::read_field(pj, "tol", c.apg.tol);
    detail::read_field(pj, "max_iters", c.apg.max_iters);
    detail::read_field(pj, "backtrack_factor", c.apg.backtrack_factor);
    detail::read_field(pj, "restart", c.apg.restart);
    detail::read_field(pj, "warm_start", c.apg.warm_start);
    if (c.apg.tol <= 0.0 || c.apg.max_iters < 1 || c.apg.backtrack_factor <= 0.0 ||
        c.apg.backtrack_factor >= 1.0)
      throw ConfigError("invalid apg options");
  }
  if (j.contains("tuning")) {
    TuningGrid grid;
    detail::reject_unknown(j["tuning"], {"gammas", "lambdas"}, "tuning");
    detail::read_field(j["tuning"], "gammas", grid.gammas);
    detail::read_field(j["tuning"], "lambdas", grid.lambdas);
    if (grid.gammas.empty() || grid.lambdas.empty())
      throw ConfigError("tuning grids must be non-empty");
    for (double g : grid.gammas)
      if (g <= 0.0) throw ConfigError("tuning gammas must be positive");
    for (double l : grid.lambdas)
      if (l <= 0.0) throw ConfigError("tuning lambdas must be positive");
    c.tuning = std::move(grid);
  }

  detail::read_field(j, "seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("seeds must be non-empty");
  std::sort(c.seeds.begin(), c.seeds.end());
  if (std::adjacent_find(c.seeds.begin(), c.seeds.end()) != c.seeds.end())
    throw ConfigError("seeds must be distinct");

  detail::read_field(j, "output_dir", c.output_dir);
  detail::read_field(j, "trace", c.trace);
  return c;
}

inline Json experiment_config_to_json(const ExperimentConfig& c) {
  Json j;
  j["problem"] = c.problem;
  if (!c.problem_path.empty()) j["problem_path"] = c.problem_path;
  j["generator"] = Json{{"n", c.gen.n},
                        {"clusters", c.gen.clusters},
                        {"links", c.gen.links},
                        {"dims", c.gen.dims},
                        {"separation", c.gen.separation},
                        {"feature_noise", c.gen.feature_noise},
                        {"knn", c.gen.knn},
                        {"classes", c.gen.classes},
                        {"factors", c.gen.factors}};
  j["noise"] = Json{{"target", c.noise.target},
                    {"mode", c.noise.mode},
                    {"fraction", c.noise.fraction},
                    {"variance", c.noise.variance}};
  j["solver"] = c.solver;
  if (c.gamma > 0.0) j["gamma"] = c.gamma;
  if (c.lambda > 0.0) j["lambda"] = c.lambda;
  j["rank"] = c.rank;
  j["outer"] = Json{{"tol", c.outer_tol}, {"max_iters", c.max_outer}};
  j["admm"] = Json{{"tol", c.admm.tol},
                   {"max_iters", c.admm.max_iters},
                   {"cg_tol", c.admm.cg_tol},
                   {"rho0", c.admm.rho0},
                   {"adaptive_rho", c.admm.adaptive_rho}};
  j["apg"] = Json{{"tol", c.apg.tol},
                  {"max_iters", c.apg.max_iters},
                  {"backtrack_factor", c.apg.backtrack_factor},
                  {"restart", c.apg.restart},
                  {"warm_start", c.apg.warm_start}};
  if (c.tuning)
    j["tuning"] = Json{{"gammas", c.tuning->gammas}, {"lambdas", c.tuning->lambdas}};
  j["seeds"] = c.seeds;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  j["trace"] = c.trace;
  return j;
}

struct ExperimentResult {
  Json aggregate;
  std::vector<Json> per_seed;
  int failures = 0;
};

namespace detail {

struct SeedInstance {
  SdpProblem train;                    // noise applied
  std::vector<ConstraintTerm> val;     // clean targets
  std::vector<ConstraintTerm> test;    // clean targets
  Matrix spca_sigma;                   // spca only
};

inline std::vector<std::size_t> split_indices(std::size_t m, double lo, double hi,
                                              const std::vector<std::size_t>& perm) {
  const auto a = static_cast<std::size_t>(std::llround(lo * double(m)));
  const auto b = static_cast<std::size_t>(std::llround(hi * double(m)));
  return {perm.begin() + a, perm.begin() + b};
}

inline SeedInstance build_seed_instance(const ExperimentConfig& c, std::uint64_t seed) {
  ProblemOptions quiet;
  quiet.symmetrize_inputs = true;
  quiet.warn_noncoercive = false;

  if (c.problem == "npkl") {
    PlantedNpklParams params;
    params.n = c.gen.n;
    params.clusters = c.gen.clusters;
    params.links = c.gen.links;
    params.dims = c.gen.dims;
    params.separation = c.gen.separation;
    params.feature_noise = c.gen.feature_noise;
    params.knn = c.gen.knn;
    params.gamma = c.gamma;
    params.lambda = c.lambda;
    PlantedNpkl planted = make_planted_npkl(params, seed);

    const std::size_t m = planted.spec.links.size();
    if (m < 5) throw ConfigError("npkl: need at least 5 links to split 20/20/60");
    Rng split_rng(derive_seed(seed, kSaltSplit));
    const auto perm = split_rng.permutation(m);
    const auto pick_links = [&](double lo, double hi) {
      NpklSpec s = planted.spec;
      s.links.clear();
      for (std::size_t idx : split_indices(m, lo, hi, perm))
        s.links.push_back(planted.spec.links[idx]);
      s.rank = c.rank;
      return s;
    };

    SeedInstance inst{build_npkl(pick_links(0.0, 0.2), quiet),
                      build_npkl(pick_links(0.2, 0.4), quiet).terms(),
                      build_npkl(pick_links(0.4, 1.0), quiet).terms(),
                      {}};
    if (c.noise.target == "labels") {
      LabelNoise noise;
      noise.mode = c.noise.mode == "flip" ? LabelNoise::Mode::flip
                                          : LabelNoise::Mode::gaussian;
      noise.fraction = c.noise.fraction;
      noise.variance = c.noise.variance;
      inst.train = inject_label_noise(inst.train, noise, derive_seed(seed, kSaltNoise));
    }
    return inst;
  }

  if (c.problem == "cmvu") {
    ManifoldCmvuParams params;
    params.n = c.gen.n;
    params.classes = c.gen.classes;
    params.knn = c.gen.knn;
    params.gamma = c.gamma;
    params.lambda = c.lambda;
    ManifoldCmvu data = make_manifold_cmvu(params, seed);

    Matrix train_points = data.clean_points;
    if (c.noise.target == "features") {
      FeatureNoise noise;
      noise.mode = c.noise.mode == "outliers" ? FeatureNoise::Mode::outliers
                                              : FeatureNoise::Mode::small;
      noise.fraction = c.noise.fraction;
      train_points =
          inject_feature_noise(data.clean_points, noise, derive_seed(seed, kSaltNoise));
    }

    const std::size_t m = data.neighbor_pairs.size();
    if (m < 5) throw ConfigError("cmvu: need at least 5 neighbor pairs to split");
    Rng split_rng(derive_seed(seed, kSaltSplit));
    const auto perm = split_rng.permutation(m);
    const auto pick_pairs = [&](double lo, double hi) {
      std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
      for (std::size_t idx : split_indices(m, lo, hi, perm))
        pairs.push_back(data.neighbor_pairs[idx]);
      return pairs;
    };

    // train on (possibly noisy) feature distances, evaluate against
    // noiseless distances on held-out pairs
    return {build_cmvu(cmvu_spec_for(data, train_points, pick_pairs(0.0, 0.2), c.rank),
                       quiet),
            build_cmvu(cmvu_spec_for(data, data.clean_points, pick_pairs(0.2, 0.4)),
                       quiet)
                .terms(),
            build_cmvu(cmvu_spec_for(data, data.clean_points, pick_pairs(0.4, 1.0)),
                       quiet)
                .terms(),
            {}};
  }

  if (c.problem == "spca") {
    SpcaSpec spec;
    spec.sigma = make_random_covariance(c.gen.n, c.gen.factors, seed);
    spec.gamma = c.gamma;
    spec.lambda = c.lambda;
    spec.rank = c.rank > 0 ? c.rank : 10;
    return {build_spca(spec, quiet), {}, {}, spec.sigma};
  }

  // problem == "file": solve as-is, report the residual over all terms
  SdpProblem p = problem_from_json(load_json_file(c.problem_path));
  if (c.gamma > 0.0 || c.lambda > 0.0)
    p = p.with_hyperparameters(c.gamma > 0.0 ? c.gamma : p.gamma(),
                               c.lambda > 0.0 ? c.lambda : p.lambda());
  if (c.rank > 0) p = p.with_rank(std::min<Eigen::Index>(c.rank, p.n()));
  std::vector<ConstraintTerm> all = p.terms();
  return {std::move(p), {}, std::move(all), {}};
}

inline double rmse_at_z(const std::vector<ConstraintTerm>& terms, const Matrix& z) {
  require(!terms.empty(), "rmse_at_z: term list is empty");
  double acc = 0.0;
  for (const ConstraintTerm& term : terms) {
    double tz = 0.0;
    for (int k = 0; k < term.q.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(term.q, k); it; ++it)
        tz += it.value() * z(it.col(), it.row());
    acc += (tz - term.t) * (tz - term.t);
  }
  return std::sqrt(acc / static_cast<double>(terms.size()));
}

struct SolveOutcome {
  Matrix x;          // empty for convex-oracle
  Matrix z;          // convex-oracle only
  double objective = 0.0;
  std::size_t iterations = 0;
  std::string termination;
  double wall_ms = 0.0;
  SolveReport report;  // factored solvers only
  bool has_report = false;
};

inline SolveOutcome run_solver(const ExperimentConfig& c, const SdpProblem& problem,
                               std::uint64_t seed) {
  SolveOutcome out;
  const auto t0 = std::chrono::steady_clock::now();
  if (c.solver == "convex-oracle") {
    ConvexOracleResult res = convex_l1_oracle(problem);
    out.z = std::move(res.z);
    out.objective = res.objective;
    out.iterations = static_cast<std::size_t>(res.iters);
    out.termination = res.converged ? "tolerance" : "max_iters";
  } else {
    SolveOptions opts;
    opts.outer_tol = c.outer_tol;
    opts.max_outer = c.max_outer;
    opts.admm = c.admm;
    opts.apg = c.apg;
    opts.seed = derive_seed(seed, kSaltInit);
    SolveReport report;
    if (c.solver == "squared-gd") {
      report = squared_loss_baseline(problem, opts);
    } else {
      opts.inner = c.solver == "rsdp-admm" ? InnerSolver::admm : InnerSolver::apg;
      report = solve(problem, opts);
    }
    out.x = report.final_x;
    out.objective = report.final_objective;
    out.iterations = report.step_norms.size();
    out.termination = to_string(report.termination);
    out.report = std::move(report);
    out.has_report = true;
  }
  out.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

}  // namespace detail

/// Runs the configured experiment over all seeds: generate or ingest the
/// problem, inject noise, split 20/20/60 (train/validation/test) where the
/// protocol defines splits, tune on the validation set when a grid is given,
/// solve, and aggregate test metrics as mean and standard deviation. Per-seed
/// failures are recorded; the aggregate covers the successful seeds.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  ExperimentResult result;
  if (!config.output_dir.empty()) fs::create_directories(config.output_dir);

  const bool has_split = config.problem == "npkl" || config.problem == "cmvu";
  std::vector<Json> rows;

  for (std::uint64_t seed : config.seeds) {  // seeds are sorted at parse time
    Json row;
    row["seed"] = seed;
    try {
      detail::SeedInstance inst = detail::build_seed_instance(config, seed);

      double best_gamma = inst.train.gamma(), best_lambda = inst.train.lambda();
      if (config.tuning && has_split) {
        double best_rmse = std::numeric_limits<double>::infinity();
        for (double g : config.tuning->gammas) {
          for (double l : config.tuning->lambdas) {
            const SdpProblem candidate = inst.train.with_hyperparameters(g, l);
            const detail::SolveOutcome tuned = detail::run_solver(config, candidate, seed);
            const double val_rmse = tuned.has_report
                                        ? eval_rmse(inst.val, tuned.x)
                                        : detail::rmse_at_z(inst.val, tuned.z);
            if (val_rmse < best_rmse) {
              best_rmse = val_rmse;
              best_gamma = g;
              best_lambda = l;
            }
          }
        }
        inst.train = inst.train.with_hyperparameters(best_gamma, best_lambda);
      }

      const detail::SolveOutcome out = detail::run_solver(config, inst.train, seed);
      row["gamma"] = best_gamma;
      row["lambda"] = best_lambda;
      row["rank"] = inst.train.r();
      row["objective"] = out.objective;
      row["iterations"] = out.iterations;
      row["termination"] = out.termination;
      if (config.problem == "spca") {
        Matrix component = out.x;
        if (component.size() == 0) {
          Eigen::SelfAdjointEigenSolver<Matrix> es(out.z);
          component = es.eigenvectors().col(inst.train.n() - 1);
        }
        const SpcaMetrics mets = spca_metrics(inst.spca_sigma, component);
        row["f_value"] = out.objective;
        row["sparsity"] = mets.sparsity;
        row["explained_variance"] = mets.explained_variance;
      } else if (!inst.test.empty()) {
        row["rmse"] = out.has_report ? eval_rmse(inst.test, out.x)
                                     : detail::rmse_at_z(inst.test, out.z);
      }

      if (!config.output_dir.empty()) {
        Json seed_file = row;
        seed_file["wall_ms"] = out.wall_ms;
        if (out.has_report) seed_file["report"] = report_to_json(out.report);
        write_text_file(
            (fs::path(config.output_dir) / ("seed_" + std::to_string(seed) + ".json"))
                .string(),
            seed_file.dump(2) + "\n");
        if (config.trace && out.has_report)
          emit_trace_plot_data(out.report,
                               (fs::path(config.output_dir) /
                                ("trace_seed_" + std::to_string(seed) + ".csv"))
                                   .string());
      }
    } catch (const ConfigError&) {
      throw;  // configuration problems abort the whole experiment
    } catch (const std::exception& err) {
      row["error"] = err.what();
      ++result.failures;
    }
    rows.push_back(std::move(row));
  }

  // aggregate over successful seeds, in seed order
  const auto metric_keys = config.problem == "spca"
                               ? std::vector<std::string>{"f_value", "sparsity",
                                                          "explained_variance"}
                               : std::vector<std::string>{"rmse"};
  Json summary;
  for (const std::string& key : metric_keys) {
    std::vector<double> values;
    for (const Json& row : rows)
      if (row.contains(key)) values.push_back(row[key].get<double>());
    if (values.empty()) continue;
    const double mean =
        std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double stddev =
        values.size() > 1 ? std::sqrt(var / double(values.size() - 1)) : 0.0;
    summary[key] = Json{{"mean", mean}, {"std", stddev}, {"count", values.size()}};
  }

  result.aggregate = Json{{"schema_version", kReportSchemaVersion},
                          {"config", experiment_config_to_json(config)},
                          {"per_seed", rows},
                          {"summary", summary},
                          {"failures", result.failures}};
  result.per_seed = std::move(rows);

  if (!config.output_dir.empty())
    write_text_file((fs::path(config.output_dir) / "aggregate.json").string(),
                    result.aggregate.dump(2) + "\n");
  return result;
}

}  // namespace rsdp
