#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "rsdp/applications.hpp"
#include "rsdp/random.hpp"
#include "rsdp/types.hpp"

namespace rsdp {

namespace detail {

/// Unnormalized Laplacian of a symmetrized k-NN similarity graph with a
/// Gaussian kernel; bandwidth is the mean k-NN distance.
inline Matrix knn_laplacian(const Matrix& features, int knn) {
  const Eigen::Index n = features.rows();
  const int k = std::min<int>(knn, static_cast<int>(n) - 1);
  Matrix dist2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      dist2(i, j) = (features.row(i) - features.row(j)).squaredNorm();

  double bandwidth = 0.0;
  std::vector<std::vector<Eigen::Index>> nearest(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Eigen::Index> order;
    order.reserve(static_cast<std::size_t>(n) - 1);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        return dist2(i, a) != dist2(i, b) ? dist2(i, a) < dist2(i, b)
                                                          : a < b;
                      });
    order.resize(static_cast<std::size_t>(k));
    for (Eigen::Index j : order) bandwidth += std::sqrt(dist2(i, j));
    nearest[static_cast<std::size_t>(i)] = std::move(order);
  }
  bandwidth /= static_cast<double>(n * k);
  if (bandwidth <= 0.0) bandwidth = 1.0;

  Matrix w = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j : nearest[static_cast<std::size_t>(i)]) {
      const double wij = std::exp(-dist2(i, j) / (2.0 * bandwidth * bandwidth));
      w(i, j) = std::max(w(i, j), wij);
      w(j, i) = w(i, j);
    }
  Matrix lap = -w;
  for (Eigen::Index i = 0; i < n; ++i) lap(i, i) = w.row(i).sum();
  return lap;
}

inline std::vector<std::pair<Eigen::Index, Eigen::Index>> knn_pairs(
    const Matrix& points, int knn) {
  const Eigen::Index n = points.rows();
  const int k = std::min<int>(knn, static_cast<int>(n) - 1);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<std::pair<double, Eigen::Index>> order;
    order.reserve(static_cast<std::size_t>(n) - 1);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i)
        order.emplace_back((points.row(i) - points.row(j)).squaredNorm(), j);
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    for (int l = 0; l < k; ++l) {
      const Eigen::Index j = order[static_cast<std::size_t>(l)].second;
      pairs.emplace_back(std::min(i, j), std::max(i, j));
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Planted kernel-learning instances
// ---------------------------------------------------------------------------

struct PlantedNpklParams {
  Eigen::Index n = 100;
  int clusters = 4;
  Eigen::Index links = 600;  // sampled distinct unordered pairs
  Eigen::Index dims = 5;
  double separation = 8.0;
  double feature_noise = 0.5;
  int knn = 8;
  double gamma = 1.0;
  double lambda = 1e-2;
};

struct PlantedNpkl {
  NpklSpec spec;  // all links with clean cluster-consistent labels
  std::vector<int> assignments;
  Matrix features;
};

/// Clustered points with links labeled by cluster co-membership; the planted
/// factor X* (one-hot memberships) fits every clean label exactly, so ground
/// truth is available for recovery checks.
inline PlantedNpkl make_planted_npkl(const PlantedNpklParams& params,
                                     std::uint64_t seed) {
  require(params.n >= 4 && params.clusters >= 2, "make_planted_npkl: too small");
  require(params.clusters <= static_cast<int>(params.n),
          "make_planted_npkl: more clusters than points");
  Rng rng(seed);

  PlantedNpkl out;
  out.assignments.resize(static_cast<std::size_t>(params.n));
  for (Eigen::Index i = 0; i < params.n; ++i)
    out.assignments[static_cast<std::size_t>(i)] =
        static_cast<int>(i) % params.clusters;

  const Eigen::Index d = std::max<Eigen::Index>(params.dims, 1);
  Matrix centers = Matrix::Zero(params.clusters, d);
  for (int c = 0; c < params.clusters; ++c)
    centers(c, static_cast<Eigen::Index>(c) % d) =
        params.separation * (1.0 + static_cast<double>(c / static_cast<int>(d)));

  out.features = Matrix::Zero(params.n, d);
  for (Eigen::Index i = 0; i < params.n; ++i)
    out.features.row(i) =
        centers.row(out.assignments[static_cast<std::size_t>(i)]) +
        params.feature_noise * rng.gaussian_matrix(1, d);

  std::vector<std::pair<Eigen::Index, Eigen::Index>> all_pairs;
  all_pairs.reserve(static_cast<std::size_t>(params.n * (params.n - 1) / 2));
  for (Eigen::Index i = 0; i < params.n; ++i)
    for (Eigen::Index j = i + 1; j < params.n; ++j) all_pairs.emplace_back(i, j);
  const std::size_t m =
      std::min<std::size_t>(static_cast<std::size_t>(params.links), all_pairs.size());

  out.spec.n = params.n;
  out.spec.gamma = params.gamma;
  out.spec.lambda = params.lambda;
  out.spec.laplacian = detail::knn_laplacian(out.features, params.knn);
  for (std::size_t idx : rng.pick(all_pairs.size(), m)) {
    const auto [i, j] = all_pairs[idx];
    const double label = out.assignments[static_cast<std::size_t>(i)] ==
                                 out.assignments[static_cast<std::size_t>(j)]
                             ? 1.0
                             : 0.0;
    out.spec.links.push_back({i, j, label});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic 2-D manifold for unfolding
// ---------------------------------------------------------------------------

struct ManifoldCmvuParams {
  Eigen::Index n = 150;
  int classes = 3;
  int knn = 6;
  double gamma = 0.01;
  double lambda = 1e-3;
};

struct ManifoldCmvu {
  Matrix clean_points;  // n x 3 swiss-roll samples
  std::vector<std::pair<Eigen::Index, Eigen::Index>> neighbor_pairs;  // from clean data
  Matrix label_kernel;  // one-hot class kernel Y Y^T
  std::vector<int> classes;
  double gamma = 0.01;
  double lambda = 1e-3;
};

/// Swiss-roll samples (a 2-D manifold in 3-D), neighbor pairs from the clean
/// points, and a class kernel from arc-length segments.
inline ManifoldCmvu make_manifold_cmvu(const ManifoldCmvuParams& params,
                                       std::uint64_t seed) {
  require(params.n >= 8 && params.classes >= 1, "make_manifold_cmvu: too small");
  Rng rng(seed);

  ManifoldCmvu out;
  out.gamma = params.gamma;
  out.lambda = params.lambda;
  out.clean_points = Matrix::Zero(params.n, 3);
  out.classes.resize(static_cast<std::size_t>(params.n));
  const double t_lo = 1.5 * std::numbers::pi, t_hi = 4.5 * std::numbers::pi;
  for (Eigen::Index i = 0; i < params.n; ++i) {
    const double t = t_lo + (t_hi - t_lo) * rng.uniform();
    const double h = 10.0 * rng.uniform();
    out.clean_points(i, 0) = t * std::cos(t) / t_hi;
    out.clean_points(i, 1) = h / 5.0;
    out.clean_points(i, 2) = t * std::sin(t) / t_hi;
    const int cls = std::min(params.classes - 1,
                             static_cast<int>((t - t_lo) / (t_hi - t_lo) *
                                              static_cast<double>(params.classes)));
    out.classes[static_cast<std::size_t>(i)] = cls;
  }

  Matrix y = Matrix::Zero(params.n, params.classes);
  for (Eigen::Index i = 0; i < params.n; ++i)
    y(i, out.classes[static_cast<std::size_t>(i)]) = 1.0;
  out.label_kernel = y * y.transpose();

  out.neighbor_pairs = detail::knn_pairs(out.clean_points, params.knn);
  return out;
}

/// CmvuSpec for given points (e.g. noisy ones) restricted to a subset
/// of the generated neighbor pairs.
inline CmvuSpec cmvu_spec_for(const ManifoldCmvu& data, const Matrix& points,
                              std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs,
                              Eigen::Index rank = 0) {
  CmvuSpec spec;
  spec.points = points;
  spec.neighbor_pairs = std::move(pairs);
  spec.label_kernel = data.label_kernel;
  spec.gamma = data.gamma;
  spec.lambda = data.lambda;
  spec.rank = rank;
  return spec;
}

// ---------------------------------------------------------------------------
// Random covariances for sparse PCA
// ---------------------------------------------------------------------------

/// Wishart-style covariance G G^T / f. When max_eigenvalue > 0 the result is
/// rescaled to that spectral norm; the factored sparse-PCA objective is
/// bounded below only while gamma * lambda_max(Sigma) / 2 < 1, so experiment
/// instances keep the eigenvalues well under 2 / gamma.
inline Matrix make_random_covariance(Eigen::Index n, Eigen::Index factors,
                                     std::uint64_t seed, double max_eigenvalue = 0.0) {
  require(n >= 1 && factors >= 1, "make_random_covariance: bad dimensions");
  Rng rng(seed);
  const Matrix g = rng.gaussian_matrix(n, factors);
  Matrix sigma = symmetrize(Matrix(g * g.transpose() / static_cast<double>(factors)));
  if (max_eigenvalue > 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sigma, Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().maxCoeff();
    if (top > 0.0) sigma *= max_eigenvalue / top;
  }
  return sigma;
}

}  // namespace rsdp
