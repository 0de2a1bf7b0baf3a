#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace conml {

namespace detail {

inline int count_labels(std::span<const int> labels) {
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("cluster labels must be non-negative");
    k = std::max(k, l + 1);
  }
  return k;
}

inline void check_clusters(Eigen::Index rows, std::span<const int> labels, int k) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw std::invalid_argument("cluster metrics: one label per point required");
  }
  std::vector<int> present(static_cast<std::size_t>(k), 0);
  int distinct = 0;
  for (int l : labels) distinct += present[static_cast<std::size_t>(l)]++ == 0;
  if (distinct < 2) throw std::invalid_argument("cluster metrics need at least 2 clusters");
  if (distinct != k) throw std::invalid_argument("cluster labels must be contiguous from 0");
}

}  // namespace detail

/// Mean silhouette coefficient under Euclidean distance. Points alone in
/// their cluster score 0.
template <typename Derived>
typename Derived::Scalar silhouette_score(const Eigen::MatrixBase<Derived>& x,
                                          std::span<const int> labels) {
  using S = typename Derived::Scalar;
  const int k = detail::count_labels(labels);
  detail::check_clusters(x.rows(), labels, k);
  const Eigen::Index n = x.rows();
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  S total(0);
  std::vector<S> sums(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), S(0));
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) sums[static_cast<std::size_t>(labels[j])] += (x.row(i) - x.row(j)).norm();
    }
    const int own = labels[i];
    const Eigen::Index own_size = sizes[static_cast<std::size_t>(own)];
    if (own_size < 2) continue;
    const S a = sums[static_cast<std::size_t>(own)] / S(own_size - 1);
    S b = std::numeric_limits<S>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, sums[static_cast<std::size_t>(c)] / S(sizes[static_cast<std::size_t>(c)]));
    }
    const S denom = std::max(a, b);
    if (denom > S(0)) total += (b - a) / denom;
  }
  return total / S(n);
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> cluster_centroids(
    const Eigen::MatrixBase<Derived>& x, std::span<const int> labels, int k) {
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> c =
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>::Zero(k, x.cols());
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    c.row(labels[i]) += x.row(i);
    ++sizes[static_cast<std::size_t>(labels[i])];
  }
  for (int j = 0; j < k; ++j) c.row(j) /= S(sizes[static_cast<std::size_t>(j)]);
  return c;
}

/// Davies-Bouldin index: mean over clusters of the worst (s_i + s_j) / d_ij,
/// with s the mean distance to the centroid. Coincident centroids are skipped.
template <typename Derived>
typename Derived::Scalar davies_bouldin_score(const Eigen::MatrixBase<Derived>& x,
                                              std::span<const int> labels) {
  using S = typename Derived::Scalar;
  const int k = detail::count_labels(labels);
  detail::check_clusters(x.rows(), labels, k);
  const auto c = cluster_centroids(x, labels, k);
  std::vector<S> scatter(static_cast<std::size_t>(k), S(0));
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    scatter[static_cast<std::size_t>(labels[i])] += (x.row(i) - c.row(labels[i])).norm();
    ++sizes[static_cast<std::size_t>(labels[i])];
  }
  for (int j = 0; j < k; ++j) scatter[static_cast<std::size_t>(j)] /= S(sizes[static_cast<std::size_t>(j)]);
  S total(0);
  for (int i = 0; i < k; ++i) {
    S worst(0);
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      const S sep = (c.row(i) - c.row(j)).norm();
      if (sep > S(0)) {
        worst = std::max(worst, (scatter[static_cast<std::size_t>(i)] + scatter[static_cast<std::size_t>(j)]) / sep);
      }
    }
    total += worst;
  }
  return total / S(k);
}

/// Calinski-Harabasz index: between-cluster over within-cluster dispersion,
/// scaled by (n - k) / (k - 1). Zero within-cluster dispersion gives 1.
template <typename Derived>
typename Derived::Scalar calinski_harabasz_score(const Eigen::MatrixBase<Derived>& x,
                                                 std::span<const int> labels) {
  using S = typename Derived::Scalar;
  const int k = detail::count_labels(labels);
  detail::check_clusters(x.rows(), labels, k);
  const Eigen::Index n = x.rows();
  if (n <= k) throw std::invalid_argument("calinski_harabasz needs more points than clusters");
  const auto c = cluster_centroids(x, labels, k);
  const auto overall = x.colwise().mean();
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  S between(0), within(0);
  for (int j = 0; j < k; ++j) {
    between += S(sizes[static_cast<std::size_t>(j)]) * (c.row(j) - overall).squaredNorm();
  }
  for (Eigen::Index i = 0; i < n; ++i) within += (x.row(i) - c.row(labels[i])).squaredNorm();
  if (within == S(0)) return S(1);
  return between * S(n - k) / (within * S(k - 1));
}

/// Rows scaled to unit L2 norm; zero rows are left as they are.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> normalize_rows(
    const Eigen::MatrixBase<Derived>& x) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto norm = out.row(i).norm();
    if (norm > 0) out.row(i) /= norm;
  }
  return out;
}

/// Projection of the centered rows onto their top principal directions.
/// Each column's sign is fixed so its largest-magnitude entry is positive.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> pca_project(
    const Eigen::MatrixBase<Derived>& x, int components = 2) {
  using S = typename Derived::Scalar;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  const Mat centered = x.rowwise() - x.colwise().mean();
  // Eigen-decomposing the n x n Gram matrix is cheap when d >> n.
  const Mat gram = centered * centered.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
  const Eigen::Index n = x.rows();
  const Eigen::Index m = std::min<Eigen::Index>(components, n);
  Mat scores = Mat::Zero(n, components);
  for (Eigen::Index c = 0; c < m; ++c) {
    const Eigen::Index idx = n - 1 - c;
    const S lambda = std::max(eig.eigenvalues()(idx), S(0));
    auto col = scores.col(c);
    col = eig.eigenvectors().col(idx) * std::sqrt(lambda);
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < S(0)) col = -col;
  }
  return scores;
}

}  // namespace conml
