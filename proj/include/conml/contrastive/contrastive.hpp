#pragma once

#include "conml/autodiff/tape.hpp"
#include "conml/tasks/tasks.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace conml {

enum class DistanceKind { kCosine, kSigmoidEuclidean, kEuclidean };
enum class LossForm { kSimple, kInfoNce };
/// Which halves of the contrastive term are active. The one-sided forms are
/// the decoupled d_in-only and d_out-only variants.
enum class ContrastTerms { kBoth, kInnerOnly, kOuterOnly };

std::string to_string(DistanceKind kind);
DistanceKind distance_kind_from_string(const std::string& s);
std::string to_string(LossForm form);
LossForm loss_form_from_string(const std::string& s);
std::string to_string(ContrastTerms terms);
ContrastTerms contrast_terms_from_string(const std::string& s);

struct ContrastiveConfig {
  double lambda = 0.1;
  int k = 1;
  SubsetStrategy strategy;
  DistanceKind distance = DistanceKind::kCosine;
  LossForm form = LossForm::kSimple;
  ContrastTerms terms = ContrastTerms::kBoth;
  /// Treat e* as a constant inside d_in.
  bool stop_grad_e_star = false;

  void validate() const;
};

// ---- Tape versions; gradients flow through every argument. ----

/// φ(a, b) for rank-1 a and b of equal length.
Var distance(DistanceKind kind, Var a, Var b);
/// φ(row_i, e) for each row of `rows` (K x d) against rank-1 `e`; K x 1.
Var row_distances(DistanceKind kind, Var rows, Var e);
/// φ(row_i, row_j) for the rows of `reps` (B x d). Diagonal entries are
/// placeholders and must be masked by the caller.
Var pairwise_distances(DistanceKind kind, Var reps);

/// Mean of φ(e^κ_k, e*) over the K subset representations (rows).
Var inner_task_distance(DistanceKind kind, Var subset_reps, Var e_star);
/// Mean of φ over the B(B-1) ordered pairs of distinct rows.
Var inter_task_distance(DistanceKind kind, Var reps);
/// Off-diagonal mean of an already computed B x B distance matrix.
Var off_diagonal_mean(Var pairwise);

Var simple_contrastive(Var d_in, Var d_out);
/// -Σ_τ log(exp(-d_in_τ) / (exp(-d_in_τ) + Σ_{τ'≠τ} exp(-D_out[τ, τ']))), with
/// `d_in` a B x 1 column. The diagonal of `d_out` is ignored.
Var infonce_loss(Var d_in, Var d_out);
Var combined_loss(Var l_v, Var contrastive, double lambda);

/// Throws std::invalid_argument naming `what` if any row of `reps` has zero
/// norm, which leaves the cosine direction undefined.
void require_nonzero_rows(const Matrix& reps, const std::string& what);

// ---- Value versions over Eigen expressions. ----

template <typename DA, typename DB>
typename DA::Scalar distance(DistanceKind kind, const Eigen::MatrixBase<DA>& a,
                             const Eigen::MatrixBase<DB>& b) {
  using S = typename DA::Scalar;
  if (a.size() != b.size()) throw std::invalid_argument("distance: length mismatch");
  switch (kind) {
    case DistanceKind::kCosine: {
      const S na = a.norm(), nb = b.norm();
      if (na == S(0) || nb == S(0)) {
        throw std::invalid_argument("cosine distance of a zero vector is undefined");
      }
      return S(1) - a.cwiseProduct(b).sum() / (na * nb);
    }
    case DistanceKind::kSigmoidEuclidean:
      return S(1) / (S(1) + std::exp(-(a - b).norm()));
    case DistanceKind::kEuclidean:
      return (a - b).norm();
  }
  return S(0);
}

/// B x B matrix of φ between rows; zero diagonal.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> pairwise_distances(
    DistanceKind kind, const Eigen::MatrixBase<Derived>& reps) {
  using S = typename Derived::Scalar;
  const Eigen::Index n = reps.rows();
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> d =
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = distance(kind, reps.row(i), reps.row(j));
    }
  }
  return d;
}

template <typename DR, typename DE>
typename DR::Scalar inner_task_distance(DistanceKind kind, const Eigen::MatrixBase<DR>& subset_reps,
                                        const Eigen::MatrixBase<DE>& e_star) {
  using S = typename DR::Scalar;
  if (subset_reps.rows() == 0) throw std::invalid_argument("inner_task_distance: no subsets");
  S total(0);
  for (Eigen::Index k = 0; k < subset_reps.rows(); ++k) {
    total += distance(kind, subset_reps.row(k), e_star.reshaped().transpose());
  }
  return total / S(subset_reps.rows());
}

template <typename Derived>
typename Derived::Scalar inter_task_distance(DistanceKind kind,
                                             const Eigen::MatrixBase<Derived>& reps) {
  using S = typename Derived::Scalar;
  const Eigen::Index b = reps.rows();
  if (b < 2) throw std::invalid_argument("inter_task_distance needs at least 2 tasks");
  const auto d = pairwise_distances(kind, reps);
  S total(0);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < b; ++j) {
      if (i != j) total += d(i, j);
    }
  }
  return total / S(b * (b - 1));
}

/// Stabilized InfoNCE value: per row, the max of the negated distances is
/// subtracted before exponentiation.
template <typename DI, typename DO>
typename DI::Scalar infonce_loss(const Eigen::MatrixBase<DI>& d_in,
                                 const Eigen::MatrixBase<DO>& d_out) {
  using S = typename DI::Scalar;
  const Eigen::Index b = d_in.size();
  if (b < 2) throw std::invalid_argument("infonce_loss needs at least 2 tasks");
  if (d_out.rows() != b || d_out.cols() != b) {
    throw std::invalid_argument("infonce_loss: D_out must be B x B");
  }
  S loss(0);
  for (Eigen::Index t = 0; t < b; ++t) {
    S m = -d_in(t);
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j != t) m = std::max(m, -d_out(t, j));
    }
    S denom = std::exp(-d_in(t) - m);
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j != t) denom += std::exp(-d_out(t, j) - m);
    }
    loss += std::log(denom) - (-d_in(t) - m);
  }
  return loss;
}

inline double simple_contrastive(double d_in, double d_out) { return d_in - d_out; }
inline double combined_loss(double l_v, double contrastive, double lambda) {
  return l_v + lambda * contrastive;
}

}  // namespace conml
