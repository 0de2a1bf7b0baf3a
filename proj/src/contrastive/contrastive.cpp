#include "conml/contrastive/contrastive.hpp"

namespace conml {
namespace {

Var ones(Tape& tape, Index rows, Index cols) { return tape.constant(Tensor::ones(Shape{rows, cols})); }

Var identity(Tape& tape, Index n) {
  return tape.constant(Tensor::from_matrix(Matrix::Identity(n, n)));
}

Var off_diagonal_mask(Tape& tape, Index n) {
  return tape.constant(Tensor::from_matrix(Matrix::Ones(n, n) - Matrix::Identity(n, n)));
}

void require_rank(Var v, int rank, const char* what) {
  if (v.shape().rank() != rank) {
    throw ShapeError(std::string(what) + ": unexpected shape " + v.shape().str());
  }
}

Var apply_kind(DistanceKind kind, Var euclid) {
  return kind == DistanceKind::kSigmoidEuclidean ? sigmoid(euclid) : euclid;
}

}  // namespace

std::string to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::kCosine: return "cosine";
    case DistanceKind::kSigmoidEuclidean: return "sigmoid-euclidean";
    case DistanceKind::kEuclidean: return "euclidean";
  }
  return "?";
}

DistanceKind distance_kind_from_string(const std::string& s) {
  if (s == "cosine") return DistanceKind::kCosine;
  if (s == "sigmoid-euclidean") return DistanceKind::kSigmoidEuclidean;
  if (s == "euclidean") return DistanceKind::kEuclidean;
  throw std::invalid_argument("unknown distance '" + s + "'");
}

std::string to_string(LossForm form) { return form == LossForm::kSimple ? "simple" : "infonce"; }

LossForm loss_form_from_string(const std::string& s) {
  if (s == "simple") return LossForm::kSimple;
  if (s == "infonce") return LossForm::kInfoNce;
  throw std::invalid_argument("unknown loss form '" + s + "'");
}

std::string to_string(ContrastTerms terms) {
  switch (terms) {
    case ContrastTerms::kBoth: return "both";
    case ContrastTerms::kInnerOnly: return "inner-only";
    case ContrastTerms::kOuterOnly: return "outer-only";
  }
  return "?";
}

ContrastTerms contrast_terms_from_string(const std::string& s) {
  if (s == "both") return ContrastTerms::kBoth;
  if (s == "inner-only") return ContrastTerms::kInnerOnly;
  if (s == "outer-only") return ContrastTerms::kOuterOnly;
  throw std::invalid_argument("unknown contrast terms '" + s + "'");
}

void ContrastiveConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("contrastive.lambda must be >= 0");
  if (k < 1) throw std::invalid_argument("contrastive.k must be >= 1");
  if (distance == DistanceKind::kEuclidean && form != LossForm::kInfoNce) {
    throw std::invalid_argument("contrastive: unbounded euclidean distance requires infonce");
  }
  if (form == LossForm::kInfoNce && terms != ContrastTerms::kBoth) {
    throw std::invalid_argument("contrastive: infonce has no decoupled variant");
  }
}

void require_nonzero_rows(const Matrix& reps, const std::string& what) {
  for (Index i = 0; i < reps.rows(); ++i) {
    if (reps.row(i).squaredNorm() == 0.0) {
      throw std::invalid_argument(what + ": cosine distance of a zero vector is undefined (row " +
                                  std::to_string(i) + ")");
    }
  }
}

Var row_distances(DistanceKind kind, Var rows, Var e) {
  require_rank(rows, 2, "row_distances");
  require_rank(e, 1, "row_distances");
  Tape& tape = *rows.tape();
  const Index k = rows.shape().rows(), d = rows.shape().cols();
  if (e.shape().dims()[0] != d) {
    throw ShapeError("row_distances: rows " + rows.shape().str() + " vs e " + e.shape().str());
  }
  if (kind == DistanceKind::kCosine) {
    require_nonzero_rows(rows.value().values(), "row_distances");
    require_nonzero_rows(e.value().values(), "row_distances");
    const Var dots = matmul(rows, reshape(e, Shape{d, 1}));
    const Var norms = matmul(square(rows), ones(tape, d, 1)) * sum(square(e));
    return 1.0 - dots / sqrt(norms);
  }
  const Var diff = rows - e;
  return apply_kind(kind, sqrt(matmul(square(diff), ones(tape, d, 1))));
}

Var pairwise_distances(DistanceKind kind, Var reps) {
  require_rank(reps, 2, "pairwise_distances");
  Tape& tape = *reps.tape();
  const Index b = reps.shape().rows(), d = reps.shape().cols();
  const Var gram = matmul(reps, transpose(reps));
  const Var row_sq = matmul(matmul(square(reps), ones(tape, d, 1)), ones(tape, 1, b));
  const Var col_sq = transpose(row_sq);
  if (kind == DistanceKind::kCosine) {
    require_nonzero_rows(reps.value().values(), "pairwise_distances");
    return 1.0 - gram / sqrt(row_sq * col_sq);
  }
  // relu guards cancellation below zero; the identity keeps the diagonal
  // (a placeholder) away from sqrt's kink.
  const Var sq = relu(row_sq + col_sq - gram * 2.0) + identity(tape, b);
  return apply_kind(kind, sqrt(sq));
}

Var distance(DistanceKind kind, Var a, Var b) {
  require_rank(a, 1, "distance");
  const Index d = a.shape().dims()[0];
  return reshape(row_distances(kind, reshape(a, Shape{1, d}), b), Shape{});
}

Var inner_task_distance(DistanceKind kind, Var subset_reps, Var e_star) {
  if (subset_reps.shape().rank() == 2 && subset_reps.shape().rows() == 0) {
    throw std::invalid_argument("inner_task_distance: no subsets");
  }
  return mean(row_distances(kind, subset_reps, e_star));
}

Var off_diagonal_mean(Var pairwise) {
  const Index b = pairwise.shape().rows();
  if (b < 2) throw std::invalid_argument("inter_task_distance needs at least 2 tasks");
  return sum(pairwise * off_diagonal_mask(*pairwise.tape(), b)) / static_cast<double>(b * (b - 1));
}

Var inter_task_distance(DistanceKind kind, Var reps) {
  if (reps.shape().rank() != 2 || reps.shape().rows() < 2) {
    throw std::invalid_argument("inter_task_distance needs at least 2 tasks");
  }
  return off_diagonal_mean(pairwise_distances(kind, reps));
}

Var simple_contrastive(Var d_in, Var d_out) { return d_in - d_out; }

Var infonce_loss(Var d_in, Var d_out) {
  const Index b = d_out.shape().rows();
  if (b < 2) throw std::invalid_argument("infonce_loss needs at least 2 tasks");
  if (d_in.shape() != Shape{b, 1} || d_out.shape() != Shape{b, b}) {
    throw ShapeError("infonce_loss: d_in " + d_in.shape().str() + " with D_out " +
                     d_out.shape().str());
  }
  Tape& tape = *d_out.tape();
  const Var eye = identity(tape, b);
  // Logits: -d_in on the diagonal, -D_out elsewhere.
  const Var z = -(d_out * off_diagonal_mask(tape, b) + matmul(d_in, ones(tape, 1, b)) * eye);
  const Matrix& zv = z.value().values();
  Matrix shift(b, b);
  for (Index i = 0; i < b; ++i) shift.row(i).setConstant(zv.row(i).maxCoeff());
  const Var shifted = z - tape.constant(Tensor::from_matrix(std::move(shift)));
  const Var row_sums = matmul(exp(shifted), ones(tape, b, 1));
  return sum(log(row_sums)) - sum(shifted * eye);
}

Var combined_loss(Var l_v, Var contrastive, double lambda) { return l_v + contrastive * lambda; }

}  // namespace conml
