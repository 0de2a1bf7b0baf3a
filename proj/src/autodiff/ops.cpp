#include "conml/autodiff/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace conml {
namespace {

Tape* common_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid()) {
    throw std::invalid_argument(std::string(op) + ": unbound Var");
  }
  if (a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
  return a.tape();
}

Tape* tape_of(Var a, const char* op) {
  if (!a.valid()) throw std::invalid_argument(std::string(op) + ": unbound Var");
  return a.tape();
}

bool is_suffix(const Shape& s, const Shape& target) {
  if (s.rank() > target.rank()) return false;
  const std::size_t off = target.rank() - s.rank();
  for (std::size_t i = 0; i < s.rank(); ++i) {
    if (s.dim(i) != target.dim(off + i)) return false;
  }
  return true;
}

std::pair<Var, Var> align(Var a, Var b, const char* op) {
  common_tape(a, b, op);
  if (a.shape() == b.shape()) return {a, b};
  if (is_suffix(b.shape(), a.shape())) return {a, broadcast_to(b, a.shape())};
  if (is_suffix(a.shape(), b.shape())) return {broadcast_to(a, b.shape()), b};
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape().str() +
                   " and " + b.shape().str());
}

Tensor like(const Shape& s, Matrix m) { return Tensor(s, std::move(m)); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double sum_in_order(const Matrix& m) {
  double s = 0.0;
  const double* p = m.data();
  const Index n = m.size();
  for (Index i = 0; i < n; ++i) s += p[i];
  return s;
}

Var add(Var a, Var b) {
  auto [x, y] = align(a, b, "add");
  return x.tape()->record(OpKind::kAdd, like(x.shape(), x.value().values() + y.value().values()),
                          {x, y});
}

Var sub(Var a, Var b) {
  auto [x, y] = align(a, b, "sub");
  return x.tape()->record(OpKind::kSub, like(x.shape(), x.value().values() - y.value().values()),
                          {x, y});
}

Var mul(Var a, Var b) {
  auto [x, y] = align(a, b, "mul");
  return x.tape()->record(
      OpKind::kMul, like(x.shape(), x.value().values().cwiseProduct(y.value().values())), {x, y});
}

Var div(Var a, Var b) {
  auto [x, y] = align(a, b, "div");
  return x.tape()->record(
      OpKind::kDiv, like(x.shape(), x.value().values().cwiseQuotient(y.value().values())), {x, y});
}

Var neg(Var a) {
  return tape_of(a, "neg")->record(OpKind::kNeg, like(a.shape(), -a.value().values()), {a});
}

Var scale(Var a, double c) {
  return tape_of(a, "scale")->record(OpKind::kScale, like(a.shape(), c * a.value().values()), {a},
                                     c);
}

Var add_scalar(Var a, double c) {
  Matrix m = a.value().values().array() + c;
  return tape_of(a, "add_scalar")->record(OpKind::kAddScalar, like(a.shape(), std::move(m)), {a},
                                          c);
}

Var matmul(Var a, Var b) {
  Tape* t = common_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2 || sa.dim(1) != sb.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + sa.str() + " and " + sb.str());
  }
  Matrix m(sa.dim(0), sb.dim(1));
  m.noalias() = a.value().values() * b.value().values();
  return t->record(OpKind::kMatmul, Tensor::from_matrix(std::move(m)), {a, b});
}

Var transpose(Var a) {
  if (a.shape().rank() != 2) {
    throw ShapeError("transpose: expected rank 2, got " + a.shape().str());
  }
  Matrix m = a.value().values().transpose();
  return tape_of(a, "transpose")
      ->record(OpKind::kTranspose, Tensor::from_matrix(std::move(m)), {a});
}

Var relu(Var a) {
  Matrix m = a.value().values().cwiseMax(0.0);
  return tape_of(a, "relu")->record(OpKind::kRelu, like(a.shape(), std::move(m)), {a});
}

Var sigmoid(Var a) {
  Matrix m = a.value().values().unaryExpr(&stable_sigmoid);
  return tape_of(a, "sigmoid")->record(OpKind::kSigmoid, like(a.shape(), std::move(m)), {a});
}

Var exp(Var a) {
  Matrix m = a.value().values().array().exp();
  return tape_of(a, "exp")->record(OpKind::kExp, like(a.shape(), std::move(m)), {a});
}

Var log(Var a) {
  Matrix m = a.value().values().array().log();
  return tape_of(a, "log")->record(OpKind::kLog, like(a.shape(), std::move(m)), {a});
}

Var square(Var a) {
  Matrix m = a.value().values().array().square();
  return tape_of(a, "square")->record(OpKind::kSquare, like(a.shape(), std::move(m)), {a});
}

Var sqrt(Var a) {
  Matrix m = a.value().values().array().sqrt();
  return tape_of(a, "sqrt")->record(OpKind::kSqrt, like(a.shape(), std::move(m)), {a});
}

Var sum(Var a) {
  return tape_of(a, "sum")->record(OpKind::kSum, Tensor::scalar(sum_in_order(a.value().values())),
                                   {a});
}

Var mean(Var a) {
  const Index n = a.value().numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return tape_of(a, "mean")->record(
      OpKind::kMean, Tensor::scalar(sum_in_order(a.value().values()) / static_cast<double>(n)),
      {a});
}

Var sum_to(Var a, const Shape& target) {
  const Shape& s = a.shape();
  if (s == target) return a;
  if (!is_suffix(target, s)) {
    throw ShapeError("sum_to: cannot reduce " + s.str() + " to " + target.str());
  }
  Tensor out = Tensor::zeros(target);
  const Matrix& v = a.value().values();
  if (target.rank() == 0) {
    out.values()(0, 0) = sum_in_order(v);
  } else {
    // rank-2 source reduced over rows to a rank-1 target
    for (Index r = 0; r < v.rows(); ++r) out.values().row(0) += v.row(r);
  }
  return tape_of(a, "sum_to")->record(OpKind::kSumTo, std::move(out), {a});
}

Var broadcast_to(Var a, const Shape& target) {
  const Shape& s = a.shape();
  if (s == target) return a;
  if (!is_suffix(s, target)) {
    throw ShapeError("broadcast: cannot expand " + s.str() + " to " + target.str());
  }
  Matrix m(target.rows(), target.cols());
  if (s.rank() == 0) {
    m.setConstant(a.value().values()(0, 0));
  } else {
    m = a.value().values().replicate(target.rows(), 1);
  }
  return tape_of(a, "broadcast")->record(OpKind::kBroadcastTo, Tensor(target, std::move(m)), {a});
}

Var reshape(Var a, const Shape& target) {
  if (a.shape() == target) return a;
  return tape_of(a, "reshape")->record(OpKind::kReshape, a.value().reshaped(target), {a});
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape* t = tape_of(parts[0], "concat");
  const std::size_t rank = parts[0].shape().rank();
  if (rank == 0 || (rank == 1 && axis != 0) || (rank == 2 && axis != 0 && axis != 1)) {
    throw ShapeError("concat: unsupported axis " + std::to_string(axis) + " for rank " +
                     std::to_string(rank));
  }
  Index rows = 0;
  Index cols = 0;
  for (const Var& p : parts) {
    common_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.rank() != rank) {
      throw ShapeError("concat: mixed ranks " + parts[0].shape().str() + " and " + s.str());
    }
    if (rank == 1 || axis == 1) {
      if (s.rows() != parts[0].shape().rows()) {
        throw ShapeError("concat: incompatible shapes " + parts[0].shape().str() + " and " +
                         s.str());
      }
      rows = s.rows();
      cols += s.cols();
    } else {
      if (s.cols() != parts[0].shape().cols()) {
        throw ShapeError("concat: incompatible shapes " + parts[0].shape().str() + " and " +
                         s.str());
      }
      rows += s.rows();
      cols = s.cols();
    }
  }
  Matrix m(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value().values();
    if (rank == 1 || axis == 1) {
      m.middleCols(offset, v.cols()) = v;
      offset += v.cols();
    } else {
      m.middleRows(offset, v.rows()) = v;
      offset += v.rows();
    }
  }
  Shape shape = rank == 1 ? Shape::vector(cols) : Shape::matrix(rows, cols);
  return t->record(OpKind::kConcat, Tensor(std::move(shape), std::move(m)), parts, 0.0,
                   rank == 1 ? 1 : axis);
}

Var columns(Var a, Index start, Index count) {
  const Shape& s = a.shape();
  if (s.rank() == 0 || start < 0 || count < 0 || start + count > s.cols()) {
    throw ShapeError("columns: block [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + s.str());
  }
  Shape out = s.rank() == 1 ? Shape::vector(count) : Shape::matrix(s.rows(), count);
  Matrix m = a.value().values().middleCols(start, count);
  return tape_of(a, "columns")->record(OpKind::kColumns, Tensor(std::move(out), std::move(m)), {a},
                                       0.0, start);
}

Var detach(Var a) { return tape_of(a, "detach")->constant(a.value()); }

}  // namespace conml
