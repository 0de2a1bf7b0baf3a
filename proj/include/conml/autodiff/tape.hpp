#pragma once

#include "conml/autodiff/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace conml {

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kScale,
  kAddScalar,
  kMatmul,
  kTranspose,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kSquare,
  kSqrt,
  kSum,
  kMean,
  kSumTo,
  kBroadcastTo,
  kReshape,
  kConcat,
  kColumns,
};

const char* op_name(OpKind op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::int32_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const;
  double item() const { return value().item(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
};

/// Append-only record of a define-by-run computation.
///
/// Parent indices are always smaller than the child index, so reverse
/// iteration is a valid topological order. A tape is single-threaded; build
/// one per concurrent evaluation.
class Tape {
 public:
  struct Node {
    OpKind op;
    bool requires_grad;
    std::int32_t parent_begin;
    std::int32_t parent_count;
    double scalar;
    Index aux;
    Tensor value;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that participates in differentiation.
  Var variable(Tensor value);
  /// Leaf treated as a constant.
  Var constant(Tensor value);

  std::size_t size() const { return nodes_.size(); }
  /// Bytes held by node payloads; the tape only grows so this is also the peak.
  std::size_t bytes() const { return bytes_; }

  const Node& node(std::int32_t i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::span<const std::int32_t> parents(std::int32_t i) const;
  Var var(std::int32_t i) { return Var(this, i); }

  /// Reverse sweep returning plain tensors. `output` must be a scalar.
  /// Entries of `wrt` the output does not depend on receive exact zeros.
  std::vector<Tensor> gradient(Var output, std::span<const Var> wrt) const;

  /// Reverse sweep that records the adjoint computation on this tape, so the
  /// returned gradients can be differentiated again.
  std::vector<Var> gradient_graph(Var output, std::span<const Var> wrt);

  /// Appends a node. Used by the op implementations.
  Var record(OpKind op, Tensor value, std::initializer_list<Var> parents,
             double scalar = 0.0, Index aux = 0);
  Var record(OpKind op, Tensor value, std::span<const Var> parents,
             double scalar = 0.0, Index aux = 0);

 private:
  std::vector<Node> nodes_;
  std::vector<std::int32_t> parent_pool_;
  std::size_t bytes_ = 0;
};

inline const Tensor& Var::value() const { return tape_->node(index_).value; }
inline const Shape& Var::shape() const { return value().shape(); }
inline bool Var::requires_grad() const { return tape_->node(index_).requires_grad; }

// Elementwise binary ops. Operands must have equal shapes, or one must
// expand to the other by trailing-dimension broadcasting (a scalar expands
// to anything, a length-c vector to an r x c matrix).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

/// Rank-2 matrix product.
Var matmul(Var a, Var b);
Var transpose(Var a);

Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
/// Square root; the backward pass floors the divisor at 1e-12.
Var sqrt(Var a);

/// Sum of all entries, accumulated left to right in row-major order.
Var sum(Var a);
Var mean(Var a);

/// Sums leading dimensions away so the result has `target` shape, which must
/// be a suffix of the input shape.
Var sum_to(Var a, const Shape& target);
/// Expands `a` by repeating it along leading dimensions of `target`.
Var broadcast_to(Var a, const Shape& target);
Var reshape(Var a, const Shape& target);

/// Concatenates rank-1 tensors (axis 0) or rank-2 tensors (axis 0 or 1).
Var concat(std::span<const Var> parts, int axis);
/// Column block [start, start + count) of a rank-2 tensor (or entries of a
/// rank-1 tensor).
Var columns(Var a, Index start, Index count);

/// Copy of `a`'s value as a constant; gradients stop here.
Var detach(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator/(Var a, double c) { return scale(a, 1.0 / c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, Var a) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, Var a) { return add_scalar(neg(a), c); }

/// Left-to-right sum over the row-major payload.
double sum_in_order(const Matrix& m);

}  // namespace conml
