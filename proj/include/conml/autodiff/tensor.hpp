#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace conml {

using Index = Eigen::Index;

/// Raised when operand shapes are incompatible for an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shape of a tensor of rank 0, 1 or 2.
///
/// Every shape maps onto a row-major 2-D storage block: a scalar is 1x1,
/// a vector of length n is 1xn and a matrix keeps its own extents.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {
    if (dims_.size() > 2) {
      throw ShapeError("tensor rank " + std::to_string(dims_.size()) +
                       " not supported (max 2)");
    }
    for (Index d : dims_) {
      if (d < 0) throw ShapeError("negative dimension in shape " + str());
    }
  }

  static Shape scalar() { return Shape(); }
  static Shape vector(Index n) { return Shape{n}; }
  static Shape matrix(Index rows, Index cols) { return Shape{rows, cols}; }

  std::size_t rank() const { return dims_.size(); }
  const std::vector<Index>& dims() const { return dims_; }
  Index dim(std::size_t i) const { return dims_.at(i); }

  Index rows() const { return rank() == 2 ? dims_[0] : 1; }
  Index cols() const {
    switch (rank()) {
      case 0: return 1;
      case 1: return dims_[0];
      default: return dims_[1];
    }
  }
  Index numel() const { return rows() * cols(); }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<Index> dims_;
};

/// Dense tensor of rank <= 2 stored row-major in an Eigen matrix.
template <typename Scalar>
class BasicTensor {
 public:
  using Storage =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  BasicTensor() : storage_(Storage::Zero(1, 1)) {}

  BasicTensor(Shape shape, Storage storage)
      : shape_(std::move(shape)), storage_(std::move(storage)) {
    if (storage_.rows() != shape_.rows() || storage_.cols() != shape_.cols()) {
      throw ShapeError("storage " + std::to_string(storage_.rows()) + "x" +
                       std::to_string(storage_.cols()) +
                       " does not match shape " + shape_.str());
    }
  }

  static BasicTensor zeros(const Shape& shape) {
    return BasicTensor(shape, Storage::Zero(shape.rows(), shape.cols()));
  }
  static BasicTensor ones(const Shape& shape) {
    return BasicTensor(shape, Storage::Ones(shape.rows(), shape.cols()));
  }
  static BasicTensor full(const Shape& shape, Scalar v) {
    return BasicTensor(shape, Storage::Constant(shape.rows(), shape.cols(), v));
  }
  static BasicTensor scalar(Scalar v) { return full(Shape::scalar(), v); }

  static BasicTensor vector(std::span<const Scalar> values) {
    BasicTensor t = zeros(Shape::vector(static_cast<Index>(values.size())));
    for (std::size_t i = 0; i < values.size(); ++i) t.storage_(0, i) = values[i];
    return t;
  }
  static BasicTensor vector(std::initializer_list<Scalar> values) {
    return vector(std::span<const Scalar>(values.begin(), values.size()));
  }

  /// Builds a matrix from nested row lists; all rows must share a length.
  static BasicTensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    BasicTensor t = zeros(Shape::matrix(r, c));
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) {
        throw ShapeError("ragged rows in matrix literal");
      }
      Index j = 0;
      for (Scalar v : row) t.storage_(i, j++) = v;
      ++i;
    }
    return t;
  }

  static BasicTensor from_matrix(Storage m) {
    Shape s = Shape::matrix(m.rows(), m.cols());
    return BasicTensor(std::move(s), std::move(m));
  }

  const Shape& shape() const { return shape_; }
  Index numel() const { return shape_.numel(); }

  const Storage& values() const { return storage_; }
  Storage& values() { return storage_; }

  std::span<const Scalar> flat() const {
    return {storage_.data(), static_cast<std::size_t>(storage_.size())};
  }
  std::span<Scalar> flat() {
    return {storage_.data(), static_cast<std::size_t>(storage_.size())};
  }

  Scalar item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_.str());
    }
    return storage_(0, 0);
  }

  Scalar operator[](Index i) const { return storage_.data()[i]; }
  Scalar& operator[](Index i) { return storage_.data()[i]; }
  Scalar operator()(Index r, Index c) const { return storage_(r, c); }
  Scalar& operator()(Index r, Index c) { return storage_(r, c); }

  /// Same payload under a different shape with equal element count.
  BasicTensor reshaped(const Shape& shape) const {
    if (shape.numel() != numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    Storage m = Eigen::Map<const Storage>(storage_.data(), shape.rows(), shape.cols());
    return BasicTensor(shape, std::move(m));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.storage_ == b.storage_;
  }

 private:
  Shape shape_;
  Storage storage_;
};

using Tensor = BasicTensor<double>;
using Matrix = Tensor::Storage;

}  // namespace conml
