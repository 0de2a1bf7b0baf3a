#pragma once

#include "conml/autodiff/tape.hpp"
#include "conml/autodiff/tensor.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace conml {

/// Ordered, uniquely named set of learnable tensors.
class ParamVector {
 public:
  ParamVector() = default;

  /// Appends an entry; throws std::invalid_argument on a duplicate name.
  void add(std::string name, Tensor value);

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }

  /// Index of `name`, or size() when absent.
  std::size_t find(const std::string& name) const;

  Index total_size() const;

  /// Concatenation of every payload in entry order.
  Eigen::VectorXd flatten() const;
  /// Inverse of flatten(): copies `flat` into this vector's layout.
  void unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat);
  /// A vector with the same names/shapes holding `flat`.
  ParamVector with_values(const Eigen::Ref<const Eigen::VectorXd>& flat) const;
  ParamVector zeros_like() const;

  /// Whether names and shapes agree entry-by-entry.
  bool same_layout(const ParamVector& other) const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

/// Binds every entry as a differentiable leaf on `tape`.
std::vector<Var> bind_variables(Tape& tape, const ParamVector& params);
/// Binds every entry as a constant on `tape`.
std::vector<Var> bind_constants(Tape& tape, const ParamVector& params);

/// Names and shapes, for inspection alongside a checkpoint.
nlohmann::json param_manifest(const ParamVector& params);

/// Binary checkpoint: magic, record count, then per record the name, rank,
/// dimensions and a little-endian f64 payload.
void save_checkpoint(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const ParamVector& params);
ParamVector decode_checkpoint(const std::string& bytes);

}  // namespace conml
