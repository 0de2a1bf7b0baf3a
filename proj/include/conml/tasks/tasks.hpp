#pragma once

#include "conml/autodiff/tensor.hpp"
#include "conml/rng.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace conml {

/// Labeled points. Regression sets fill `ys`; classification sets fill
/// `labels` and set `num_classes`. `indices` records each row's position in
/// the pooled train+val set of the task it came from.
struct Dataset {
  Tensor xs = Tensor::zeros(Shape{0, 1});
  Tensor ys = Tensor::zeros(Shape{0, 1});
  std::vector<int> labels;
  std::vector<std::size_t> indices;
  int num_classes = 0;

  Index size() const { return xs.shape().rows(); }
  bool empty() const { return size() == 0; }
  bool is_classification() const { return num_classes > 0; }
  Index input_dim() const { return xs.shape().cols(); }

  /// Throws std::invalid_argument when row counts or labels are inconsistent.
  void validate() const;
};

/// Rows of `d` at the given positions, in the given order.
Dataset select_rows(const Dataset& d, std::span<const std::size_t> rows);
/// Rows of `a` followed by rows of `b`.
Dataset concat_rows(const Dataset& a, const Dataset& b);
/// Every row of `d` repeated `times` times (block-wise).
Dataset repeat_rows(const Dataset& d, int times);

enum class TaskKind { kSinusoid, kGaussianBlobs };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct SinusoidMeta {
  double amplitude = 1.0;
  double phase = 0.0;
};

struct TaskInstance {
  TaskKind kind = TaskKind::kSinusoid;
  Dataset train;
  Dataset val;
  SinusoidMeta sinusoid;
  /// Class means (num_classes x dim) for Gaussian-blob tasks.
  Matrix class_means;

  /// D_tr followed by D_val; row i has provenance index i.
  Dataset pooled() const { return concat_rows(train, val); }
};

struct SinusoidConfig {
  double amplitude_min = 0.1;
  double amplitude_max = 5.0;
  double phase_min = 0.0;
  double phase_max = std::numbers::pi;
  double input_min = -5.0;
  double input_max = 5.0;
};

struct BlobsConfig {
  int num_ways = 5;
  int dim = 8;
  double spread = 0.5;
  double mean_min = -3.0;
  double mean_max = 3.0;
};

/// For blobs, `shots` and `val_size` count points per class.
struct TaskDistributionConfig {
  TaskKind kind = TaskKind::kSinusoid;
  SinusoidConfig sinusoid;
  BlobsConfig blobs;
  int shots = 10;
  int val_size = 100;
  /// Added to both ends of the amplitude range.
  double amplitude_shift = 0.0;

  void validate() const;
  int input_dim() const { return kind == TaskKind::kSinusoid ? 1 : blobs.dim; }
  int output_dim() const { return kind == TaskKind::kSinusoid ? 1 : blobs.num_ways; }
};

enum class SubsetKind { kTrainOnly, kRandomHalf, kRandomM };

std::string to_string(SubsetKind kind);
SubsetKind subset_kind_from_string(const std::string& s);

struct SubsetStrategy {
  SubsetKind kind = SubsetKind::kTrainOnly;
  int m = 0;
  bool class_balanced = false;
};

/// y = A sin(x + phase), the regression target of a sinusoid task.
double sinusoid_target(const SinusoidMeta& meta, double x);

TaskInstance sample_task(const TaskDistributionConfig& config, Rng& rng);
std::vector<TaskInstance> sample_batch(const TaskDistributionConfig& config, int count, Rng& rng);

/// A task whose train/val sizes differ from the config defaults; used by the
/// evaluation protocols.
TaskInstance sample_task_sized(const TaskDistributionConfig& config, int shots, int val_size,
                               Rng& rng);

/// K subsets of D_tr ∪ D_val drawn by `strategy`.
std::vector<Dataset> sample_subsets(const TaskInstance& task, const SubsetStrategy& strategy,
                                    int k, Rng& rng);

nlohmann::json task_to_json(const TaskInstance& task);
TaskInstance task_from_json(const nlohmann::json& j);

/// One task per line.
void dump_tasks(const std::filesystem::path& path, std::span<const TaskInstance> tasks);
std::vector<TaskInstance> load_tasks(const std::filesystem::path& path);

}  // namespace conml
