#pragma once

#include "conml/autodiff/param_vector.hpp"
#include "conml/contrastive/contrastive.hpp"
#include "conml/learners/learner.hpp"
#include "conml/tasks/tasks.hpp"
#include "conml/training/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace conml {

/// Held-out evaluation on fresh tasks. Task i is drawn from its own stream
/// derived from `seed`, so any two models see the same tasks.
struct TestConfig {
  int num_tasks = 500;
  int test_points = 100;
  int jobs = 1;
};

struct TestMetrics {
  /// MSE for regression, cross-entropy for classification.
  double loss = 0.0;
  /// Classification accuracy; NaN for regression.
  double accuracy = 0.0;
  std::vector<double> per_task;
};

TestMetrics evaluate_tasks(const MetaLearner& learner, const ParamVector& theta,
                           const TaskDistributionConfig& tasks, int shots, const TestConfig& cfg,
                           std::uint64_t seed);

/// Mean test MSE after test-time adaptation on `shots` points.
double eval_mse(const MetaLearner& learner, const ParamVector& theta,
                const TaskDistributionConfig& tasks, int shots, const TestConfig& cfg,
                std::uint64_t seed);

struct ClusterEvalConfig {
  int tasks = 10;
  int subsets = 10;
  int subset_size = 10;

  void validate() const;
};

struct ClusterResult {
  double silhouette = 0.0;
  double dbi = 0.0;
  double chi = 0.0;
  /// tasks*subsets x repr_dim, as fed to the metrics.
  Matrix reps;
  std::vector<int> labels;
  /// tasks*subsets x 2.
  Matrix pca;
};

/// ψ(g(subset; θ)) for `subsets` disjoint subsets of each of `tasks` tasks,
/// scored with task identity as the cluster label. Rows are L2-normalized
/// first when `normalize` is set.
ClusterResult cluster_models(const MetaLearner& learner, const ParamVector& theta,
                             const TaskDistributionConfig& tasks, const ClusterEvalConfig& cfg,
                             bool normalize, std::uint64_t seed);

struct DistanceEvalConfig {
  int tasks = 1000;
  int subsets = 10;
  int subset_size = 10;
  int bins = 30;

  void validate() const;
  int pooled_size() const { return subsets * subset_size; }
};

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<long> counts;
};

Histogram make_histogram(const std::vector<double>& values, int bins);

struct DistanceResult {
  std::vector<double> d_in;
  /// Every unordered pair of distinct tasks.
  std::vector<double> d_out;
  double mean_d_in = 0.0;
  double mean_d_out = 0.0;
  Histogram hist_in;
  Histogram hist_out;
};

/// Per-task d_in (subset models against the pooled model) and pairwise d_out
/// between pooled models, under distance φ.
DistanceResult distance_distributions(const MetaLearner& learner, const ParamVector& theta,
                                      const TaskDistributionConfig& tasks,
                                      const DistanceEvalConfig& cfg, DistanceKind phi,
                                      std::uint64_t seed);

struct SweepPoint {
  double x = 0.0;
  double mse = 0.0;
};

/// Test MSE with the amplitude range shifted by each δ.
std::vector<SweepPoint> ood_sweep(const MetaLearner& learner, const ParamVector& theta,
                                  const TaskDistributionConfig& tasks,
                                  const std::vector<double>& deltas, int shots,
                                  const TestConfig& cfg, std::uint64_t seed);

/// Test MSE for each number of adaptation shots.
std::vector<SweepPoint> shot_sweep(const MetaLearner& learner, const ParamVector& theta,
                                   const TaskDistributionConfig& tasks,
                                   const std::vector<int>& shots, const TestConfig& cfg,
                                   std::uint64_t seed);

/// Mean, sample standard deviation and raw values of one metric over seeds.
struct MetricReport {
  std::string name;
  std::vector<double> values;

  double mean() const;
  double std() const;
  nlohmann::json to_json() const;
};

struct AblationAxes {
  std::vector<double> lambdas;
  std::vector<int> ks;
  std::vector<LossForm> forms;
  std::vector<DistanceKind> distances;

  void validate() const;
};

struct AblationCell {
  double lambda = 0.0;
  int k = 1;
  LossForm form = LossForm::kSimple;
  DistanceKind distance = DistanceKind::kCosine;
  std::uint64_t seed = 0;
  double mse = 0.0;
  std::size_t peak_tape_bytes = 0;
  double seconds_per_episode = 0.0;
  /// Empty on success, otherwise the divergence message.
  std::string failure;
};

/// Cross product of the axes, each trained from `base` for every seed and
/// scored with eval_mse. Diverged cells carry their message and a NaN MSE.
std::vector<AblationCell> ablation_grid(const TrainingSpec& base, const AblationAxes& axes,
                                        const std::vector<std::uint64_t>& seeds, int test_shots,
                                        const TestConfig& test);

/// Long form: one row per (cell, seed).
std::string ablation_csv(const std::vector<AblationCell>& cells);
/// One row per (k, form, distance) and one column per λ, holding seed-mean
/// MSE; a trailing column gives the seed-mean peak tape bytes.
std::string ablation_table(const std::vector<AblationCell>& cells);

// ---- Output helpers. ----

void write_text(const std::filesystem::path& path, const std::string& text);
std::string format_double(double v);

/// Scatter plot; points coloured by integer label.
std::string svg_scatter(const Matrix& xy, const std::vector<int>& labels, const std::string& title);
/// Overlaid histograms sharing one x-axis.
std::string svg_histograms(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                           int bins, const std::string& title);
/// Line plot of named (x, y) series.
std::string svg_lines(const std::vector<std::pair<std::string, std::vector<SweepPoint>>>& series,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label);

}  // namespace conml
