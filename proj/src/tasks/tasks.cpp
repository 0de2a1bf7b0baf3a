#include "conml/tasks/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace conml {
namespace {

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Matrix m(static_cast<Index>(rows.size()), t.shape().cols());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = t.values().row(static_cast<Index>(rows[i]));
  return Tensor::from_matrix(std::move(m));
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  if (a.shape().cols() != b.shape().cols()) {
    throw ShapeError("concat_rows: column mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Matrix m(a.shape().rows() + b.shape().rows(), a.shape().cols());
  m.topRows(a.shape().rows()) = a.values();
  m.bottomRows(b.shape().rows()) = b.values();
  return Tensor::from_matrix(std::move(m));
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.cols());
    for (Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, Index cols_if_empty) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j[r].size()) != cols) throw std::runtime_error("task json: ragged rows");
    for (Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

nlohmann::json dataset_to_json(const Dataset& d) {
  nlohmann::json j{{"x", matrix_to_json(d.xs.values())}};
  if (d.is_classification()) {
    j["labels"] = d.labels;
    j["num_classes"] = d.num_classes;
  } else {
    j["y"] = matrix_to_json(d.ys.values());
  }
  return j;
}

Dataset dataset_from_json(const nlohmann::json& j, std::size_t first_index) {
  Dataset d;
  d.xs = Tensor::from_matrix(matrix_from_json(j.at("x"), 1));
  if (j.contains("labels")) {
    d.labels = j.at("labels").get<std::vector<int>>();
    d.num_classes = j.at("num_classes").get<int>();
    d.ys = Tensor::zeros(Shape{0, 1});
  } else {
    d.ys = Tensor::from_matrix(matrix_from_json(j.at("y"), 1));
  }
  d.indices.resize(static_cast<std::size_t>(d.size()));
  std::iota(d.indices.begin(), d.indices.end(), first_index);
  d.validate();
  return d;
}

Dataset sinusoid_points(const SinusoidConfig& cfg, const SinusoidMeta& meta, int n,
                        std::size_t first_index, Rng& rng) {
  Dataset d;
  Matrix x(n, 1), y(n, 1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(cfg.input_min, cfg.input_max);
    y(i, 0) = sinusoid_target(meta, x(i, 0));
  }
  d.xs = Tensor::from_matrix(std::move(x));
  d.ys = Tensor::from_matrix(std::move(y));
  d.indices.resize(static_cast<std::size_t>(n));
  std::iota(d.indices.begin(), d.indices.end(), first_index);
  return d;
}

Dataset blob_points(const BlobsConfig& cfg, const Matrix& means, int per_class,
                    std::size_t first_index, Rng& rng) {
  Dataset d;
  const int n = per_class * cfg.num_ways;
  Matrix x(n, cfg.dim);
  d.labels.reserve(static_cast<std::size_t>(n));
  Index row = 0;
  for (int c = 0; c < cfg.num_ways; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int k = 0; k < cfg.dim; ++k) {
        const double noise = cfg.spread > 0.0 ? rng.normal(0.0, cfg.spread) : 0.0;
        x(row, k) = means(c, k) + noise;
      }
      d.labels.push_back(c);
    }
  }
  d.xs = Tensor::from_matrix(std::move(x));
  d.ys = Tensor::zeros(Shape{0, 1});
  d.num_classes = cfg.num_ways;
  d.indices.resize(static_cast<std::size_t>(n));
  std::iota(d.indices.begin(), d.indices.end(), first_index);
  return d;
}

// Round-robin over classes so per-class counts differ by at most one.
std::vector<std::size_t> balanced_draw(const Dataset& pool, std::size_t m, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(pool.num_classes));
  for (std::size_t i = 0; i < pool.labels.size(); ++i) by_class[pool.labels[i]].push_back(i);
  for (auto& rows : by_class) {
    // shuffle each class's rows so the per-class take is a uniform draw
    const auto order = rng.sample_without_replacement(rows.size(), rows.size());
    std::vector<std::size_t> shuffled;
    for (std::size_t o : order) shuffled.push_back(rows[o]);
    rows = std::move(shuffled);
  }
  std::vector<std::size_t> taken(by_class.size(), 0);
  std::vector<std::size_t> out;
  while (out.size() < m) {
    bool progressed = false;
    for (std::size_t c = 0; c < by_class.size() && out.size() < m; ++c) {
      if (taken[c] < by_class[c].size()) {
        out.push_back(by_class[c][taken[c]++]);
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return out;
}

}  // namespace

void Dataset::validate() const {
  if (xs.shape().rank() != 2) throw std::invalid_argument("dataset: xs must be rank 2");
  if (!indices.empty() && static_cast<Index>(indices.size()) != size()) {
    throw std::invalid_argument("dataset: provenance length differs from row count");
  }
  if (is_classification()) {
    if (static_cast<Index>(labels.size()) != size()) {
      throw std::invalid_argument("dataset: label count differs from row count");
    }
    for (int l : labels) {
      if (l < 0 || l >= num_classes) {
        throw std::invalid_argument("dataset: label " + std::to_string(l) + " outside [0, " +
                                    std::to_string(num_classes) + ")");
      }
    }
  } else if (ys.shape().rows() != size()) {
    throw std::invalid_argument("dataset: xs has " + std::to_string(size()) + " rows but ys has " +
                                std::to_string(ys.shape().rows()));
  }
}

Dataset select_rows(const Dataset& d, std::span<const std::size_t> rows) {
  Dataset out;
  out.num_classes = d.num_classes;
  out.xs = take_rows(d.xs, rows);
  out.ys = d.is_classification() ? Tensor::zeros(Shape{0, 1}) : take_rows(d.ys, rows);
  for (std::size_t r : rows) {
    if (d.is_classification()) out.labels.push_back(d.labels[r]);
    out.indices.push_back(d.indices.empty() ? r : d.indices[r]);
  }
  return out;
}

Dataset concat_rows(const Dataset& a, const Dataset& b) {
  if (a.num_classes != b.num_classes) throw std::invalid_argument("concat_rows: task type mismatch");
  Dataset out;
  out.num_classes = a.num_classes;
  out.xs = stack_rows(a.xs, b.xs);
  out.ys = a.is_classification() ? Tensor::zeros(Shape{0, 1}) : stack_rows(a.ys, b.ys);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.indices = a.indices;
  out.indices.insert(out.indices.end(), b.indices.begin(), b.indices.end());
  return out;
}

Dataset repeat_rows(const Dataset& d, int times) {
  Dataset out = d;
  for (int t = 1; t < times; ++t) out = concat_rows(out, d);
  return out;
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::kSinusoid ? "sinusoid" : "gaussian-blobs";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "sinusoid") return TaskKind::kSinusoid;
  if (s == "gaussian-blobs") return TaskKind::kGaussianBlobs;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

std::string to_string(SubsetKind kind) {
  switch (kind) {
    case SubsetKind::kTrainOnly: return "train-only";
    case SubsetKind::kRandomHalf: return "random-half";
    case SubsetKind::kRandomM: return "random-m";
  }
  return "?";
}

SubsetKind subset_kind_from_string(const std::string& s) {
  if (s == "train-only") return SubsetKind::kTrainOnly;
  if (s == "random-half") return SubsetKind::kRandomHalf;
  if (s == "random-m") return SubsetKind::kRandomM;
  throw std::invalid_argument("unknown subset strategy '" + s + "'");
}

void TaskDistributionConfig::validate() const {
  if (shots < 1) throw std::invalid_argument("tasks.shots must be >= 1");
  if (val_size < 0) throw std::invalid_argument("tasks.val_size must be >= 0");
  if (kind == TaskKind::kSinusoid) {
    if (!(sinusoid.amplitude_min <= sinusoid.amplitude_max) ||
        !(sinusoid.phase_min <= sinusoid.phase_max) ||
        !(sinusoid.input_min < sinusoid.input_max)) {
      throw std::invalid_argument("tasks.sinusoid: empty range");
    }
  } else {
    if (blobs.num_ways < 1 || blobs.dim < 1) {
      throw std::invalid_argument("tasks.blobs: num_ways and dim must be >= 1");
    }
    if (blobs.spread < 0.0 || !(blobs.mean_min <= blobs.mean_max)) {
      throw std::invalid_argument("tasks.blobs: invalid spread or mean range");
    }
  }
}

double sinusoid_target(const SinusoidMeta& meta, double x) {
  return meta.amplitude * std::sin(x + meta.phase);
}

TaskInstance sample_task_sized(const TaskDistributionConfig& config, int shots, int val_size,
                               Rng& rng) {
  config.validate();
  TaskInstance task;
  task.kind = config.kind;
  if (config.kind == TaskKind::kSinusoid) {
    const auto& s = config.sinusoid;
    task.sinusoid.amplitude = rng.uniform(s.amplitude_min + config.amplitude_shift,
                                          s.amplitude_max + config.amplitude_shift);
    task.sinusoid.phase = rng.uniform(s.phase_min, s.phase_max);
    task.train = sinusoid_points(s, task.sinusoid, shots, 0, rng);
    task.val = sinusoid_points(s, task.sinusoid, val_size, static_cast<std::size_t>(shots), rng);
  } else {
    const auto& b = config.blobs;
    task.class_means.resize(b.num_ways, b.dim);
    for (int c = 0; c < b.num_ways; ++c) {
      for (int k = 0; k < b.dim; ++k) task.class_means(c, k) = rng.uniform(b.mean_min, b.mean_max);
    }
    task.train = blob_points(b, task.class_means, shots, 0, rng);
    task.val = blob_points(b, task.class_means, val_size,
                           static_cast<std::size_t>(task.train.size()), rng);
  }
  return task;
}

TaskInstance sample_task(const TaskDistributionConfig& config, Rng& rng) {
  return sample_task_sized(config, config.shots, config.val_size, rng);
}

std::vector<TaskInstance> sample_batch(const TaskDistributionConfig& config, int count, Rng& rng) {
  std::vector<TaskInstance> batch;
  batch.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) batch.push_back(sample_task(config, rng));
  return batch;
}

std::vector<Dataset> sample_subsets(const TaskInstance& task, const SubsetStrategy& strategy,
                                    int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample_subsets: K must be >= 1");
  std::vector<Dataset> subsets;
  subsets.reserve(static_cast<std::size_t>(k));
  if (strategy.kind == SubsetKind::kTrainOnly) {
    for (int i = 0; i < k; ++i) subsets.push_back(task.train);
    return subsets;
  }
  const Dataset pool = task.pooled();
  const auto pool_size = static_cast<std::size_t>(pool.size());
  std::size_t m = pool_size / 2;
  if (strategy.kind == SubsetKind::kRandomM) {
    if (strategy.m < 1 || static_cast<std::size_t>(strategy.m) > pool_size) {
      throw std::invalid_argument("sample_subsets: m=" + std::to_string(strategy.m) +
                                  " outside [1, " + std::to_string(pool_size) + "]");
    }
    m = static_cast<std::size_t>(strategy.m);
  }
  for (int i = 0; i < k; ++i) {
    std::vector<std::size_t> rows = strategy.class_balanced && pool.is_classification()
                                        ? balanced_draw(pool, m, rng)
                                        : rng.sample_without_replacement(pool_size, m);
    std::sort(rows.begin(), rows.end());
    subsets.push_back(select_rows(pool, rows));
  }
  return subsets;
}

nlohmann::json task_to_json(const TaskInstance& task) {
  nlohmann::json meta;
  if (task.kind == TaskKind::kSinusoid) {
    meta = {{"amplitude", task.sinusoid.amplitude}, {"phase", task.sinusoid.phase}};
  } else {
    meta = {{"class_means", matrix_to_json(task.class_means)}};
  }
  return {{"kind", to_string(task.kind)},
          {"meta", std::move(meta)},
          {"train", dataset_to_json(task.train)},
          {"val", dataset_to_json(task.val)}};
}

TaskInstance task_from_json(const nlohmann::json& j) {
  TaskInstance task;
  task.kind = task_kind_from_string(j.at("kind").get<std::string>());
  const auto& meta = j.at("meta");
  if (task.kind == TaskKind::kSinusoid) {
    task.sinusoid.amplitude = meta.at("amplitude").get<double>();
    task.sinusoid.phase = meta.at("phase").get<double>();
  } else {
    task.class_means = matrix_from_json(meta.at("class_means"), 0);
  }
  task.train = dataset_from_json(j.at("train"), 0);
  task.val = dataset_from_json(j.at("val"), static_cast<std::size_t>(task.train.size()));
  return task;
}

void dump_tasks(const std::filesystem::path& path, std::span<const TaskInstance> tasks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const TaskInstance& t : tasks) out << task_to_json(t).dump() << '\n';
}

std::vector<TaskInstance> load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<TaskInstance> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    tasks.push_back(task_from_json(nlohmann::json::parse(line)));
  }
  return tasks;
}

}  // namespace conml
