#include "conml/eval/eval.hpp"

#include "conml/eval/cluster_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <thread>

namespace conml {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class Protocol : std::uint64_t { kTest = 1, kCluster = 2, kDistance = 3 };

std::uint64_t protocol_seed(std::uint64_t seed, Protocol p) {
  return derive_seed(seed, Stream::kEval, static_cast<std::uint64_t>(p));
}

Rng task_rng(std::uint64_t seed, Protocol p, int index) {
  return Rng(derive_seed(protocol_seed(seed, p), Stream::kTasks, static_cast<std::uint64_t>(index)));
}

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written to per-index slots so the reduction order stays fixed.
template <typename Body>
void parallel_for(int n, int jobs, Body body) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += jobs) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

/// Chunk `s` of size `n` from a pool sampled with n * chunks shots; for
/// classification the chunk takes n points of every class.
Dataset chunk(const Dataset& pool, int s, int n, int chunks) {
  std::vector<std::size_t> rows;
  const int groups = pool.is_classification() ? pool.num_classes : 1;
  const int per_group = n * chunks;
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < n; ++i) rows.push_back(static_cast<std::size_t>(g * per_group + s * n + i));
  }
  return select_rows(pool, rows);
}

Eigen::RowVectorXd representation(const MetaLearner& learner, const ParamVector& theta,
                                  const Dataset& d) {
  Tape tape;
  const auto vars = bind_variables(tape, theta);
  const TaskModel m = learner.adapt(vars, d, {learner.train_options().steps, false});
  const Matrix& e = learner.represent(m).value().values();
  return Eigen::Map<const Eigen::RowVectorXd>(e.data(), e.size());
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* palette(int i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[((i % 10) + 10) % 10];
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double kW = 640, kH = 420, kL = 60, kR = 20, kT = 40, kB = 50;

  double px(double x) const { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); }
  double py(double y) const { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); }
};

Frame make_frame(double x0, double x1, double y0, double y1) {
  if (!(x1 > x0)) { x0 -= 0.5; x1 += 0.5; }
  if (!(y1 > y0)) { y0 -= 0.5; y1 += 0.5; }
  return {x0, x1, y0, y1};
}

std::string svg_open(const Frame& f, const std::string& title, const std::string& xl,
                     const std::string& yl) {
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n"
                "<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n"
                "<text x=\"%g\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">%s</text>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%s</text>\n"
                "<text x=\"14\" y=\"%g\" text-anchor=\"middle\" transform=\"rotate(-90 14 %g)\">%s</text>\n"
                "<text x=\"%g\" y=\"%g\" text-anchor=\"start\">%.4g</text>\n"
                "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.4g</text>\n"
                "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.4g</text>\n"
                "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.4g</text>\n",
                Frame::kW, Frame::kH, Frame::kW / 2, escape_xml(title).c_str(), Frame::kL,
                Frame::kH - Frame::kB, Frame::kW - Frame::kR, Frame::kH - Frame::kB, Frame::kL,
                Frame::kT, Frame::kL, Frame::kH - Frame::kB, Frame::kW / 2, Frame::kH - 12,
                escape_xml(xl).c_str(), Frame::kH / 2, Frame::kH / 2, escape_xml(yl).c_str(),
                Frame::kL, Frame::kH - Frame::kB + 16, f.x0, Frame::kW - Frame::kR,
                Frame::kH - Frame::kB + 16, f.x1, Frame::kL - 4, Frame::kH - Frame::kB, f.y0,
                Frame::kL - 4, Frame::kT + 4, f.y1);
  return buf;
}

std::string legend(const std::vector<std::string>& names) {
  std::string out;
  char buf[512];
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = Frame::kT + 14 + 16 * static_cast<double>(i);
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%g\" y=\"%g\" width=\"10\" height=\"10\" fill=\"%s\"/>"
                  "<text x=\"%g\" y=\"%g\">%s</text>\n",
                  Frame::kW - 170, y - 9, palette(static_cast<int>(i)), Frame::kW - 155, y,
                  escape_xml(names[i]).c_str());
    out += buf;
  }
  return out;
}

}  // namespace

TestMetrics evaluate_tasks(const MetaLearner& learner, const ParamVector& theta,
                           const TaskDistributionConfig& tasks, int shots, const TestConfig& cfg,
                           std::uint64_t seed) {
  if (cfg.num_tasks < 1 || cfg.test_points < 1 || shots < 1) {
    throw std::invalid_argument("evaluation needs at least one task, shot and test point");
  }
  std::vector<double> losses(static_cast<std::size_t>(cfg.num_tasks));
  std::vector<double> correct(static_cast<std::size_t>(cfg.num_tasks));
  const bool classification = learner.shape().classification;
  parallel_for(cfg.num_tasks, cfg.jobs, [&](int i) {
    Rng rng = task_rng(seed, Protocol::kTest, i);
    const TaskInstance task = sample_task_sized(tasks, shots, cfg.test_points, rng);
    Tape tape;
    const auto vars = bind_variables(tape, theta);
    const TaskModel m = learner.adapt(vars, task.train, learner.test_options());
    losses[static_cast<std::size_t>(i)] = learner.loss(m, task.val).item();
    if (classification) {
      const Matrix& logits = learner.predict(m, task.val.xs).value().values();
      double hits = 0;
      for (Index r = 0; r < logits.rows(); ++r) {
        Index arg = 0;
        logits.row(r).maxCoeff(&arg);
        hits += arg == task.val.labels[static_cast<std::size_t>(r)];
      }
      correct[static_cast<std::size_t>(i)] = hits / static_cast<double>(logits.rows());
    }
  });
  TestMetrics out;
  out.loss = mean_of(losses);
  out.accuracy = classification ? mean_of(correct) : kNaN;
  out.per_task = std::move(losses);
  return out;
}

double eval_mse(const MetaLearner& learner, const ParamVector& theta,
                const TaskDistributionConfig& tasks, int shots, const TestConfig& cfg,
                std::uint64_t seed) {
  if (learner.shape().classification) throw std::invalid_argument("eval_mse needs regression tasks");
  return evaluate_tasks(learner, theta, tasks, shots, cfg, seed).loss;
}

void ClusterEvalConfig::validate() const {
  if (tasks < 2 || subsets < 2 || subset_size < 1) {
    throw std::invalid_argument("cluster eval needs tasks >= 2, subsets >= 2, subset_size >= 1");
  }
}

ClusterResult cluster_models(const MetaLearner& learner, const ParamVector& theta,
                             const TaskDistributionConfig& tasks, const ClusterEvalConfig& cfg,
                             bool normalize, std::uint64_t seed) {
  cfg.validate();
  ClusterResult out;
  const int n = cfg.tasks * cfg.subsets;
  out.reps.resize(n, learner.repr_dim());
  for (int t = 0; t < cfg.tasks; ++t) {
    Rng rng = task_rng(seed, Protocol::kCluster, t);
    const TaskInstance task = sample_task_sized(tasks, cfg.subsets * cfg.subset_size, 0, rng);
    for (int s = 0; s < cfg.subsets; ++s) {
      out.reps.row(t * cfg.subsets + s) =
          representation(learner, theta, chunk(task.train, s, cfg.subset_size, cfg.subsets));
      out.labels.push_back(t);
    }
  }
  const Matrix x = normalize ? Matrix(normalize_rows(out.reps)) : out.reps;
  out.silhouette = silhouette_score(x, out.labels);
  out.dbi = davies_bouldin_score(x, out.labels);
  out.chi = calinski_harabasz_score(x, out.labels);
  out.pca = pca_project(x, 2);
  out.reps = x;
  return out;
}

void DistanceEvalConfig::validate() const {
  if (tasks < 2 || subsets < 1 || subset_size < 1 || bins < 1) {
    throw std::invalid_argument("distance eval needs tasks >= 2 and positive sizes");
  }
}

Histogram make_histogram(const std::vector<double>& values, int bins) {
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  if (values.empty()) return h;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  h.lo = *lo;
  h.hi = *hi;
  const double width = (h.hi - h.lo) / bins;
  for (double v : values) {
    long b = width > 0.0 ? static_cast<long>((v - h.lo) / width) : 0;
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

DistanceResult distance_distributions(const MetaLearner& learner, const ParamVector& theta,
                                      const TaskDistributionConfig& tasks,
                                      const DistanceEvalConfig& cfg, DistanceKind phi,
                                      std::uint64_t seed) {
  cfg.validate();
  DistanceResult out;
  Matrix stars(cfg.tasks, learner.repr_dim());
  Matrix subset_reps(cfg.subsets, learner.repr_dim());
  for (int t = 0; t < cfg.tasks; ++t) {
    Rng rng = task_rng(seed, Protocol::kDistance, t);
    const TaskInstance task = sample_task_sized(tasks, cfg.pooled_size(), 0, rng);
    stars.row(t) = representation(learner, theta, task.train);
    for (int s = 0; s < cfg.subsets; ++s) {
      subset_reps.row(s) =
          representation(learner, theta, chunk(task.train, s, cfg.subset_size, cfg.subsets));
    }
    out.d_in.push_back(inner_task_distance(phi, subset_reps, stars.row(t)));
  }
  const Matrix pair = pairwise_distances(phi, stars);
  for (int i = 0; i < cfg.tasks; ++i) {
    for (int j = i + 1; j < cfg.tasks; ++j) out.d_out.push_back(pair(i, j));
  }
  out.mean_d_in = mean_of(out.d_in);
  out.mean_d_out = mean_of(out.d_out);
  out.hist_in = make_histogram(out.d_in, cfg.bins);
  out.hist_out = make_histogram(out.d_out, cfg.bins);
  return out;
}

std::vector<SweepPoint> ood_sweep(const MetaLearner& learner, const ParamVector& theta,
                                  const TaskDistributionConfig& tasks,
                                  const std::vector<double>& deltas, int shots,
                                  const TestConfig& cfg, std::uint64_t seed) {
  std::vector<SweepPoint> out;
  for (double delta : deltas) {
    TaskDistributionConfig shifted = tasks;
    shifted.amplitude_shift = delta;
    out.push_back({delta, eval_mse(learner, theta, shifted, shots, cfg, seed)});
  }
  return out;
}

std::vector<SweepPoint> shot_sweep(const MetaLearner& learner, const ParamVector& theta,
                                   const TaskDistributionConfig& tasks,
                                   const std::vector<int>& shots, const TestConfig& cfg,
                                   std::uint64_t seed) {
  std::vector<SweepPoint> out;
  for (int n : shots) {
    out.push_back({static_cast<double>(n), eval_mse(learner, theta, tasks, n, cfg, seed)});
  }
  return out;
}

double MetricReport::mean() const { return mean_of(values); }

double MetricReport::std() const {
  if (values.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

nlohmann::json MetricReport::to_json() const {
  return {{"name", name},
          {"mean", mean()},
          {"std", std()},
          {"seeds", values.size()},
          {"values", values}};
}

void AblationAxes::validate() const {
  if (lambdas.empty() || ks.empty() || forms.empty() || distances.empty()) {
    throw std::invalid_argument("ablation: every axis needs at least one value");
  }
}

std::vector<AblationCell> ablation_grid(const TrainingSpec& base, const AblationAxes& axes,
                                        const std::vector<std::uint64_t>& seeds, int test_shots,
                                        const TestConfig& test) {
  axes.validate();
  if (seeds.empty()) throw std::invalid_argument("ablation: no seeds");
  std::vector<AblationCell> cells;
  const auto learner = make_learner(base.learner, problem_shape(base.tasks));
  for (DistanceKind distance : axes.distances) {
    for (LossForm form : axes.forms) {
      if (distance == DistanceKind::kEuclidean && form != LossForm::kInfoNce) continue;
      for (int k : axes.ks) {
        for (double lambda : axes.lambdas) {
          for (std::uint64_t seed : seeds) {
            TrainingSpec spec = base;
            spec.conml = true;
            spec.seed = seed;
            spec.contrastive.lambda = lambda;
            spec.contrastive.k = k;
            spec.contrastive.form = form;
            spec.contrastive.distance = distance;
            if (form == LossForm::kInfoNce) spec.contrastive.terms = ContrastTerms::kBoth;
            AblationCell cell{lambda, k, form, distance, seed, kNaN, 0, 0.0, {}};
            try {
              const TrainResult r = meta_train(spec);
              cell.mse = eval_mse(*learner, r.theta, spec.tasks, test_shots, test, seed);
              cell.peak_tape_bytes = r.peak_tape_bytes;
              cell.seconds_per_episode =
                  spec.episode.episodes > 0 ? r.seconds / static_cast<double>(spec.episode.episodes) : 0.0;
            } catch (const DivergenceError& e) {
              cell.failure = e.what();
            }
            cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::string out = "lambda,k,form,distance,seed,mse,peak_tape_bytes,seconds_per_episode,status\n";
  for (const AblationCell& c : cells) {
    out += format_double(c.lambda) + "," + std::to_string(c.k) + "," + to_string(c.form) + "," +
           to_string(c.distance) + "," + std::to_string(c.seed) + "," + format_double(c.mse) + "," +
           std::to_string(c.peak_tape_bytes) + "," + format_double(c.seconds_per_episode) + "," +
           (c.failure.empty() ? "ok" : "collapse") + "\n";
  }
  return out;
}

std::string ablation_table(const std::vector<AblationCell>& cells) {
  std::set<double> lambdas;
  std::vector<std::tuple<int, LossForm, DistanceKind>> rows;
  for (const AblationCell& c : cells) {
    lambdas.insert(c.lambda);
    const auto key = std::make_tuple(c.k, c.form, c.distance);
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
  }
  std::string out = "k,form,distance";
  for (double l : lambdas) out += ",lambda=" + format_double(l);
  out += ",peak_tape_bytes\n";
  for (const auto& [k, form, distance] : rows) {
    out += std::to_string(k) + "," + to_string(form) + "," + to_string(distance);
    double bytes = 0.0;
    int byte_count = 0;
    for (double l : lambdas) {
      std::vector<double> ok;
      int failed = 0;
      for (const AblationCell& c : cells) {
        if (c.k != k || c.form != form || c.distance != distance || c.lambda != l) continue;
        if (c.failure.empty()) {
          ok.push_back(c.mse);
          bytes += static_cast<double>(c.peak_tape_bytes);
          ++byte_count;
        } else {
          ++failed;
        }
      }
      out += ",";
      if (!ok.empty()) out += format_double(mean_of(ok));
      if (failed > 0) out += (ok.empty() ? "" : " ") + std::string("collapse(") + std::to_string(failed) + ")";
    }
    out += "," + (byte_count ? format_double(bytes / byte_count) : std::string("nan")) + "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string svg_scatter(const Matrix& xy, const std::vector<int>& labels, const std::string& title) {
  const Frame f = make_frame(xy.col(0).minCoeff(), xy.col(0).maxCoeff(), xy.col(1).minCoeff(),
                             xy.col(1).maxCoeff());
  std::string out = svg_open(f, title, "PC1", "PC2");
  char buf[256];
  for (Index i = 0; i < xy.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3.5\" fill=\"%s\" fill-opacity=\"0.8\"/>\n",
                  f.px(xy(i, 0)), f.py(xy(i, 1)), palette(labels[static_cast<std::size_t>(i)]));
    out += buf;
  }
  return out + "</svg>\n";
}

std::string svg_histograms(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                           int bins, const std::string& title) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, v] : series) {
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  std::vector<std::vector<double>> density;
  double ymax = 0.0;
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  for (const auto& [name, v] : series) {
    std::vector<double> d(static_cast<std::size_t>(bins), 0.0);
    for (double x : v) {
      const long b = std::clamp(static_cast<long>((x - lo) / width), 0L, static_cast<long>(bins) - 1);
      d[static_cast<std::size_t>(b)] += 1.0 / (static_cast<double>(v.size()) * width);
    }
    ymax = std::max(ymax, *std::max_element(d.begin(), d.end()));
    density.push_back(std::move(d));
  }
  const Frame f = make_frame(lo, lo + width * bins, 0.0, ymax);
  std::string out = svg_open(f, title, "distance", "density");
  char buf[256];
  std::vector<std::string> names;
  for (std::size_t s = 0; s < series.size(); ++s) {
    names.push_back(series[s].first);
    for (int b = 0; b < bins; ++b) {
      const double x0 = lo + width * b;
      const double top = f.py(density[s][static_cast<std::size_t>(b)]);
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\" fill-opacity=\"0.5\"/>\n",
                    f.px(x0), top, f.px(x0 + width) - f.px(x0), f.py(0.0) - top,
                    palette(static_cast<int>(s)));
      out += buf;
    }
  }
  return out + legend(names) + "</svg>\n";
}

std::string svg_lines(const std::vector<std::pair<std::string, std::vector<SweepPoint>>>& series,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& [name, pts] : series) {
    for (const SweepPoint& p : pts) {
      if (!std::isfinite(p.mse)) continue;
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.mse);
      y1 = std::max(y1, p.mse);
    }
  }
  if (!std::isfinite(x0)) x0 = x1 = y0 = y1 = 0.0;
  const Frame f = make_frame(x0, x1, std::min(0.0, y0), y1);
  std::string out = svg_open(f, title, x_label, y_label);
  std::vector<std::string> names;
  char buf[256];
  for (std::size_t s = 0; s < series.size(); ++s) {
    names.push_back(series[s].first);
    std::string points;
    for (const SweepPoint& p : series[s].second) {
      if (!std::isfinite(p.mse)) continue;
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", f.px(p.x), f.py(p.mse));
      points += buf;
    }
    out += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" +
           std::string(palette(static_cast<int>(s))) + "\" points=\"" + points + "\"/>\n";
  }
  return out + legend(names) + "</svg>\n";
}

}  // namespace conml
