#include "conml/experiment/run.hpp"

#include <cstdlib>
#include <fstream>

namespace conml {
namespace {

using nlohmann::json;

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.string());
  return json::parse(in);
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json manifest_json(const ExperimentConfig& cfg, const ParamVector& theta, long episodes,
                   const std::string& status) {
  return {{"config", to_json(cfg)},
          {"config_hash", config_hash(cfg)},
          {"status", status},
          {"episodes_completed", episodes},
          {"checkpoint", "checkpoint.bin"},
          {"trace", "losses.csv"},
          {"params", param_manifest(theta)}};
}

void write_checkpoint(const RunPaths& paths, const ExperimentConfig& cfg, const ParamVector& theta,
                      long episodes) {
  save_checkpoint(paths.checkpoint(), theta);
  write_json(paths.sidecar(), {{"kind", to_string(cfg.learner.kind)},
                               {"config_hash", config_hash(cfg)},
                               {"learner", to_json(cfg.learner)},
                               {"episodes", episodes}});
}

std::string csv_row(std::initializer_list<double> values) {
  std::string out;
  for (double v : values) out += (out.empty() ? "" : ",") + format_double(v);
  return out + "\n";
}

std::string sweep_csv(const char* x_name, const std::vector<SweepPoint>& pts) {
  std::string out = std::string(x_name) + ",mse\n";
  for (const SweepPoint& p : pts) out += csv_row({p.x, p.mse});
  return out;
}

json sweep_json(const std::vector<SweepPoint>& pts) {
  json arr = json::array();
  for (const SweepPoint& p : pts) arr.push_back({{"x", p.x}, {"mse", p.mse}});
  return arr;
}

}  // namespace

std::filesystem::path resolve_output_root(const std::string& cli, const ExperimentConfig& cfg) {
  if (!cli.empty()) return cli;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv(kOutRootEnv); env && *env) return env;
  return ".";
}

RunPaths run_paths(const std::filesystem::path& root, const ExperimentConfig& cfg) {
  return {root / "runs" / config_hash(cfg)};
}

TrainResult train_run(const ExperimentConfig& cfg, const RunPaths& paths, const ProgressFn& progress) {
  cfg.validate();
  std::filesystem::create_directories(paths.reports());
  const TrainingSpec spec = cfg.training_spec();
  std::vector<EpisodeRecord> trace;
  const long every = cfg.training.checkpoint_every;
  auto on_episode = [&](const EpisodeRecord& r, const ParamVector& theta) {
    trace.push_back(r);
    if (every > 0 && (r.episode + 1) % every == 0) write_checkpoint(paths, cfg, theta, r.episode + 1);
    if (progress) progress(r);
  };
  TrainResult result;
  try {
    result = meta_train(spec, on_episode);
  } catch (const DivergenceError& e) {
    write_text(paths.losses(), trace_csv(trace));
    const auto learner = make_learner(cfg.learner, problem_shape(cfg.tasks));
    json m = manifest_json(cfg, learner->init(derive_seed(cfg.seed, Stream::kInit)),
                           static_cast<long>(trace.size()), "collapsed");
    m["error"] = e.what();
    write_json(paths.manifest(), m);
    throw;
  }
  write_checkpoint(paths, cfg, result.theta, cfg.training.episodes);
  write_text(paths.losses(), trace_csv(result.trace));
  write_json(paths.manifest(), manifest_json(cfg, result.theta, cfg.training.episodes, "complete"));
  const double per_episode =
      cfg.training.episodes > 0 ? result.seconds / static_cast<double>(cfg.training.episodes) : 0.0;
  write_json(paths.timing(), {{"seconds", result.seconds},
                              {"seconds_per_episode", per_episode},
                              {"peak_tape_bytes", result.peak_tape_bytes}});
  return result;
}

LoadedRun load_run(const std::filesystem::path& dir) {
  LoadedRun run;
  run.paths = {dir};
  const json manifest = read_json(run.paths.manifest());
  if (manifest.value("status", "") != "complete") {
    throw std::runtime_error("run " + dir.string() + " did not complete");
  }
  run.cfg = parse_config(manifest.at("config"));
  if (!std::filesystem::exists(run.paths.checkpoint())) {
    throw std::runtime_error("missing checkpoint " + run.paths.checkpoint().string());
  }
  run.learner = make_learner(run.cfg.learner, problem_shape(run.cfg.tasks));
  run.theta = load_checkpoint(run.paths.checkpoint());
  if (!run.theta.same_layout(run.learner->init(0))) {
    throw std::runtime_error("checkpoint does not match the learner in the manifest");
  }
  return run;
}

json run_protocol(const LoadedRun& run, const std::string& protocol, const EvalOverrides& overrides) {
  const ExperimentConfig& cfg = run.cfg;
  const MetaLearner& learner = *run.learner;
  TestConfig test = cfg.eval.test;
  if (overrides.jobs) test.jobs = *overrides.jobs;
  const auto dir = run.paths.reports();
  const std::uint64_t seed = cfg.seed;
  json out{{"protocol", protocol}, {"config_hash", config_hash(cfg)}};

  if (protocol == "mse") {
    const TestMetrics m = evaluate_tasks(learner, run.theta, cfg.tasks, cfg.eval.shots, test, seed);
    out["shots"] = cfg.eval.shots;
    out["num_tasks"] = test.num_tasks;
    out["loss"] = m.loss;
    if (learner.shape().classification) out["accuracy"] = m.accuracy;
    write_text(dir / "mse.csv", "shots,loss,accuracy\n" +
                                    csv_row({static_cast<double>(cfg.eval.shots), m.loss, m.accuracy}));
  } else if (protocol == "cluster") {
    const bool normalize = cfg.contrastive.distance == DistanceKind::kCosine;
    const ClusterResult r = cluster_models(learner, run.theta, cfg.tasks, cfg.eval.cluster, normalize, seed);
    out["silhouette"] = r.silhouette;
    out["dbi"] = r.dbi;
    out["chi"] = r.chi;
    out["normalized"] = normalize;
    write_text(dir / "cluster.csv", "silhouette,dbi,chi\n" + csv_row({r.silhouette, r.dbi, r.chi}));
    std::string pca = "task,pc1,pc2\n";
    for (Index i = 0; i < r.pca.rows(); ++i) {
      pca += std::to_string(r.labels[static_cast<std::size_t>(i)]) + "," + format_double(r.pca(i, 0)) +
             "," + format_double(r.pca(i, 1)) + "\n";
    }
    write_text(dir / "cluster_pca.csv", pca);
    write_text(dir / "cluster_pca.svg", svg_scatter(r.pca, r.labels, "Adapted models, PCA"));
  } else if (protocol == "distances") {
    const DistanceKind phi = cfg.contrastive.distance;
    const DistanceResult r = distance_distributions(learner, run.theta, cfg.tasks, cfg.eval.distances, phi, seed);
    out["distance"] = to_string(phi);
    out["mean_d_in"] = r.mean_d_in;
    out["mean_d_out"] = r.mean_d_out;
    std::string hist = "which,bin,lo,hi,count\n";
    for (const auto& [name, h] : {std::pair{"d_in", &r.hist_in}, std::pair{"d_out", &r.hist_out}}) {
      const double width = (h->hi - h->lo) / static_cast<double>(h->counts.size());
      for (std::size_t b = 0; b < h->counts.size(); ++b) {
        hist += std::string(name) + "," + std::to_string(b) + "," +
                format_double(h->lo + width * static_cast<double>(b)) + "," +
                format_double(h->lo + width * static_cast<double>(b + 1)) + "," +
                std::to_string(h->counts[b]) + "\n";
      }
    }
    write_text(dir / "distances_hist.csv", hist);
    write_text(dir / "distances.csv", "mean_d_in,mean_d_out\n" + csv_row({r.mean_d_in, r.mean_d_out}));
    const int bins = cfg.eval.distances.bins;
    write_text(dir / "d_in.svg", svg_histograms({{"d_in", r.d_in}}, bins, "Inner-task distance"));
    write_text(dir / "d_out.svg", svg_histograms({{"d_out", r.d_out}}, bins, "Inter-task distance"));
  } else if (protocol == "ood") {
    if (cfg.tasks.kind != TaskKind::kSinusoid) throw std::invalid_argument("ood protocol needs sinusoid tasks");
    const auto deltas = overrides.deltas.value_or(cfg.eval.deltas);
    const auto pts = ood_sweep(learner, run.theta, cfg.tasks, deltas, cfg.eval.shots, test, seed);
    out["shots"] = cfg.eval.shots;
    out["points"] = sweep_json(pts);
    write_text(dir / "ood.csv", sweep_csv("delta", pts));
    write_text(dir / "ood.svg", svg_lines({{"mse", pts}}, "Amplitude shift", "delta", "test MSE"));
  } else if (protocol == "shots") {
    if (learner.shape().classification) throw std::invalid_argument("shots protocol needs regression tasks");
    const auto shots = overrides.shots.value_or(cfg.eval.shot_list);
    const auto pts = shot_sweep(learner, run.theta, cfg.tasks, shots, test, seed);
    out["points"] = sweep_json(pts);
    write_text(dir / "shots.csv", sweep_csv("shots", pts));
    write_text(dir / "shots.svg", svg_lines({{"mse", pts}}, "Test shots", "shots", "test MSE"));
  } else {
    throw std::invalid_argument("unknown protocol '" + protocol + "'");
  }
  write_json(dir / (protocol + ".json"), out);
  return out;
}

std::filesystem::path run_ablation(const ExperimentConfig& base, const AblationAxes& axes,
                                   const std::vector<std::uint64_t>& seeds,
                                   const std::filesystem::path& root) {
  base.validate();
  axes.validate();
  json key{{"base", semantic_json(base)}, {"lambdas", axes.lambdas}, {"ks", axes.ks}, {"seeds", seeds}};
  for (LossForm f : axes.forms) key["forms"].push_back(to_string(f));
  for (DistanceKind d : axes.distances) key["distances"].push_back(to_string(d));
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a64(key.dump())));
  const auto dir = root / "ablations" / hash;
  const auto cells = ablation_grid(base.training_spec(), axes, seeds, base.eval.shots, base.eval.test);
  write_json(dir / "axes.json", key);
  write_text(dir / "ablation.csv", ablation_csv(cells));
  write_text(dir / "table.csv", ablation_table(cells));
  return dir;
}

}  // namespace conml
