// conml: train, evaluate and ablate contrastive meta-learners.

#include "conml/experiment/gradcheck_suite.hpp"
#include "conml/experiment/run.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace conml;

enum Exit { kOk = 0, kFailure = 1, kBadConfig = 2, kCollapse = 3 };

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::vector<double> lambdas;
  std::vector<int> ks;
  int jobs = 0;
};

ExperimentConfig load_with_overrides(const Common& c, bool single_point) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.has_seed) cfg.seed = c.seed;
  if (c.jobs > 0) cfg.eval.test.jobs = c.jobs;
  if (single_point) {
    if (c.lambdas.size() > 1 || c.ks.size() > 1) {
      throw ConfigError("--lambda/--k", "train takes a single value; use ablate for grids");
    }
    if (!c.lambdas.empty()) cfg.contrastive.lambda = c.lambdas[0];
    if (!c.ks.empty()) cfg.contrastive.k = c.ks[0];
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config", e.what());
  }
  return cfg;
}

bool all_finite(const nlohmann::json& j) {
  if (j.is_number()) return std::isfinite(j.get<double>());
  if (j.is_structured()) {
    for (const auto& v : j) {
      if (!all_finite(v)) return false;
    }
  }
  return true;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = load_with_overrides(c, true);
  const RunPaths paths = run_paths(resolve_output_root(c.out, cfg), cfg);
  const long total = cfg.training.episodes;
  const long every = std::max(1L, total / 20);
  std::fprintf(stderr, "training %ld episodes into %s\n", total, paths.dir.c_str());
  const TrainResult r = train_run(cfg, paths, [&](const EpisodeRecord& rec) {
    if ((rec.episode + 1) % every == 0) {
      std::fprintf(stderr, "  episode %ld/%ld  loss %.5f  l_v %.5f\n", rec.episode + 1, total,
                   rec.diag.loss, rec.diag.l_v);
    }
  });
  std::fprintf(stderr, "done in %.1f s\n", r.seconds);
  std::printf("%s\n", paths.dir.c_str());
  return kOk;
}

int cmd_eval(const Common& c, std::string run_dir, const std::vector<std::string>& protocols,
             const std::vector<double>& deltas, const std::vector<int>& shots) {
  if (run_dir.empty()) {
    if (c.config.empty()) throw ConfigError("--run", "give --run or --config");
    const ExperimentConfig cfg = load_with_overrides(c, true);
    run_dir = run_paths(resolve_output_root(c.out, cfg), cfg).dir.string();
  }
  const LoadedRun run = load_run(run_dir);
  EvalOverrides o;
  if (!deltas.empty()) o.deltas = deltas;
  if (!shots.empty()) o.shots = shots;
  if (c.jobs > 0) o.jobs = c.jobs;
  bool finite = true;
  for (const std::string& p : protocols) {
    const nlohmann::json summary = run_protocol(run, p, o);
    std::printf("%s\n", summary.dump().c_str());
    finite = finite && all_finite(summary);
  }
  if (!finite) {
    std::fprintf(stderr, "error: non-finite metric in report\n");
    return kFailure;
  }
  return kOk;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& forms,
               const std::vector<std::string>& distances, int seeds) {
  ExperimentConfig base = load_with_overrides(c, false);
  AblationAxes axes;
  axes.lambdas = c.lambdas.empty() ? std::vector<double>{base.contrastive.lambda} : c.lambdas;
  axes.ks = c.ks.empty() ? std::vector<int>{base.contrastive.k} : c.ks;
  for (const auto& f : forms) axes.forms.push_back(loss_form_from_string(f));
  for (const auto& d : distances) axes.distances.push_back(distance_kind_from_string(d));
  if (axes.forms.empty()) axes.forms.push_back(base.contrastive.form);
  if (axes.distances.empty()) axes.distances.push_back(base.contrastive.distance);
  if (seeds < 1) throw ConfigError("--seeds", "must be >= 1");
  std::vector<std::uint64_t> seed_list;
  for (int i = 0; i < seeds; ++i) seed_list.push_back(base.seed + static_cast<std::uint64_t>(i));
  const auto dir = run_ablation(base, axes, seed_list, resolve_output_root(c.out, base));
  std::ifstream table(dir / "table.csv");
  std::cout << table.rdbuf();
  std::printf("%s\n", dir.c_str());
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  constexpr double kTolerance = 1e-4;
  const auto entries = run_gradcheck_suite(seed);
  std::printf("%-52s %14s %8s  %s\n", "component", "max_rel_error", "coords", "status");
  for (const auto& e : entries) {
    const char* status = e.skipped ? "skipped" : (e.max_rel_error <= kTolerance ? "ok" : "FAIL");
    if (e.skipped) {
      std::printf("%-52s %14s %8s  %s (%s)\n", e.name.c_str(), "-", "-", status, e.note.c_str());
    } else {
      std::printf("%-52s %14.3e %8ld  %s\n", e.name.c_str(), e.max_rel_error, e.coords, status);
    }
  }
  const bool ok = gradcheck_passed(entries, kTolerance);
  std::printf("%s (tolerance %.0e)\n", ok ? "all components pass" : "gradcheck FAILED", kTolerance);
  return ok ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive meta-learning experiments"};
  app.require_subcommand(1);
  Common c;
  std::string run_dir;
  std::vector<std::string> protocols{"mse"};
  std::vector<double> deltas;
  std::vector<int> shots;
  std::vector<std::string> forms, distances;
  int seeds = 1;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", c.config, "Experiment config (strict JSON)");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--out", c.out,
                    std::string("Output root (default: config output_dir, $") + kOutRootEnv + ", .)");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { c.seed = s; c.has_seed = true; }, "Root seed override");
    sub->add_option("--jobs", c.jobs, "Evaluation threads")->check(CLI::PositiveNumber);
  };

  auto* train = app.add_subcommand("train", "Meta-train and write runs/<hash>/");
  add_common(train, true);
  train->add_option("--lambda", c.lambdas, "Contrastive weight override")->delimiter(',');
  train->add_option("--k", c.ks, "Subset count override")->delimiter(',');

  auto* eval = app.add_subcommand("eval", "Evaluate a trained run");
  add_common(eval, false);
  eval->add_option("--run", run_dir, "Run directory (otherwise located from --config)");
  eval->add_option("--protocol", protocols, "mse, cluster, distances, ood, shots or all")
      ->delimiter(',');
  eval->add_option("--deltas", deltas, "Amplitude shifts for ood")->delimiter(',');
  eval->add_option("--shots", shots, "Shot counts for the shot sweep")->delimiter(',');

  auto* ablate = app.add_subcommand("ablate", "Train and score a grid of contrastive settings");
  add_common(ablate, true);
  ablate->add_option("--lambda", c.lambdas, "Lambda axis")->delimiter(',');
  ablate->add_option("--k", c.ks, "Subset-count axis")->delimiter(',');
  ablate->add_option("--forms", forms, "Loss-form axis: simple, infonce")->delimiter(',');
  ablate->add_option("--distances", distances, "Distance axis")->delimiter(',');
  ablate->add_option("--seeds", seeds, "Seeds per cell, counting up from the config seed");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient path");
  std::uint64_t grad_seed = 1;
  grad->add_option("--seed", grad_seed, "Seed for parameters and tasks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(c);
    if (*eval) {
      if (protocols.size() == 1 && protocols[0] == "all") protocols = eval_protocols();
      return cmd_eval(c, run_dir, protocols, deltas, shots);
    }
    if (*ablate) return cmd_ablate(c, forms, distances, seeds);
    if (*grad) return cmd_gradcheck(grad_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kBadConfig;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "collapse: %s\n", e.what());
    return kCollapse;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
