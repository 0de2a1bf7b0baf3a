#pragma once

#include "conml/experiment/config.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace conml {

/// Env var naming the default output root.
inline constexpr const char* kOutRootEnv = "CONML_OUT_ROOT";

/// First non-empty of `cli`, `cfg.output_dir`, $CONML_OUT_ROOT, then ".".
std::filesystem::path resolve_output_root(const std::string& cli, const ExperimentConfig& cfg);

/// runs/<hash>/ layout.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
  /// Learner kind and config hash next to the checkpoint.
  std::filesystem::path sidecar() const { return dir / "checkpoint.json"; }
  std::filesystem::path losses() const { return dir / "losses.csv"; }
  /// Wall-clock figures, kept apart so the rest of the run is reproducible.
  std::filesystem::path timing() const { return dir / "timing.json"; }
  std::filesystem::path reports() const { return dir / "reports"; }
};

RunPaths run_paths(const std::filesystem::path& root, const ExperimentConfig& cfg);

using ProgressFn = std::function<void(const EpisodeRecord&)>;

/// Trains and writes the run directory. On divergence the partial trace and
/// a manifest with status "collapsed" are written before DivergenceError
/// propagates.
TrainResult train_run(const ExperimentConfig& cfg, const RunPaths& paths,
                      const ProgressFn& progress = {});

struct LoadedRun {
  ExperimentConfig cfg;
  std::unique_ptr<MetaLearner> learner;
  ParamVector theta;
  RunPaths paths;
};

/// Reads manifest.json and checkpoint.bin; throws if either is missing.
LoadedRun load_run(const std::filesystem::path& dir);

struct EvalOverrides {
  std::optional<std::vector<double>> deltas;
  std::optional<std::vector<int>> shots;
  std::optional<int> jobs;
};

inline const std::vector<std::string>& eval_protocols() {
  static const std::vector<std::string> names{"mse", "cluster", "distances", "ood", "shots"};
  return names;
}

/// Runs one protocol and writes CSV, JSON and SVG under reports/. Returns the
/// JSON summary.
nlohmann::json run_protocol(const LoadedRun& run, const std::string& protocol,
                            const EvalOverrides& overrides = {});

/// Trains every cell of the grid from `base` and writes ablation.csv and
/// table.csv under <root>/ablations/<hash>/. Returns that directory.
std::filesystem::path run_ablation(const ExperimentConfig& base, const AblationAxes& axes,
                                   const std::vector<std::uint64_t>& seeds,
                                   const std::filesystem::path& root);

}  // namespace conml
