#pragma once

#include "conml/autodiff/gradcheck.hpp"
#include "conml/autodiff/param_vector.hpp"
#include "conml/contrastive/contrastive.hpp"
#include "conml/learners/learner.hpp"
#include "conml/tasks/tasks.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace conml {

enum class OptimizerKind { kAdam, kSgd };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Outer-loop update rule. Holds Adam moments across steps.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }
  void step(ParamVector& theta, const ParamVector& grad);
  long steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

struct EpisodeConfig {
  int batch_size = 25;
  long episodes = 10000;
  OptimizerConfig optimizer;
  /// Checkpoint cadence in episodes; 0 disables intermediate checkpoints.
  long checkpoint_every = 0;

  void validate(bool conml) const;
};

/// Everything that determines a training run.
struct TrainingSpec {
  LearnerConfig learner;
  TaskDistributionConfig tasks;
  /// Alg. 2 when set, Alg. 1 otherwise.
  bool conml = false;
  ContrastiveConfig contrastive;
  EpisodeConfig episode;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpisodeDiagnostics {
  double loss = 0.0;
  double l_v = 0.0;
  /// Batch means; NaN for baseline episodes.
  double d_in = 0.0;
  double d_out = 0.0;
  double l_c = 0.0;
  std::size_t tape_bytes = 0;
  std::size_t tape_nodes = 0;
  long adapt_calls = 0;
};

struct EpisodeResult {
  EpisodeDiagnostics diag;
  ParamVector gradient;
};

/// Mean validation loss over the batch and its gradient w.r.t. θ. Reptile
/// replaces the gradient with the batch mean of θ - θ'.
EpisodeResult run_episode_baseline(const MetaLearner& learner, std::span<const TaskInstance> batch,
                                   const ParamVector& theta);

/// L = L_v + λ·(contrastive term) and its gradient. Subsets are drawn from
/// `subset_rng` task by task.
EpisodeResult run_episode_conml(const MetaLearner& learner, std::span<const TaskInstance> batch,
                                const ParamVector& theta, const ContrastiveConfig& cfg,
                                Rng& subset_rng);

/// Central differences of the episode objective against the episode
/// gradient. `cfg` null means the baseline objective. Subsets are redrawn
/// from `subset_seed` on every evaluation. Reptile has no objective gradient
/// and is rejected.
GradCheckResult check_episode_gradient(const MetaLearner& learner,
                                       std::span<const TaskInstance> batch,
                                       const ParamVector& theta, const ContrastiveConfig* cfg,
                                       std::uint64_t subset_seed, double eps = 1e-5);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long episode, const std::string& what)
      : std::runtime_error("collapse at episode " + std::to_string(episode) + ": " + what),
        episode_(episode) {}
  long episode() const { return episode_; }

 private:
  long episode_;
};

struct EpisodeRecord {
  long episode = 0;
  EpisodeDiagnostics diag;
};

struct TrainResult {
  ParamVector theta;
  std::vector<EpisodeRecord> trace;
  double seconds = 0.0;
  std::size_t peak_tape_bytes = 0;
};

/// Called after every applied update with the episode record and new θ.
using EpisodeCallback = std::function<void(const EpisodeRecord&, const ParamVector&)>;

/// Runs spec.episode.episodes episodes from the seeded initialization.
/// Throws DivergenceError on a non-finite loss or gradient.
TrainResult meta_train(const TrainingSpec& spec, const EpisodeCallback& on_episode = {});

/// Trains from a given θ (used to resume or to probe single episodes).
TrainResult meta_train_from(const TrainingSpec& spec, const MetaLearner& learner,
                            ParamVector theta, long first_episode, long episodes,
                            const EpisodeCallback& on_episode = {});

/// Deterministic per-episode batch.
std::vector<TaskInstance> episode_batch(const TrainingSpec& spec, long episode);

/// CSV with header episode,l_v,d_in,d_out,l_c,loss.
std::string trace_csv(std::span<const EpisodeRecord> trace);

}  // namespace conml
