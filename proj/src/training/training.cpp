#include "conml/training/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace conml {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Var mean_in_order(std::span<const Var> xs) {
  Var total = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) total = total + xs[i];
  return total / static_cast<double>(xs.size());
}

Var stack_rows(std::span<const Var> rows) {
  std::vector<Var> parts;
  parts.reserve(rows.size());
  for (const Var& r : rows) parts.push_back(reshape(r, Shape{1, r.value().numel()}));
  return concat(parts, 0);
}

ParamVector to_params(const ParamVector& layout, const std::vector<Tensor>& grads) {
  ParamVector g;
  for (std::size_t i = 0; i < layout.size(); ++i) g.add(layout.name(i), grads[i]);
  return g;
}

bool is_reptile(const MetaLearner& learner) {
  const auto* maml = dynamic_cast<const MamlLearner*>(&learner);
  return maml && maml->config().order == MamlOrder::kReptile;
}

/// Adds the batch mean of θ - θ' for each adapted model into `acc`.
void accumulate_reptile(Eigen::VectorXd& acc, const ParamVector& theta, const TaskModel& model,
                        std::size_t batch) {
  const auto& w = std::get<MamlModel>(model).weights;
  Eigen::VectorXd adapted(theta.total_size());
  Index offset = 0;
  for (const Var& v : w) {
    for (double x : v.value().flat()) adapted[offset++] = x;
  }
  acc += (theta.flatten() - adapted) / static_cast<double>(batch);
}

void require_val(const TaskInstance& task) {
  if (task.val.empty()) throw std::invalid_argument("episode: task with empty validation set");
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("optimizer.lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("optimizer betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("optimizer.eps must be > 0");
}

void Optimizer::step(ParamVector& theta, const ParamVector& grad) {
  if (!theta.same_layout(grad)) throw std::invalid_argument("optimizer: gradient layout mismatch");
  Eigen::VectorXd x = theta.flatten();
  const Eigen::VectorXd g = grad.flatten();
  ++t_;
  if (cfg_.kind == OptimizerKind::kSgd) {
    x -= cfg_.lr * g;
  } else {
    if (m_.size() != x.size()) {
      m_ = Eigen::VectorXd::Zero(x.size());
      v_ = Eigen::VectorXd::Zero(x.size());
    }
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    x.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
  }
  theta.unflatten(x);
}

void EpisodeConfig::validate(bool conml) const {
  if (batch_size < 1) throw std::invalid_argument("training.batch_size must be >= 1");
  if (conml && batch_size < 2) {
    throw std::invalid_argument("training.batch_size must be >= 2 when contrastive is enabled");
  }
  if (episodes < 0) throw std::invalid_argument("training.episodes must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("training.checkpoint_every must be >= 0");
  optimizer.validate();
}

void TrainingSpec::validate() const {
  tasks.validate();
  episode.validate(conml);
  if (conml) contrastive.validate();
  switch (learner.kind) {
    case LearnerKind::kMaml: learner.maml.validate(); break;
    case LearnerKind::kProtoNet: learner.proto.validate(); break;
    case LearnerKind::kHyperNet: learner.hyper.validate(); break;
  }
}

EpisodeResult run_episode_baseline(const MetaLearner& learner, std::span<const TaskInstance> batch,
                                   const ParamVector& theta) {
  if (batch.empty()) throw std::invalid_argument("episode: empty batch");
  const long calls_before = learner.adapt_calls();
  const bool reptile = is_reptile(learner);
  Tape tape;
  const auto vars = bind_variables(tape, theta);
  const AdaptOptions opts{learner.train_options().steps, !reptile};
  std::vector<Var> losses;
  Eigen::VectorXd pseudo = Eigen::VectorXd::Zero(theta.total_size());
  for (const TaskInstance& task : batch) {
    require_val(task);
    const TaskModel model = learner.adapt(vars, task.train, opts);
    losses.push_back(learner.loss(model, task.val));
    if (reptile) accumulate_reptile(pseudo, theta, model, batch.size());
  }
  const Var l_v = mean_in_order(losses);
  EpisodeResult result;
  result.diag.loss = result.diag.l_v = l_v.item();
  result.diag.d_in = result.diag.d_out = result.diag.l_c = kNaN;
  result.gradient = reptile ? theta.with_values(pseudo) : to_params(theta, tape.gradient(l_v, vars));
  result.diag.tape_bytes = tape.bytes();
  result.diag.tape_nodes = tape.size();
  result.diag.adapt_calls = learner.adapt_calls() - calls_before;
  return result;
}

EpisodeResult run_episode_conml(const MetaLearner& learner, std::span<const TaskInstance> batch,
                                const ParamVector& theta, const ContrastiveConfig& cfg,
                                Rng& subset_rng) {
  cfg.validate();
  if (batch.size() < 2) {
    throw std::invalid_argument("episode: contrastive training needs a batch of at least 2 tasks");
  }
  const long calls_before = learner.adapt_calls();
  const bool reptile = is_reptile(learner);
  const bool reuse_train = cfg.strategy.kind == SubsetKind::kTrainOnly;
  Tape tape;
  const auto vars = bind_variables(tape, theta);
  const AdaptOptions opts{learner.train_options().steps, !reptile};
  const AdaptOptions repr_opts = learner.train_options();

  std::vector<Var> losses, d_in, stars;
  Eigen::VectorXd pseudo = Eigen::VectorXd::Zero(theta.total_size());
  for (const TaskInstance& task : batch) {
    require_val(task);
    const std::vector<Dataset> subsets = sample_subsets(task, cfg.strategy, cfg.k, subset_rng);
    std::vector<Var> subset_reps;
    TaskModel train_model;
    for (std::size_t k = 0; k < subsets.size(); ++k) {
      TaskModel m = learner.adapt(vars, subsets[k], reptile ? opts : repr_opts);
      subset_reps.push_back(learner.represent(m));
      // Under train-only every subset is D_tr, so the first adaptation doubles
      // as the one the validation loss needs.
      if (k == 0 && reuse_train) train_model = std::move(m);
    }
    if (!reuse_train) train_model = learner.adapt(vars, task.train, opts);
    losses.push_back(learner.loss(train_model, task.val));
    if (reptile) accumulate_reptile(pseudo, theta, train_model, batch.size());

    const Var star = learner.represent(learner.adapt(vars, task.pooled(), repr_opts));
    stars.push_back(star);
    d_in.push_back(reshape(inner_task_distance(cfg.distance, stack_rows(subset_reps),
                                               cfg.stop_grad_e_star ? detach(star) : star),
                           Shape{1, 1}));
  }

  const Var l_v = mean_in_order(losses);
  const Var d_in_col = concat(d_in, 0);
  const Var d_in_mean = mean_in_order(d_in);
  const Var pairwise = pairwise_distances(cfg.distance, stack_rows(stars));
  const Var d_out = off_diagonal_mean(pairwise);
  Var contrast;
  if (cfg.form == LossForm::kInfoNce) {
    contrast = infonce_loss(d_in_col, pairwise);
  } else {
    switch (cfg.terms) {
      case ContrastTerms::kBoth: contrast = simple_contrastive(d_in_mean, d_out); break;
      case ContrastTerms::kInnerOnly: contrast = d_in_mean; break;
      case ContrastTerms::kOuterOnly: contrast = -d_out; break;
    }
  }
  const Var total = combined_loss(l_v, contrast, cfg.lambda);

  EpisodeResult result;
  result.diag.loss = total.item();
  result.diag.l_v = l_v.item();
  result.diag.d_in = d_in_mean.item();
  result.diag.d_out = d_out.item();
  result.diag.l_c = contrast.item();
  if (reptile) {
    const Var weighted = contrast * cfg.lambda;
    const ParamVector g = to_params(theta, tape.gradient(weighted, vars));
    result.gradient = theta.with_values(pseudo + g.flatten());
  } else {
    result.gradient = to_params(theta, tape.gradient(total, vars));
  }
  result.diag.tape_bytes = tape.bytes();
  result.diag.tape_nodes = tape.size();
  result.diag.adapt_calls = learner.adapt_calls() - calls_before;
  return result;
}

GradCheckResult check_episode_gradient(const MetaLearner& learner,
                                       std::span<const TaskInstance> batch,
                                       const ParamVector& theta, const ContrastiveConfig* cfg,
                                       std::uint64_t subset_seed, double eps) {
  if (is_reptile(learner)) throw std::invalid_argument("gradcheck: reptile has no objective gradient");
  auto run = [&](const ParamVector& at) {
    if (!cfg) return run_episode_baseline(learner, batch, at);
    Rng rng(subset_seed);
    return run_episode_conml(learner, batch, at, *cfg, rng);
  };
  const ScalarFn objective = [&](Tape& tape, std::span<const Var> vars) {
    Eigen::VectorXd flat(theta.total_size());
    Index offset = 0;
    for (const Var& v : vars) {
      for (double x : v.value().flat()) flat[offset++] = x;
    }
    return tape.constant(Tensor::scalar(run(theta.with_values(flat)).diag.loss));
  };
  return compare_with_finite_differences(objective, theta, run(theta).gradient, eps);
}

std::vector<TaskInstance> episode_batch(const TrainingSpec& spec, long episode) {
  Rng rng(derive_seed(spec.seed, Stream::kTasks, static_cast<std::uint64_t>(episode)));
  return sample_batch(spec.tasks, spec.episode.batch_size, rng);
}

TrainResult meta_train_from(const TrainingSpec& spec, const MetaLearner& learner,
                            ParamVector theta, long first_episode, long episodes,
                            const EpisodeCallback& on_episode) {
  spec.validate();
  Optimizer opt(spec.episode.optimizer);
  TrainResult result;
  result.trace.reserve(static_cast<std::size_t>(std::max(episodes, 0L)));
  const auto start = std::chrono::steady_clock::now();
  for (long e = first_episode; e < first_episode + episodes; ++e) {
    const std::vector<TaskInstance> batch = episode_batch(spec, e);
    EpisodeResult step;
    if (spec.conml) {
      Rng subset_rng(derive_seed(spec.seed, Stream::kSubsets, static_cast<std::uint64_t>(e)));
      step = run_episode_conml(learner, batch, theta, spec.contrastive, subset_rng);
    } else {
      step = run_episode_baseline(learner, batch, theta);
    }
    if (!std::isfinite(step.diag.loss)) throw DivergenceError(e, "non-finite loss");
    if (!step.gradient.flatten().allFinite()) throw DivergenceError(e, "non-finite gradient");
    opt.step(theta, step.gradient);
    result.peak_tape_bytes = std::max(result.peak_tape_bytes, step.diag.tape_bytes);
    result.trace.push_back({e, step.diag});
    if (on_episode) on_episode(result.trace.back(), theta);
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.theta = std::move(theta);
  return result;
}

TrainResult meta_train(const TrainingSpec& spec, const EpisodeCallback& on_episode) {
  spec.validate();
  const auto learner = make_learner(spec.learner, problem_shape(spec.tasks));
  ParamVector theta = learner->init(derive_seed(spec.seed, Stream::kInit));
  return meta_train_from(spec, *learner, std::move(theta), 0, spec.episode.episodes, on_episode);
}

std::string trace_csv(std::span<const EpisodeRecord> trace) {
  std::string out = "episode,l_v,d_in,d_out,l_c,loss\n";
  char line[256];
  for (const EpisodeRecord& r : trace) {
    std::snprintf(line, sizeof(line), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.episode, r.diag.l_v,
                  r.diag.d_in, r.diag.d_out, r.diag.l_c, r.diag.loss);
    out += line;
  }
  return out;
}

}  // namespace conml
