#pragma once

#include "conml/autodiff/param_vector.hpp"
#include "conml/autodiff/tape.hpp"
#include "conml/tasks/tasks.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace conml {

enum class LearnerKind { kMaml, kProtoNet, kHyperNet };
enum class MamlOrder { kSecond, kFirst, kReptile };

std::string to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& s);
std::string to_string(MamlOrder order);
MamlOrder maml_order_from_string(const std::string& s);

struct MamlConfig {
  std::vector<int> hidden{40, 40};
  double inner_lr = 0.01;
  int inner_steps = 1;
  int test_steps = 10;
  MamlOrder order = MamlOrder::kSecond;
  bool bias = true;

  void validate() const;
};

struct ProtoNetConfig {
  std::vector<int> hidden{64};
  int embedding_dim = 16;

  void validate() const;
};

/// Pair encoder over concat(x, y), mean-pooled and projected to the task
/// parameters α. The decoder's first hidden layer is scaled and shifted by
/// [γ | β] = α W + b.
struct HyperNetConfig {
  std::vector<int> encoder_hidden{40, 40};
  int task_dim = 32;
  std::vector<int> decoder_hidden{40, 40};

  void validate() const;
};

struct LearnerConfig {
  LearnerKind kind = LearnerKind::kMaml;
  MamlConfig maml;
  ProtoNetConfig proto;
  HyperNetConfig hyper;
};

nlohmann::json to_json(const LearnerConfig& cfg);

/// Input/output sizes of the tasks a learner is built for.
struct ProblemShape {
  int input_dim = 1;
  /// Regression output width, or the number of ways for classification.
  int output_dim = 1;
  bool classification = false;
};

ProblemShape problem_shape(const TaskDistributionConfig& tasks);

struct AdaptOptions {
  int steps = 1;
  /// Whether the adapted model must stay differentiable w.r.t. θ.
  bool differentiable = true;
};

struct MamlModel {
  std::vector<Var> weights;
};

struct ProtoModel {
  std::vector<Var> encoder;
  /// num_ways x embedding_dim, ascending label order.
  Var prototypes;
};

struct HyperModel {
  std::vector<Var> decoder;
  /// Rank-1 task parameters.
  Var alpha;
};

using TaskModel = std::variant<MamlModel, ProtoModel, HyperModel>;

/// g(D; θ) together with ψ, prediction and the episodic loss. Vars passed in
/// as θ decide the tape everything is recorded on.
class MetaLearner {
 public:
  virtual ~MetaLearner() = default;

  virtual LearnerKind kind() const = 0;
  virtual ParamVector init(std::uint64_t seed) const = 0;

  TaskModel adapt(std::span<const Var> theta, const Dataset& d, const AdaptOptions& opts) const {
    adapt_calls_.fetch_add(1, std::memory_order_relaxed);
    return do_adapt(theta, d, opts);
  }

  /// ψ(h) as a rank-1 Var of length repr_dim().
  virtual Var represent(const TaskModel& model) const = 0;
  /// Regression outputs (n x out) or class logits (n x ways).
  virtual Var predict(const TaskModel& model, const Tensor& xs) const = 0;
  /// MSE for regression, mean cross-entropy for classification.
  Var loss(const TaskModel& model, const Dataset& d) const;

  virtual Index repr_dim() const = 0;
  virtual nlohmann::json config_json() const = 0;

  const ProblemShape& shape() const { return shape_; }
  AdaptOptions train_options() const { return {train_steps(), true}; }
  AdaptOptions test_options() const { return {test_steps(), false}; }

  long adapt_calls() const { return adapt_calls_.load(std::memory_order_relaxed); }
  void reset_adapt_calls() const { adapt_calls_.store(0, std::memory_order_relaxed); }

 protected:
  explicit MetaLearner(ProblemShape shape) : shape_(shape) {}
  virtual TaskModel do_adapt(std::span<const Var> theta, const Dataset& d,
                             const AdaptOptions& opts) const = 0;
  virtual int train_steps() const { return 1; }
  virtual int test_steps() const { return 1; }

 private:
  ProblemShape shape_;
  mutable std::atomic<long> adapt_calls_{0};
};

class MamlLearner final : public MetaLearner {
 public:
  MamlLearner(ProblemShape shape, MamlConfig cfg);

  LearnerKind kind() const override { return LearnerKind::kMaml; }
  ParamVector init(std::uint64_t seed) const override;
  Var represent(const TaskModel& model) const override;
  Var predict(const TaskModel& model, const Tensor& xs) const override;
  Index repr_dim() const override { return repr_dim_; }
  nlohmann::json config_json() const override;
  const MamlConfig& config() const { return cfg_; }

 protected:
  TaskModel do_adapt(std::span<const Var> theta, const Dataset& d,
                     const AdaptOptions& opts) const override;
  int train_steps() const override { return cfg_.inner_steps; }
  int test_steps() const override { return cfg_.test_steps; }

 private:
  MamlConfig cfg_;
  Index repr_dim_;
};

class ProtoNetLearner final : public MetaLearner {
 public:
  ProtoNetLearner(ProblemShape shape, ProtoNetConfig cfg);

  LearnerKind kind() const override { return LearnerKind::kProtoNet; }
  ParamVector init(std::uint64_t seed) const override;
  Var represent(const TaskModel& model) const override;
  Var predict(const TaskModel& model, const Tensor& xs) const override;
  Index repr_dim() const override;
  nlohmann::json config_json() const override;

 protected:
  TaskModel do_adapt(std::span<const Var> theta, const Dataset& d,
                     const AdaptOptions& opts) const override;

 private:
  ProtoNetConfig cfg_;
};

class HyperNetLearner final : public MetaLearner {
 public:
  HyperNetLearner(ProblemShape shape, HyperNetConfig cfg);

  LearnerKind kind() const override { return LearnerKind::kHyperNet; }
  ParamVector init(std::uint64_t seed) const override;
  Var represent(const TaskModel& model) const override;
  Var predict(const TaskModel& model, const Tensor& xs) const override;
  Index repr_dim() const override { return cfg_.task_dim; }
  nlohmann::json config_json() const override;

 protected:
  TaskModel do_adapt(std::span<const Var> theta, const Dataset& d,
                     const AdaptOptions& opts) const override;

 private:
  HyperNetConfig cfg_;
  std::size_t encoder_params_;
};

std::unique_ptr<MetaLearner> make_learner(const LearnerConfig& cfg, const ProblemShape& shape);

// Building blocks shared by the learners.

/// Dense layers in→hidden...→out as (w, b) pairs named `prefix`.w<i>/b<i>,
/// initialized U(±1/√fan_in). Biases are omitted when `bias` is false.
void add_mlp(ParamVector& params, const std::string& prefix, int in, std::span<const int> hidden,
             int out, Rng& rng, bool bias = true);
/// Applies dense layers stored as consecutive (w[, b]) Vars with relu between
/// layers; `relu_last` also rectifies the final layer.
Var mlp_forward(std::span<const Var> layers, Var x, bool bias = true, bool relu_last = false);

Var mse_loss(Var pred, const Tensor& target);
/// Mean softmax cross-entropy of `logits` (n x ways) against `labels`.
Var cross_entropy(Var logits, std::span<const int> labels);
/// Row-wise softmax of plain values.
Matrix softmax_rows(const Matrix& logits);

}  // namespace conml
