#include "conml/learners/learner.hpp"

#include <stdexcept>

namespace conml {
namespace {

Index count_params(const ProblemShape& shape, const MamlConfig& cfg) {
  Index total = 0;
  int prev = shape.input_dim;
  std::vector<int> widths = cfg.hidden;
  widths.push_back(shape.output_dim);
  for (int w : widths) {
    total += static_cast<Index>(prev) * w + (cfg.bias ? w : 0);
    prev = w;
  }
  return total;
}

}  // namespace

MamlLearner::MamlLearner(ProblemShape shape, MamlConfig cfg)
    : MetaLearner(shape), cfg_(std::move(cfg)) {
  cfg_.validate();
  repr_dim_ = count_params(shape, cfg_);
}

ParamVector MamlLearner::init(std::uint64_t seed) const {
  Rng rng(seed);
  ParamVector params;
  add_mlp(params, "net", shape().input_dim, cfg_.hidden, shape().output_dim, rng, cfg_.bias);
  return params;
}

TaskModel MamlLearner::do_adapt(std::span<const Var> theta, const Dataset& d,
                                const AdaptOptions& opts) const {
  if (d.empty()) throw std::invalid_argument("maml adapt: empty dataset");
  if (theta.empty()) throw std::invalid_argument("maml adapt: empty parameter list");
  MamlModel model{std::vector<Var>(theta.begin(), theta.end())};
  std::vector<Var>& w = model.weights;
  Tape& tape = *w.front().tape();
  const bool graph = opts.differentiable && cfg_.order == MamlOrder::kSecond;
  for (int step = 0; step < opts.steps; ++step) {
    const Var inner = loss(model, d);
    if (graph) {
      const std::vector<Var> g = tape.gradient_graph(inner, w);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - g[i] * cfg_.inner_lr;
    } else {
      std::vector<Tensor> g = tape.gradient(inner, w);
      for (std::size_t i = 0; i < w.size(); ++i) {
        g[i].values() *= cfg_.inner_lr;
        w[i] = w[i] - tape.constant(std::move(g[i]));
      }
    }
  }
  return model;
}

Var MamlLearner::represent(const TaskModel& model) const {
  const auto& w = std::get<MamlModel>(model).weights;
  std::vector<Var> flat;
  flat.reserve(w.size());
  for (const Var& v : w) flat.push_back(reshape(v, Shape{v.value().numel()}));
  return concat(flat, 0);
}

Var MamlLearner::predict(const TaskModel& model, const Tensor& xs) const {
  const auto& w = std::get<MamlModel>(model).weights;
  return mlp_forward(w, w.front().tape()->constant(xs), cfg_.bias);
}

nlohmann::json MamlLearner::config_json() const {
  LearnerConfig cfg;
  cfg.kind = LearnerKind::kMaml;
  cfg.maml = cfg_;
  return to_json(cfg);
}

}  // namespace conml
