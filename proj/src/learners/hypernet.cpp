#include "conml/learners/learner.hpp"

#include <stdexcept>

namespace conml {

// Parameter layout: enc.* (pair encoder, all layers rectified), proj.w/b
// (pooled encoding to α), film.w/b (α to [γ | β]), dec.* (decoder).
HyperNetLearner::HyperNetLearner(ProblemShape shape, HyperNetConfig cfg)
    : MetaLearner(shape), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (shape.classification) throw std::invalid_argument("hypernet supports regression only");
  encoder_params_ = 2 * cfg_.encoder_hidden.size() + 2;
}

ParamVector HyperNetLearner::init(std::uint64_t seed) const {
  Rng rng(seed);
  ParamVector params;
  const int pair_dim = shape().input_dim + shape().output_dim;
  const std::vector<int> enc_hidden(cfg_.encoder_hidden.begin(), cfg_.encoder_hidden.end() - 1);
  add_mlp(params, "enc", pair_dim, enc_hidden, cfg_.encoder_hidden.back(), rng);
  add_mlp(params, "proj", cfg_.encoder_hidden.back(), {}, cfg_.task_dim, rng);
  add_mlp(params, "film", cfg_.task_dim, {}, 2 * cfg_.decoder_hidden.front(), rng);
  add_mlp(params, "dec", shape().input_dim, cfg_.decoder_hidden, shape().output_dim, rng);
  return params;
}

TaskModel HyperNetLearner::do_adapt(std::span<const Var> theta, const Dataset& d,
                                    const AdaptOptions&) const {
  if (d.empty()) throw std::invalid_argument("hypernet adapt: empty dataset");
  Tape& tape = *theta.front().tape();
  const Index n = d.size();
  const Var xs = tape.constant(d.xs);
  const Var ys = tape.constant(d.ys);
  const Var pairs = concat(std::vector<Var>{xs, ys}, 1);
  const auto enc = theta.subspan(0, encoder_params_ - 2);
  const Var h = mlp_forward(enc, pairs, true, true);
  const Var pooled = matmul(tape.constant(Tensor::full(Shape{1, n}, 1.0 / n)), h);
  const Var alpha = matmul(pooled, theta[encoder_params_ - 2]) + theta[encoder_params_ - 1];
  HyperModel model;
  model.alpha = reshape(alpha, Shape{cfg_.task_dim});
  model.decoder.assign(theta.begin() + static_cast<std::ptrdiff_t>(encoder_params_), theta.end());
  return model;
}

Var HyperNetLearner::represent(const TaskModel& model) const {
  return std::get<HyperModel>(model).alpha;
}

Var HyperNetLearner::predict(const TaskModel& model, const Tensor& xs) const {
  const auto& m = std::get<HyperModel>(model);
  Tape& tape = *m.alpha.tape();
  const Index width = cfg_.decoder_hidden.front();
  const Var film = matmul(reshape(m.alpha, Shape{1, cfg_.task_dim}), m.decoder[0]) + m.decoder[1];
  const Var gamma = reshape(columns(film, 0, width), Shape{width});
  const Var beta = reshape(columns(film, width, width), Shape{width});
  const Var first = relu(matmul(tape.constant(xs), m.decoder[2]) + m.decoder[3]);
  const Var modulated = first * (gamma + 1.0) + beta;
  return mlp_forward(std::span<const Var>(m.decoder).subspan(4), modulated);
}

nlohmann::json HyperNetLearner::config_json() const {
  LearnerConfig cfg;
  cfg.kind = LearnerKind::kHyperNet;
  cfg.hyper = cfg_;
  return to_json(cfg);
}

}  // namespace conml
