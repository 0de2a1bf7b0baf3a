#include "conml/learners/learner.hpp"

#include <stdexcept>

namespace conml {

ProtoNetLearner::ProtoNetLearner(ProblemShape shape, ProtoNetConfig cfg)
    : MetaLearner(shape), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (!shape.classification) throw std::invalid_argument("protonet needs a classification task");
}

ParamVector ProtoNetLearner::init(std::uint64_t seed) const {
  Rng rng(seed);
  ParamVector params;
  add_mlp(params, "encoder", shape().input_dim, cfg_.hidden, cfg_.embedding_dim, rng);
  return params;
}

Index ProtoNetLearner::repr_dim() const {
  return static_cast<Index>(shape().output_dim) * cfg_.embedding_dim;
}

TaskModel ProtoNetLearner::do_adapt(std::span<const Var> theta, const Dataset& d,
                                    const AdaptOptions&) const {
  if (d.empty()) throw std::invalid_argument("protonet adapt: empty dataset");
  const int ways = shape().output_dim;
  std::vector<int> counts(static_cast<std::size_t>(ways), 0);
  for (int l : d.labels) {
    if (l < 0 || l >= ways) throw std::invalid_argument("protonet adapt: label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  // Row j of `avg` holds 1/|D_j| at the positions of class j.
  Matrix avg = Matrix::Zero(ways, d.size());
  for (int j = 0; j < ways; ++j) {
    if (counts[static_cast<std::size_t>(j)] == 0) {
      throw std::invalid_argument("protonet adapt: class " + std::to_string(j) +
                                  " has no support samples");
    }
  }
  for (Index i = 0; i < d.size(); ++i) {
    const int l = d.labels[static_cast<std::size_t>(i)];
    avg(l, i) = 1.0 / counts[static_cast<std::size_t>(l)];
  }
  ProtoModel model{std::vector<Var>(theta.begin(), theta.end()), Var{}};
  Tape& tape = *model.encoder.front().tape();
  const Var emb = mlp_forward(model.encoder, tape.constant(d.xs));
  model.prototypes = matmul(tape.constant(Tensor::from_matrix(std::move(avg))), emb);
  return model;
}

Var ProtoNetLearner::represent(const TaskModel& model) const {
  const Var c = std::get<ProtoModel>(model).prototypes;
  return reshape(c, Shape{c.value().numel()});
}

Var ProtoNetLearner::predict(const TaskModel& model, const Tensor& xs) const {
  const auto& m = std::get<ProtoModel>(model);
  Tape& tape = *m.prototypes.tape();
  const Var emb = mlp_forward(m.encoder, tape.constant(xs));
  const Index n = xs.shape().rows();
  const Index ways = m.prototypes.shape().rows();
  const Index e = m.prototypes.shape().cols();
  const Var ct = transpose(m.prototypes);
  // ||x||^2 + ||c||^2 - 2 x.c, each term expanded to n x ways.
  const Var xx = matmul(square(emb), tape.constant(Tensor::ones(Shape{e, ways})));
  const Var cc = matmul(tape.constant(Tensor::ones(Shape{n, e})), square(ct));
  const Var xc = matmul(emb, ct);
  return -(xx + cc - xc * 2.0);
}

nlohmann::json ProtoNetLearner::config_json() const {
  LearnerConfig cfg;
  cfg.kind = LearnerKind::kProtoNet;
  cfg.proto = cfg_;
  return to_json(cfg);
}

}  // namespace conml
