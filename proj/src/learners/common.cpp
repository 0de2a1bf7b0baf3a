#include "conml/learners/learner.hpp"

#include <cmath>
#include <stdexcept>

namespace conml {

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::kMaml: return "maml";
    case LearnerKind::kProtoNet: return "protonet";
    case LearnerKind::kHyperNet: return "hypernet";
  }
  return "?";
}

LearnerKind learner_kind_from_string(const std::string& s) {
  if (s == "maml") return LearnerKind::kMaml;
  if (s == "protonet") return LearnerKind::kProtoNet;
  if (s == "hypernet") return LearnerKind::kHyperNet;
  throw std::invalid_argument("unknown learner kind '" + s + "'");
}

std::string to_string(MamlOrder order) {
  switch (order) {
    case MamlOrder::kSecond: return "second";
    case MamlOrder::kFirst: return "first";
    case MamlOrder::kReptile: return "reptile";
  }
  return "?";
}

MamlOrder maml_order_from_string(const std::string& s) {
  if (s == "second") return MamlOrder::kSecond;
  if (s == "first") return MamlOrder::kFirst;
  if (s == "reptile") return MamlOrder::kReptile;
  throw std::invalid_argument("unknown MAML order '" + s + "'");
}

namespace {

void check_widths(const std::vector<int>& widths, const char* what) {
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument(std::string(what) + ": layer widths must be >= 1");
  }
}

}  // namespace

void MamlConfig::validate() const {
  check_widths(hidden, "maml.hidden");
  if (!(inner_lr >= 0.0)) throw std::invalid_argument("maml.inner_lr must be >= 0");
  if (inner_steps < 1 || test_steps < 1) {
    throw std::invalid_argument("maml.inner_steps and maml.test_steps must be >= 1");
  }
}

void ProtoNetConfig::validate() const {
  check_widths(hidden, "protonet.hidden");
  if (embedding_dim < 1) throw std::invalid_argument("protonet.embedding_dim must be >= 1");
}

void HyperNetConfig::validate() const {
  if (encoder_hidden.empty() || decoder_hidden.empty()) {
    throw std::invalid_argument("hypernet: encoder_hidden and decoder_hidden need a layer");
  }
  check_widths(encoder_hidden, "hypernet.encoder_hidden");
  check_widths(decoder_hidden, "hypernet.decoder_hidden");
  if (task_dim < 1) throw std::invalid_argument("hypernet.task_dim must be >= 1");
}

nlohmann::json to_json(const LearnerConfig& cfg) {
  nlohmann::json j{{"kind", to_string(cfg.kind)}};
  switch (cfg.kind) {
    case LearnerKind::kMaml:
      j["maml"] = {{"hidden", cfg.maml.hidden},
                   {"inner_lr", cfg.maml.inner_lr},
                   {"inner_steps", cfg.maml.inner_steps},
                   {"test_steps", cfg.maml.test_steps},
                   {"order", to_string(cfg.maml.order)},
                   {"bias", cfg.maml.bias}};
      break;
    case LearnerKind::kProtoNet:
      j["protonet"] = {{"hidden", cfg.proto.hidden}, {"embedding_dim", cfg.proto.embedding_dim}};
      break;
    case LearnerKind::kHyperNet:
      j["hypernet"] = {{"encoder_hidden", cfg.hyper.encoder_hidden},
                       {"task_dim", cfg.hyper.task_dim},
                       {"decoder_hidden", cfg.hyper.decoder_hidden}};
      break;
  }
  return j;
}

ProblemShape problem_shape(const TaskDistributionConfig& tasks) {
  return {tasks.input_dim(), tasks.output_dim(), tasks.kind == TaskKind::kGaussianBlobs};
}

Var MetaLearner::loss(const TaskModel& model, const Dataset& d) const {
  if (d.empty()) throw std::invalid_argument("loss: empty dataset");
  const Var out = predict(model, d.xs);
  return shape_.classification ? cross_entropy(out, d.labels) : mse_loss(out, d.ys);
}

void add_mlp(ParamVector& params, const std::string& prefix, int in, std::span<const int> hidden,
             int out, Rng& rng, bool bias) {
  std::vector<int> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    Tensor w = Tensor::zeros(Shape{widths[l], widths[l + 1]});
    for (double& v : w.flat()) v = rng.uniform(-bound, bound);
    params.add(prefix + ".w" + std::to_string(l), std::move(w));
    if (bias) {
      Tensor b = Tensor::zeros(Shape{widths[l + 1]});
      for (double& v : b.flat()) v = rng.uniform(-bound, bound);
      params.add(prefix + ".b" + std::to_string(l), std::move(b));
    }
  }
}

Var mlp_forward(std::span<const Var> layers, Var x, bool bias, bool relu_last) {
  const std::size_t stride = bias ? 2 : 1;
  if (layers.empty() || layers.size() % stride != 0) {
    throw std::invalid_argument("mlp_forward: malformed layer list");
  }
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); i += stride) {
    h = matmul(h, layers[i]);
    if (bias) h = h + layers[i + 1];
    if (i + stride < layers.size() || relu_last) h = relu(h);
  }
  return h;
}

Var mse_loss(Var pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + pred.shape().str() + " vs target " +
                     target.shape().str());
  }
  return mean(square(pred - pred.tape()->constant(target)));
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& z = logits.value().values();
  const Index n = z.rows(), k = z.cols();
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     logits.shape().str());
  }
  Tape& tape = *logits.tape();
  // Row max as a constant shift keeps exp() in range.
  Matrix shift(n, k);
  Matrix onehot = Matrix::Zero(n, k);
  for (Index i = 0; i < n; ++i) {
    shift.row(i).setConstant(z.row(i).maxCoeff());
    onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  }
  const Var shifted = logits - tape.constant(Tensor::from_matrix(std::move(shift)));
  const Var row_sums = matmul(exp(shifted), tape.constant(Tensor::ones(Shape{k, 1})));
  const Var picked = sum(shifted * tape.constant(Tensor::from_matrix(std::move(onehot))));
  return (sum(log(row_sums)) - picked) / static_cast<double>(n);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const auto e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

std::unique_ptr<MetaLearner> make_learner(const LearnerConfig& cfg, const ProblemShape& shape) {
  switch (cfg.kind) {
    case LearnerKind::kMaml: return std::make_unique<MamlLearner>(shape, cfg.maml);
    case LearnerKind::kProtoNet: return std::make_unique<ProtoNetLearner>(shape, cfg.proto);
    case LearnerKind::kHyperNet: return std::make_unique<HyperNetLearner>(shape, cfg.hyper);
  }
  throw std::invalid_argument("make_learner: unknown kind");
}

}  // namespace conml
