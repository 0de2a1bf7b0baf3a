#include "conml/experiment/gradcheck_suite.hpp"

#include "conml/autodiff/gradcheck.hpp"
#include "conml/contrastive/contrastive.hpp"
#include "conml/learners/learner.hpp"
#include "conml/training/training.hpp"

namespace conml {
namespace {

constexpr int kBatch = 3;

ParamVector random_params(std::initializer_list<std::pair<const char*, Shape>> entries, Rng& rng) {
  ParamVector p;
  for (const auto& [name, shape] : entries) {
    Tensor t = Tensor::zeros(shape);
    for (double& x : t.flat()) x = rng.normal(0.0, 1.0);
    p.add(name, std::move(t));
  }
  return p;
}

/// Rows [begin, begin + count) of a [n, d] matrix.
Var row_block(Var m, Index begin, Index count) {
  const Index n = m.shape().rows(), d = m.shape().cols();
  return reshape(columns(reshape(m, Shape{n * d}), begin * d, count * d), Shape{count, d});
}

GradcheckEntry from_result(std::string name, const GradCheckResult& r) {
  return {std::move(name), r.max_rel_error, static_cast<long>(r.coords_checked), false, {}};
}

GradcheckEntry check_fn(std::string name, const ScalarFn& f, const ParamVector& theta) {
  return from_result(std::move(name), compare_with_finite_differences(f, theta, analytic_gradient(f, theta)));
}

struct EpisodeCase {
  std::string name;
  LearnerConfig learner;
  TaskDistributionConfig tasks;
  const ContrastiveConfig* contrastive = nullptr;
};

GradcheckEntry check_episode(const EpisodeCase& c, std::uint64_t seed) {
  const auto learner = make_learner(c.learner, problem_shape(c.tasks));
  const ParamVector theta = learner->init(seed);
  Rng rng(derive_seed(seed, Stream::kTasks));
  const auto batch = sample_batch(c.tasks, kBatch, rng);
  return from_result(c.name, check_episode_gradient(*learner, batch, theta, c.contrastive,
                                                    derive_seed(seed, Stream::kSubsets)));
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckEntry> out;
  Rng rng(seed);

  // Losses on their own.
  const Tensor target = random_params({{"y", Shape{6, 2}}}, rng)[0];
  const std::vector<int> labels{0, 2, 1, 1, 0, 2};
  out.push_back(check_fn(
      "loss/mse",
      [&](Tape&, std::span<const Var> v) { return mse_loss(v[0], target); },
      random_params({{"pred", Shape{6, 2}}}, rng)));
  out.push_back(check_fn(
      "loss/cross-entropy",
      [&](Tape&, std::span<const Var> v) { return cross_entropy(v[0], labels); },
      random_params({{"logits", Shape{6, 3}}}, rng)));

  // Contrastive terms over raw representations.
  const ParamVector reps = random_params({{"stars", Shape{4, 5}}, {"subsets", Shape{3, 5}}}, rng);
  for (DistanceKind kind :
       {DistanceKind::kCosine, DistanceKind::kSigmoidEuclidean, DistanceKind::kEuclidean}) {
    const std::string d = to_string(kind);
    out.push_back(check_fn("contrastive/d_in/" + d, [kind](Tape&, std::span<const Var> v) {
      return inner_task_distance(kind, v[1], reshape(row_block(v[0], 0, 1), Shape{5}));
    }, reps));
    out.push_back(check_fn("contrastive/d_out/" + d, [kind](Tape&, std::span<const Var> v) {
      return inter_task_distance(kind, v[0]);
    }, reps));
    out.push_back(check_fn("contrastive/infonce/" + d, [kind](Tape&, std::span<const Var> v) {
      std::vector<Var> d_in;
      for (Index i = 0; i < 3; ++i) {
        d_in.push_back(reshape(inner_task_distance(kind, v[1], reshape(row_block(v[0], i, 1), Shape{5})),
                               Shape{1, 1}));
      }
      const Var pairwise = pairwise_distances(kind, row_block(v[0], 0, 3));
      return infonce_loss(concat(d_in, 0), pairwise);
    }, reps));
  }

  // Episode objectives.
  TaskDistributionConfig sine;
  sine.shots = 5;
  sine.val_size = 5;
  TaskDistributionConfig blobs = sine;
  blobs.kind = TaskKind::kGaussianBlobs;
  blobs.shots = 2;
  blobs.val_size = 2;

  LearnerConfig maml;
  LearnerConfig maml2 = maml;
  maml2.maml.inner_steps = 2;
  LearnerConfig proto;
  proto.kind = LearnerKind::kProtoNet;
  LearnerConfig hyper;
  hyper.kind = LearnerKind::kHyperNet;

  ContrastiveConfig simple_cos;
  ContrastiveConfig simple_sig = simple_cos;
  simple_sig.distance = DistanceKind::kSigmoidEuclidean;
  ContrastiveConfig info_cos = simple_cos;
  info_cos.form = LossForm::kInfoNce;
  ContrastiveConfig info_euc = info_cos;
  info_euc.distance = DistanceKind::kEuclidean;
  ContrastiveConfig inner_only = simple_cos;
  inner_only.terms = ContrastTerms::kInnerOnly;
  ContrastiveConfig outer_only = simple_cos;
  outer_only.terms = ContrastTerms::kOuterOnly;
  ContrastiveConfig half = simple_cos;
  half.strategy = {SubsetKind::kRandomHalf, 0, false};
  half.k = 2;
  ContrastiveConfig proto_half = half;
  proto_half.strategy.class_balanced = true;
  for (ContrastiveConfig* c : {&simple_cos, &simple_sig, &info_cos, &info_euc, &inner_only,
                               &outer_only, &half, &proto_half}) {
    c->lambda = 0.5;
  }

  const std::vector<EpisodeCase> cases{
      {"episode/maml/second-order", maml, sine, nullptr},
      {"episode/maml/second-order/2-steps", maml2, sine, nullptr},
      {"episode/protonet", proto, blobs, nullptr},
      {"episode/hypernet", hyper, sine, nullptr},
      {"conml/maml/second-order/simple/cosine", maml, sine, &simple_cos},
      {"conml/maml/second-order/simple/sigmoid-euclidean", maml, sine, &simple_sig},
      {"conml/maml/second-order/infonce/cosine", maml, sine, &info_cos},
      {"conml/maml/second-order/infonce/euclidean", maml, sine, &info_euc},
      {"conml/maml/second-order/inner-only", maml, sine, &inner_only},
      {"conml/maml/second-order/outer-only", maml, sine, &outer_only},
      {"conml/maml/second-order/random-half-k2", maml, sine, &half},
      {"conml/protonet/simple/cosine", proto, blobs, &proto_half},
      {"conml/hypernet/simple/cosine", hyper, sine, &simple_cos},
  };
  for (const EpisodeCase& c : cases) out.push_back(check_episode(c, seed));

  out.push_back({"episode/maml/first-order", 0.0, 0, true,
                 "update drops second-order terms by design"});
  out.push_back({"episode/maml/reptile", 0.0, 0, true, "update is a parameter difference"});
  return out;
}

}  // namespace conml
