#include "conml/autodiff/gradcheck.hpp"
#include "conml/contrastive/contrastive.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace conml {
namespace {

using Vec = Eigen::RowVectorXd;

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TEST(Distance, CosineExamples) {
  EXPECT_EQ(distance(DistanceKind::kCosine, vec({1, 0}), vec({1, 0})), 0.0);
  EXPECT_EQ(distance(DistanceKind::kCosine, vec({1, 0}), vec({0, 1})), 1.0);
  EXPECT_EQ(distance(DistanceKind::kCosine, vec({1, 0}), vec({-1, 0})), 2.0);
  Tape tape;
  auto v = [&](std::initializer_list<double> x) { return tape.variable(Tensor::vector(x)); };
  EXPECT_NEAR(distance(DistanceKind::kCosine, v({1, 0}), v({1, 0})).item(), 0.0, 1e-15);
  EXPECT_NEAR(distance(DistanceKind::kCosine, v({1, 0}), v({0, 1})).item(), 1.0, 1e-15);
  EXPECT_NEAR(distance(DistanceKind::kCosine, v({1, 0}), v({-1, 0})).item(), 2.0, 1e-15);
}

TEST(Distance, SigmoidEuclideanSelfDistance) {
  EXPECT_EQ(distance(DistanceKind::kSigmoidEuclidean, vec({3, -1}), vec({3, -1})), 0.5);
  Tape tape;
  const Var x = tape.variable(Tensor::vector({3, -1}));
  EXPECT_EQ(distance(DistanceKind::kSigmoidEuclidean, x, x).item(), 0.5);
  const double far = distance(DistanceKind::kSigmoidEuclidean, vec({0, 0}), vec({3, 4}));
  EXPECT_NEAR(far, 1.0 / (1.0 + std::exp(-5.0)), 1e-15);
}

TEST(Distance, ZeroVectorRejectedUnderCosine) {
  EXPECT_THROW(distance(DistanceKind::kCosine, vec({0, 0}), vec({1, 0})), std::invalid_argument);
  Tape tape;
  const Var z = tape.variable(Tensor::vector({0, 0}));
  const Var a = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(distance(DistanceKind::kCosine, a, z), std::invalid_argument);
  EXPECT_NO_THROW(distance(DistanceKind::kEuclidean, a, z));
}

TEST(Distance, SymmetryAndScaleInvariance) {
  const Matrix m = oracle::random_rows(20, 7, 1);
  for (DistanceKind kind :
       {DistanceKind::kCosine, DistanceKind::kSigmoidEuclidean, DistanceKind::kEuclidean}) {
    for (Index i = 0; i + 1 < m.rows(); i += 2) {
      EXPECT_NEAR(distance(kind, m.row(i), m.row(i + 1)), distance(kind, m.row(i + 1), m.row(i)),
                  1e-12);
    }
  }
  for (Index i = 0; i + 1 < m.rows(); i += 2) {
    for (double c : {0.01, 3.0, 250.0}) {
      const Vec scaled = m.row(i + 1) * c;
      EXPECT_NEAR(distance(DistanceKind::kCosine, m.row(i), scaled),
                  distance(DistanceKind::kCosine, m.row(i), m.row(i + 1)), 1e-12);
    }
  }
  Tape tape;
  const Var reps = tape.variable(Tensor::from_matrix(m));
  for (DistanceKind kind :
       {DistanceKind::kCosine, DistanceKind::kSigmoidEuclidean, DistanceKind::kEuclidean}) {
    const Matrix d = pairwise_distances(kind, reps).value().values();
    for (Index i = 0; i < d.rows(); ++i) {
      for (Index j = 0; j < i; ++j) EXPECT_NEAR(d(i, j), d(j, i), 1e-12);
    }
  }
}

TEST(Aggregation, InnerTaskExamples) {
  Matrix subsets(2, 2);
  subsets << 0.2, 0.0, 0.4, 0.0;
  const Vec origin = vec({0, 0});
  EXPECT_NEAR(inner_task_distance(DistanceKind::kEuclidean, subsets, origin), 0.3, 1e-15);
  Tape tape;
  const Var s = tape.variable(Tensor::from_matrix(subsets));
  const Var e = tape.variable(Tensor::vector({0, 0}));
  EXPECT_NEAR(inner_task_distance(DistanceKind::kEuclidean, s, e).item(), 0.3, 1e-15);
  const Var same = tape.variable(Tensor::matrix({{1, 2, 3}}));
  const Var star = tape.variable(Tensor::vector({1, 2, 3}));
  EXPECT_NEAR(inner_task_distance(DistanceKind::kCosine, same, star).item(), 0.0, 1e-15);
}

TEST(Aggregation, InterTaskExamples) {
  Tape tape;
  const Var basis = tape.variable(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  EXPECT_NEAR(inter_task_distance(DistanceKind::kCosine, basis).item(), 1.0, 1e-15);
  const Var pair = tape.variable(Tensor::matrix({{1, 2}, {-3, 1}}));
  EXPECT_NEAR(inter_task_distance(DistanceKind::kCosine, pair).item(),
              distance(DistanceKind::kCosine, vec({1, 2}), vec({-3, 1})), 1e-15);
  const Var same = tape.variable(Tensor::matrix({{1, 2}, {1, 2}, {1, 2}}));
  EXPECT_NEAR(inter_task_distance(DistanceKind::kCosine, same).item(), 0.0, 1e-15);
  EXPECT_NEAR(inter_task_distance(DistanceKind::kEuclidean, same).item(), 0.0, 1e-15);
  const Var one = tape.variable(Tensor::matrix({{1, 2}}));
  EXPECT_THROW(inter_task_distance(DistanceKind::kCosine, one), std::invalid_argument);
}

TEST(Aggregation, MatchesBruteForceDoubleSums) {
  for (unsigned seed = 0; seed < 20; ++seed) {
    const Index b = 2 + seed % 7, d = 1 + seed % 5;
    const Matrix reps = oracle::random_rows(b, d, seed);
    const Matrix subsets = oracle::random_rows(3, d, seed + 100);
    for (DistanceKind kind :
         {DistanceKind::kCosine, DistanceKind::kSigmoidEuclidean, DistanceKind::kEuclidean}) {
      long double out = 0;
      for (Index i = 0; i < b; ++i) {
        for (Index j = 0; j < b; ++j) {
          if (i != j) out += oracle::phi(kind, reps, i, reps, j);
        }
      }
      out /= static_cast<long double>(b * (b - 1));
      long double in = 0;
      for (Index k = 0; k < 3; ++k) in += oracle::phi(kind, subsets, k, reps, 0);
      in /= 3;

      Tape tape;
      const Var r = tape.variable(Tensor::from_matrix(reps));
      const Var s = tape.variable(Tensor::from_matrix(subsets));
      const Var e0 = reshape(columns(reshape(r, Shape{b * d}), 0, d), Shape{d});
      EXPECT_NEAR(inter_task_distance(kind, r).item(), static_cast<double>(out), 1e-12);
      EXPECT_NEAR(inner_task_distance(kind, s, e0).item(), static_cast<double>(in), 1e-12);
      EXPECT_NEAR(inter_task_distance(kind, reps), static_cast<double>(out), 1e-12);
      EXPECT_NEAR(inner_task_distance(kind, subsets, reps.row(0)), static_cast<double>(in), 1e-12);
    }
  }
}

TEST(Objective, SimpleAndCombined) {
  EXPECT_NEAR(simple_contrastive(0.3, 0.5), -0.2, 1e-15);
  EXPECT_EQ(simple_contrastive(0.0, 0.0), 0.0);
  EXPECT_NEAR(combined_loss(1.0, simple_contrastive(0.3, 0.5), 0.1), 0.98, 1e-15);
  EXPECT_EQ(combined_loss(0.731, -12.5, 0.0), 0.731);
  Tape tape;
  const Var lv = tape.variable(Tensor::scalar(1.0));
  const Var c = simple_contrastive(tape.variable(Tensor::scalar(0.3)),
                                   tape.variable(Tensor::scalar(0.5)));
  EXPECT_NEAR(combined_loss(lv, c, 0.1).item(), 0.98, 1e-15);
  EXPECT_EQ(combined_loss(lv, c, 0.0).item(), 1.0);
}

TEST(Objective, SimpleTermDescentAlignsAndSeparates) {
  // Two tasks, one subset representation each, all free.
  Matrix stars(2, 3), subs(2, 3);
  stars << 1.0, 0.2, 0.1, 0.9, 0.4, -0.1;
  subs << 0.3, 1.0, 0.2, -0.2, 0.6, 1.0;
  auto measure = [&](double& din, double& dout) {
    din = 0.5 * (inner_task_distance(DistanceKind::kCosine, subs.row(0), stars.row(0)) +
                 inner_task_distance(DistanceKind::kCosine, subs.row(1), stars.row(1)));
    dout = inter_task_distance(DistanceKind::kCosine, stars);
  };
  double din0, dout0;
  measure(din0, dout0);
  for (int step = 0; step < 50; ++step) {
    Tape tape;
    const Var st = tape.variable(Tensor::from_matrix(stars));
    const Var sb = tape.variable(Tensor::from_matrix(subs));
    const Var pair = pairwise_distances(DistanceKind::kCosine, st);
    const Var din = (inner_task_distance(DistanceKind::kCosine, reshape(columns(reshape(sb, Shape{6}), 0, 3), Shape{1, 3}),
                                         reshape(columns(reshape(st, Shape{6}), 0, 3), Shape{3})) +
                     inner_task_distance(DistanceKind::kCosine, reshape(columns(reshape(sb, Shape{6}), 3, 3), Shape{1, 3}),
                                         reshape(columns(reshape(st, Shape{6}), 3, 3), Shape{3}))) *
                    0.5;
    const Var loss = simple_contrastive(din, off_diagonal_mean(pair));
    const std::vector<Var> wrt{st, sb};
    const auto g = tape.gradient(loss, wrt);
    stars -= 0.1 * g[0].values();
    subs -= 0.1 * g[1].values();
  }
  double din1, dout1;
  measure(din1, dout1);
  EXPECT_LT(din1, din0);
  EXPECT_GT(dout1, dout0);
}

TEST(InfoNce, SymmetricLogits) {
  Eigen::Vector2d din(0.7, 0.7);
  Eigen::Matrix2d dout = Eigen::Matrix2d::Constant(0.7);
  EXPECT_NEAR(infonce_loss(din, dout), 2.0 * std::log(2.0), 1e-15);
  Tape tape;
  const Var vin = tape.variable(Tensor::matrix({{0.7}, {0.7}}));
  const Var vout = tape.variable(Tensor::full(Shape{2, 2}, 0.7));
  EXPECT_NEAR(infonce_loss(vin, vout).item(), 2.0 * std::log(2.0), 1e-15);
}

TEST(InfoNce, Asymptote) {
  Eigen::Vector3d din = Eigen::Vector3d::Zero();
  Eigen::Matrix3d dout = Eigen::Matrix3d::Constant(800.0);
  EXPECT_LT(infonce_loss(din, dout), 1e-300);
  Tape tape;
  const Var vin = tape.variable(Tensor::zeros(Shape{3, 1}));
  const Var vout = tape.variable(Tensor::full(Shape{3, 3}, 800.0));
  EXPECT_LT(infonce_loss(vin, vout).item(), 1e-300);
  EXPECT_TRUE(std::isfinite(infonce_loss(Eigen::Vector2d(900.0, 900.0), Eigen::Matrix2d::Constant(1000.0))));
}

TEST(InfoNce, MatchesHighPrecisionBruteForce) {
  for (unsigned seed = 0; seed < 30; ++seed) {
    const Index b = 2 + seed % 7;
    const Matrix raw_in = oracle::random_rows(b, 1, seed).cwiseAbs();
    const Matrix raw_out = oracle::random_rows(b, b, seed + 50).cwiseAbs() * 1.5;
    std::vector<long double> din(static_cast<std::size_t>(b));
    std::vector<std::vector<long double>> dout(static_cast<std::size_t>(b),
                                               std::vector<long double>(static_cast<std::size_t>(b)));
    for (Index i = 0; i < b; ++i) {
      din[i] = raw_in(i, 0);
      for (Index j = 0; j < b; ++j) dout[i][j] = raw_out(i, j);
    }
    const double expect = static_cast<double>(oracle::infonce(din, dout));
    EXPECT_NEAR(infonce_loss(raw_in.col(0), raw_out), expect, 1e-9);
    Tape tape;
    const Var vin = tape.variable(Tensor::from_matrix(raw_in));
    const Var vout = tape.variable(Tensor::from_matrix(raw_out));
    EXPECT_NEAR(infonce_loss(vin, vout).item(), expect, 1e-9);
  }
}

// Full contrastive term over B task representations and one subset each.
ScalarFn contrastive_fn(DistanceKind kind, LossForm form, Index b, Index d) {
  return [=](Tape&, std::span<const Var> th) {
    const Var stars = th[0];
    const Var subs = th[1];
    const Var flat_stars = reshape(stars, Shape{b * d});
    const Var flat_subs = reshape(subs, Shape{b * d});
    std::vector<Var> din;
    for (Index t = 0; t < b; ++t) {
      din.push_back(reshape(inner_task_distance(kind, reshape(columns(flat_subs, t * d, d), Shape{1, d}),
                                                columns(flat_stars, t * d, d)),
                            Shape{1, 1}));
    }
    const Var din_col = concat(din, 0);
    const Var pair = pairwise_distances(kind, stars);
    if (form == LossForm::kInfoNce) return infonce_loss(din_col, pair);
    return simple_contrastive(mean(din_col), off_diagonal_mean(pair));
  };
}

TEST(Gradients, AllFormsAndDistances) {
  const Index b = 4, d = 3;
  ParamVector theta;
  theta.add("stars", Tensor::from_matrix(oracle::random_rows(b, d, 7)));
  theta.add("subsets", Tensor::from_matrix(oracle::random_rows(b, d, 8)));
  for (DistanceKind kind : {DistanceKind::kCosine, DistanceKind::kSigmoidEuclidean}) {
    EXPECT_LE(finite_diff_check(contrastive_fn(kind, LossForm::kSimple, b, d), theta), 1e-6)
        << to_string(kind);
  }
  for (DistanceKind kind :
       {DistanceKind::kCosine, DistanceKind::kSigmoidEuclidean, DistanceKind::kEuclidean}) {
    EXPECT_LE(finite_diff_check(contrastive_fn(kind, LossForm::kInfoNce, b, d), theta), 1e-6)
        << to_string(kind);
  }
}

TEST(Gradients, InnerDistanceHasNoCrossTaskTerms) {
  Tape tape;
  const Var star0 = tape.variable(Tensor::vector({1, 2, 0.5}));
  const Var star1 = tape.variable(Tensor::vector({-1, 0.3, 2}));
  const Var sub0 = tape.variable(Tensor::matrix({{0.2, 1, 1}}));
  const Var pair = pairwise_distances(DistanceKind::kCosine,
                                      concat(std::vector<Var>{reshape(star0, Shape{1, 3}),
                                                              reshape(star1, Shape{1, 3})},
                                             0));
  (void)pair;
  const Var din0 = inner_task_distance(DistanceKind::kCosine, sub0, star0);
  const std::vector<Var> wrt{star0, star1};
  const auto g = tape.gradient(din0, wrt);
  EXPECT_GT(g[0].values().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g[1].values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Config, Validation) {
  ContrastiveConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.distance = DistanceKind::kEuclidean;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.form = LossForm::kInfoNce;
  EXPECT_NO_THROW(cfg.validate());
  cfg.terms = ContrastTerms::kInnerOnly;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  ContrastiveConfig neg;
  neg.lambda = -0.1;
  EXPECT_THROW(neg.validate(), std::invalid_argument);
  EXPECT_EQ(distance_kind_from_string(to_string(DistanceKind::kSigmoidEuclidean)),
            DistanceKind::kSigmoidEuclidean);
  EXPECT_THROW(loss_form_from_string("triplet"), std::invalid_argument);
}

}  // namespace
}  // namespace conml
