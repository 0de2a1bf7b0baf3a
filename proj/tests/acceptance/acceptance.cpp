// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and protocol sizes are fixed below.

#include "conml/eval/cluster_metrics.hpp"
#include "conml/eval/eval.hpp"
#include "conml/experiment/gradcheck_suite.hpp"
#include "conml/experiment/run.hpp"

#include "support/oracles.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace {

using namespace conml;

// ---- Pinned settings. ----
constexpr int kSeeds = 5;
constexpr long kEpisodes = 10000;
constexpr int kBatch = 25;
constexpr int kTrainShots = 5;
constexpr int kValSize = 10;
constexpr int kTestShots = 5;
constexpr int kTestTasks = 500;
constexpr int kTestPoints = 100;

constexpr int kMajority1 = 4;          // criteria 1, 2: at least 4 of 5 seeds
constexpr double kMseRatio = 0.8;      // criterion 1: mean ConML / mean MAML
constexpr int kMajority3 = 3;          // criterion 3: seed majority
constexpr double kExact = 1e-12;       // criteria 5, 6 (aggregations)
constexpr double kInfoNceTol = 1e-9;   // criterion 6
constexpr int kInfoNceMaxBatch = 8;
constexpr double kClusterTol = 1e-9;   // criterion 6
constexpr int kClusterMaxPoints = 50;
constexpr double kGradTol = 1e-4;      // criterion 7
constexpr double kTimeRatio = 1.5;     // criterion 8
constexpr int kMajority9 = 3;          // criterion 9
constexpr long kLambdaZeroEpisodes = 200;
constexpr long kDeterminismEpisodes = 200;
const std::vector<double> kDeltas{0.0, 1.0, 2.0, 3.0};

struct Verdict {
  int id;
  bool pass;
  std::string summary;
  std::vector<std::string> details;
};

std::vector<Verdict> verdicts;

void report(Verdict v) {
  std::printf("[%s] criterion %d: %s\n", v.pass ? "PASS" : "FAIL", v.id, v.summary.c_str());
  for (const auto& d : v.details) std::printf("         %s\n", d.c_str());
  std::fflush(stdout);
  verdicts.push_back(std::move(v));
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

ExperimentConfig base_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.tasks.shots = kTrainShots;
  cfg.tasks.val_size = kValSize;
  cfg.training.batch_size = kBatch;
  cfg.training.episodes = kEpisodes;
  cfg.eval.test = {kTestTasks, kTestPoints, 1};
  cfg.eval.shots = kTestShots;
  cfg.seed = seed;
  return cfg;
}

ExperimentConfig conml_config(std::uint64_t seed, ContrastTerms terms, LossForm form) {
  ExperimentConfig cfg = base_config(seed);
  cfg.contrastive_enabled = true;
  cfg.contrastive.lambda = 0.1;
  cfg.contrastive.k = 1;
  cfg.contrastive.strategy = {SubsetKind::kTrainOnly, 0, false};
  cfg.contrastive.distance = DistanceKind::kCosine;
  cfg.contrastive.form = form;
  cfg.contrastive.terms = terms;
  return cfg;
}

// ---- Criteria that need no long training. ----

void criterion5() {
  ExperimentConfig base = base_config(11);
  base.training.episodes = kLambdaZeroEpisodes;
  ExperimentConfig zero = conml_config(11, ContrastTerms::kBoth, LossForm::kSimple);
  zero.training.episodes = kLambdaZeroEpisodes;
  zero.contrastive.lambda = 0.0;
  const TrainingSpec a = base.training_spec(), b = zero.training_spec();
  const auto learner = make_learner(a.learner, problem_shape(a.tasks));

  // Per-episode gradients along the baseline trajectory.
  double grad_gap = 0.0;
  ParamVector theta = learner->init(derive_seed(a.seed, Stream::kInit));
  Optimizer opt(a.episode.optimizer);
  for (long e = 0; e < kLambdaZeroEpisodes; ++e) {
    const auto batch = episode_batch(a, e);
    const EpisodeResult g0 = run_episode_baseline(*learner, batch, theta);
    Rng rng(derive_seed(b.seed, Stream::kSubsets, static_cast<std::uint64_t>(e)));
    const EpisodeResult g1 = run_episode_conml(*learner, batch, theta, b.contrastive, rng);
    grad_gap = std::max(grad_gap, (g0.gradient.flatten() - g1.gradient.flatten()).cwiseAbs().maxCoeff());
    opt.step(theta, g0.gradient);
  }

  std::vector<Eigen::VectorXd> ta, tb;
  meta_train(a, [&](const EpisodeRecord&, const ParamVector& t) { ta.push_back(t.flatten()); });
  meta_train(b, [&](const EpisodeRecord&, const ParamVector& t) { tb.push_back(t.flatten()); });
  double traj_gap = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) traj_gap = std::max(traj_gap, (ta[i] - tb[i]).cwiseAbs().maxCoeff());
  const bool pass = grad_gap <= kExact && traj_gap <= kExact && ta.size() == tb.size();
  report({5, pass, "lambda=0 reproduces the baseline",
          {fmt("max per-episode gradient gap %.3e over %ld episodes (tol %.0e)", grad_gap,
               kLambdaZeroEpisodes, kExact),
           fmt("max trajectory gap %.3e (tol %.0e)", traj_gap, kExact)}});
}

void criterion6() {
  double agg_gap = 0.0, info_gap = 0.0, cluster_gap = 0.0;
  for (unsigned seed = 0; seed < 40; ++seed) {
    const Index b = 2 + seed % 9, d = 1 + seed % 6;
    const Matrix reps = oracle::random_rows(b, d, 1000 + seed);
    const Matrix subsets = oracle::random_rows(1 + seed % 4, d, 2000 + seed);
    for (DistanceKind kind : {DistanceKind::kCosine, DistanceKind::kSigmoidEuclidean, DistanceKind::kEuclidean}) {
      const double out = static_cast<double>(oracle::inter_mean(kind, reps));
      const double in = static_cast<double>(oracle::inner_mean(kind, subsets, reps, 0));
      Tape tape;
      const Var r = tape.variable(Tensor::from_matrix(reps));
      const Var s = tape.variable(Tensor::from_matrix(subsets));
      const Var e0 = reshape(columns(reshape(r, Shape{b * d}), 0, d), Shape{d});
      agg_gap = std::max({agg_gap, std::abs(inter_task_distance(kind, r).item() - out),
                          std::abs(inter_task_distance(kind, reps) - out),
                          std::abs(inner_task_distance(kind, s, e0).item() - in),
                          std::abs(inner_task_distance(kind, subsets, reps.row(0)) - in)});
    }
    const Index nb = 2 + seed % (kInfoNceMaxBatch - 1);
    const Matrix din = oracle::random_rows(nb, 1, 3000 + seed).cwiseAbs();
    const Matrix dout = oracle::random_rows(nb, nb, 4000 + seed).cwiseAbs() * 1.5;
    std::vector<long double> ldin(static_cast<std::size_t>(nb));
    std::vector<std::vector<long double>> ldout(static_cast<std::size_t>(nb), std::vector<long double>(static_cast<std::size_t>(nb)));
    for (Index i = 0; i < nb; ++i) {
      ldin[i] = din(i, 0);
      for (Index j = 0; j < nb; ++j) ldout[i][j] = dout(i, j);
    }
    const double ref = static_cast<double>(oracle::infonce(ldin, ldout));
    Tape tape;
    const double tape_val = infonce_loss(tape.variable(Tensor::from_matrix(din)),
                                         tape.variable(Tensor::from_matrix(dout))).item();
    info_gap = std::max({info_gap, std::abs(infonce_loss(din.col(0), dout) - ref), std::abs(tape_val - ref)});

    const int k = 2 + static_cast<int>(seed % 5);
    const Index n = std::max<Index>(k + 1, kClusterMaxPoints - static_cast<Index>(seed));
    Matrix x = oracle::random_points(n, 1 + seed % 7, 5000 + seed);
    std::vector<int> lab(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      lab[i] = static_cast<int>(i % k);
      x.row(i).array() += 0.7 * lab[i];
    }
    const double chi = static_cast<double>(oracle::calinski_harabasz(x, lab, k));
    cluster_gap = std::max({cluster_gap,
                            std::abs(silhouette_score(x, lab) - static_cast<double>(oracle::silhouette(x, lab, k))),
                            std::abs(davies_bouldin_score(x, lab) - static_cast<double>(oracle::davies_bouldin(x, lab, k))),
                            std::abs(calinski_harabasz_score(x, lab) - chi) / std::max(1.0, chi)});
  }
  const bool pass = agg_gap <= kExact && info_gap <= kInfoNceTol && cluster_gap <= kClusterTol;
  report({6, pass, "independent oracles",
          {fmt("d_in/d_out aggregation gap %.3e (tol %.0e)", agg_gap, kExact),
           fmt("InfoNCE gap vs long-double evaluation %.3e, B <= %d (tol %.0e)", info_gap, kInfoNceMaxBatch, kInfoNceTol),
           fmt("cluster-metric gap %.3e on <= %d points (tol %.0e)", cluster_gap, kClusterMaxPoints, kClusterTol)}});
}

void criterion7() {
  const auto entries = run_gradcheck_suite(1);
  double worst = 0.0;
  std::string worst_name;
  int checked = 0;
  for (const auto& e : entries) {
    if (e.skipped) continue;
    ++checked;
    if (!(e.max_rel_error <= worst)) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  report({7, gradcheck_passed(entries, kGradTol), "finite differences on every loss path",
          {fmt("%d components, worst %.3e at %s (tol %.0e)", checked, worst, worst_name.c_str(), kGradTol)}});
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion10() {
  ExperimentConfig cfg = conml_config(21, ContrastTerms::kBoth, LossForm::kSimple);
  cfg.training.episodes = kDeterminismEpisodes;
  const auto root = std::filesystem::temp_directory_path() / "conml_acceptance_determinism";
  std::filesystem::remove_all(root);
  const RunPaths a{root / "a"}, b{root / "b"};
  train_run(cfg, a);
  train_run(cfg, b);
  const bool ckpt = slurp(a.checkpoint()) == slurp(b.checkpoint());
  const bool csv = slurp(a.losses()) == slurp(b.losses());
  const bool manifest = slurp(a.manifest()) == slurp(b.manifest());
  std::filesystem::remove_all(root);
  report({10, ckpt && csv && manifest, "bit-identical artifacts across two runs",
          {fmt("checkpoint %s, losses.csv %s, manifest %s (%ld episodes)", ckpt ? "identical" : "DIFFER",
               csv ? "identical" : "DIFFER", manifest ? "identical" : "DIFFER", kDeterminismEpisodes)}});
}

// ---- Trained-model criteria. ----

struct Trained {
  ParamVector theta;
  double seconds = 0.0;
  long adapt_call_mismatches = 0;
  double mse = 0.0;
};

Trained train_and_score(const ExperimentConfig& cfg, const MetaLearner& learner) {
  const TrainingSpec spec = cfg.training_spec();
  Trained t;
  const long expected = spec.conml ? static_cast<long>(kBatch) * (spec.contrastive.k + 1) : kBatch;
  const TrainResult r = meta_train(spec, [&](const EpisodeRecord& rec, const ParamVector&) {
    t.adapt_call_mismatches += rec.diag.adapt_calls != expected;
  });
  t.theta = r.theta;
  t.seconds = r.seconds;
  t.mse = eval_mse(learner, t.theta, cfg.tasks, kTestShots, cfg.eval.test, cfg.seed);
  return t;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v, const char* f = "%.4f") {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : " ") + fmt(f, x);
  return out;
}

void trained_criteria() {
  const auto learner = make_learner(base_config(1).learner, problem_shape(base_config(1).tasks));
  enum Variant { kBase, kConml, kInner, kOuter, kInfo, kVariants };
  const char* names[] = {"maml", "conml", "d_in-only", "d_out-only", "infonce"};
  std::vector<std::vector<Trained>> runs(kVariants);

  for (int s = 1; s <= kSeeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const ExperimentConfig cfgs[] = {
        base_config(seed),
        conml_config(seed, ContrastTerms::kBoth, LossForm::kSimple),
        conml_config(seed, ContrastTerms::kInnerOnly, LossForm::kSimple),
        conml_config(seed, ContrastTerms::kOuterOnly, LossForm::kSimple),
        conml_config(seed, ContrastTerms::kBoth, LossForm::kInfoNce),
    };
    for (int v = 0; v < kVariants; ++v) {
      runs[v].push_back(train_and_score(cfgs[v], *learner));
      std::fprintf(stderr, "seed %d %-10s %.1f s  mse %.4f\n", s, names[v], runs[v].back().seconds,
                   runs[v].back().mse);
    }
  }

  auto mses = [&](int v) {
    std::vector<double> out;
    for (const auto& t : runs[v]) out.push_back(t.mse);
    return out;
  };
  const ExperimentConfig probe = base_config(1);

  // 1: 5-shot MSE.
  {
    const auto m0 = mses(kBase), m1 = mses(kConml);
    int wins = 0;
    for (int s = 0; s < kSeeds; ++s) wins += m1[s] < m0[s];
    const double ratio = mean(m1) / mean(m0);
    report({1, wins >= kMajority1 && ratio <= kMseRatio, "ConML lowers 5-shot MSE",
            {fmt("ConML better in %d/%d seeds (need %d); mean ratio %.4f (need <= %.2f)", wins, kSeeds,
                 kMajority1, ratio, kMseRatio),
             "MAML  " + join(m0), "ConML " + join(m1)}});
  }

  // 2: clustering of adapted models.
  {
    int sil = 0, dbi = 0, chi = 0, all = 0;
    std::vector<std::string> rows;
    for (int s = 0; s < kSeeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s + 1);
      const ClusterResult a = cluster_models(*learner, runs[kBase][s].theta, probe.tasks, {}, true, seed);
      const ClusterResult b = cluster_models(*learner, runs[kConml][s].theta, probe.tasks, {}, true, seed);
      sil += b.silhouette > a.silhouette;
      dbi += b.dbi < a.dbi;
      chi += b.chi > a.chi;
      all += b.silhouette > a.silhouette && b.dbi < a.dbi && b.chi > a.chi;
      rows.push_back(fmt("seed %d  silhouette %.4f -> %.4f  DBI %.4f -> %.4f  CHI %.3f -> %.3f", s + 1,
                         a.silhouette, b.silhouette, a.dbi, b.dbi, a.chi, b.chi));
    }
    rows.insert(rows.begin(), fmt("favoring ConML: silhouette %d, DBI %d, CHI %d, all three %d of %d (need %d each)",
                                  sil, dbi, chi, all, kSeeds, kMajority1));
    report({2, sil >= kMajority1 && dbi >= kMajority1 && chi >= kMajority1,
            "ConML improves Silhouette, DBI and CHI (10x10 protocol)", rows});
  }

  // 3: decoupled variants move their own distance.
  {
    int in_lower = 0, out_higher = 0;
    std::vector<std::string> rows;
    for (int s = 0; s < kSeeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s + 1);
      const DistanceEvalConfig cfg;
      const auto base = distance_distributions(*learner, runs[kBase][s].theta, probe.tasks, cfg, DistanceKind::kCosine, seed);
      const auto inner = distance_distributions(*learner, runs[kInner][s].theta, probe.tasks, cfg, DistanceKind::kCosine, seed);
      const auto outer = distance_distributions(*learner, runs[kOuter][s].theta, probe.tasks, cfg, DistanceKind::kCosine, seed);
      in_lower += inner.mean_d_in < base.mean_d_in;
      out_higher += outer.mean_d_out > base.mean_d_out;
      rows.push_back(fmt("seed %d  d_in %.4e -> %.4e (d_in-only)  d_out %.4e -> %.4e (d_out-only)", s + 1,
                         base.mean_d_in, inner.mean_d_in, base.mean_d_out, outer.mean_d_out));
    }
    rows.insert(rows.begin(), fmt("d_in-only lowers d_in in %d/%d, d_out-only raises d_out in %d/%d (need %d)",
                                  in_lower, kSeeds, out_higher, kSeeds, kMajority3));
    report({3, in_lower >= kMajority3 && out_higher >= kMajority3,
            "decoupled variants act on their own term (1000-task protocol)", rows});
  }

  // 4: OOD advantage of the d_out variant over the d_in variant.
  {
    std::vector<double> adv(kDeltas.size(), 0.0), in_curve(kDeltas.size(), 0.0), out_curve(kDeltas.size(), 0.0);
    for (int s = 0; s < kSeeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s + 1);
      const auto in = ood_sweep(*learner, runs[kInner][s].theta, probe.tasks, kDeltas, kTestShots, probe.eval.test, seed);
      const auto out = ood_sweep(*learner, runs[kOuter][s].theta, probe.tasks, kDeltas, kTestShots, probe.eval.test, seed);
      for (std::size_t i = 0; i < kDeltas.size(); ++i) {
        in_curve[i] += in[i].mse / kSeeds;
        out_curve[i] += out[i].mse / kSeeds;
      }
    }
    bool finite = true, monotone = true;
    for (std::size_t i = 0; i < kDeltas.size(); ++i) {
      adv[i] = in_curve[i] - out_curve[i];
      finite = finite && std::isfinite(adv[i]);
      if (i > 0 && !(adv[i] >= adv[i - 1])) monotone = false;
    }
    std::vector<std::string> rows{"delta          " + join(kDeltas, "%.1f"), "d_in-only MSE  " + join(in_curve),
                                  "d_out-only MSE " + join(out_curve), "advantage      " + join(adv, "%+.4f")};
    if (!finite) rows.push_back("non-finite seed-averaged MSE: the trend is undefined");
    report({4, finite && monotone, "d_out-variant advantage over d_in-variant is non-decreasing in delta", rows});
  }

  // 8: overhead.
  {
    std::vector<double> t0, t1;
    long mismatches = 0;
    for (int s = 0; s < kSeeds; ++s) {
      t0.push_back(runs[kBase][s].seconds);
      t1.push_back(runs[kConml][s].seconds);
      mismatches += runs[kConml][s].adapt_call_mismatches + runs[kBase][s].adapt_call_mismatches;
    }
    const double ratio = mean(t1) / mean(t0);
    report({8, ratio <= kTimeRatio && mismatches == 0, "K=1 overhead",
            {fmt("wall time per episode %.3f ms vs %.3f ms, ratio %.3f (need <= %.2f)", 1e3 * mean(t1) / kEpisodes,
                 1e3 * mean(t0) / kEpisodes, ratio, kTimeRatio),
             fmt("episodes with adapt calls != K+1 per task: %ld", mismatches)}});
  }

  // 9: InfoNCE vs simple form.
  {
    const auto simple = mses(kConml), info = mses(kInfo);
    int wins = 0;
    for (int s = 0; s < kSeeds; ++s) wins += info[s] <= simple[s];
    report({9, wins >= kMajority9, "InfoNCE MSE <= simple-form MSE",
            {fmt("InfoNCE no worse in %d/%d seeds (need %d)", wins, kSeeds, kMajority9),
             "simple  " + join(simple), "InfoNCE " + join(info)}});
  }
}

}  // namespace

int main() {
  const auto start = std::chrono::steady_clock::now();
  std::printf("acceptance: %d seeds, %ld episodes, B=%d, %d-shot train / %d val, %d-shot test on %d tasks\n",
              kSeeds, kEpisodes, kBatch, kTrainShots, kValSize, kTestShots, kTestTasks);
  criterion5();
  criterion6();
  criterion7();
  criterion10();
  trained_criteria();
  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  int passed = 0;
  std::printf("\nsummary\n");
  for (const auto& v : verdicts) {
    std::printf("  %-4s %2d  %s\n", v.pass ? "PASS" : "FAIL", v.id, v.summary.c_str());
    passed += v.pass;
  }
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  std::printf("%d/%zu criteria pass (%.1f min)\n", passed, verdicts.size(), minutes);
  return passed == static_cast<int>(verdicts.size()) ? 0 : 1;
}
