#include "conml/tasks/tasks.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

namespace conml {
namespace {

TaskDistributionConfig blobs_config() {
  TaskDistributionConfig cfg;
  cfg.kind = TaskKind::kGaussianBlobs;
  cfg.blobs.num_ways = 3;
  cfg.blobs.dim = 4;
  cfg.shots = 2;
  cfg.val_size = 3;
  return cfg;
}

TEST(Sinusoid, TargetIdentity) {
  EXPECT_DOUBLE_EQ(sinusoid_target({1.0, 0.0}, std::numbers::pi / 2), 1.0);
}

TEST(Sinusoid, TargetsAreNoiseFree) {
  TaskDistributionConfig cfg;
  Rng rng(3);
  for (const TaskInstance& t : sample_batch(cfg, 20, rng)) {
    const Dataset pool = t.pooled();
    for (Index i = 0; i < pool.size(); ++i) {
      EXPECT_EQ(pool.ys.values()(i, 0), sinusoid_target(t.sinusoid, pool.xs.values()(i, 0)));
      EXPECT_GE(pool.xs.values()(i, 0), -5.0);
      EXPECT_LE(pool.xs.values()(i, 0), 5.0);
    }
  }
}

TEST(Sinusoid, AmplitudesRespectShift) {
  for (double delta : {0.0, 1.0, 3.0}) {
    TaskDistributionConfig cfg;
    cfg.amplitude_shift = delta;
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
      const TaskInstance t = sample_task(cfg, rng);
      ASSERT_GE(t.sinusoid.amplitude, 0.1 + delta);
      ASSERT_LE(t.sinusoid.amplitude, 5.0 + delta);
      ASSERT_GE(t.sinusoid.phase, 0.0);
      ASSERT_LE(t.sinusoid.phase, std::numbers::pi);
    }
  }
}

TEST(Sinusoid, SizesFollowConfig) {
  TaskDistributionConfig cfg;
  cfg.shots = 5;
  cfg.val_size = 7;
  Rng rng(1);
  const TaskInstance t = sample_task(cfg, rng);
  EXPECT_EQ(t.train.size(), 5);
  EXPECT_EQ(t.val.size(), 7);
  EXPECT_EQ(t.val.indices.front(), 5u);
}

TEST(Blobs, ZeroSpreadCollapsesToMeans) {
  TaskDistributionConfig cfg = blobs_config();
  cfg.blobs.spread = 0.0;
  Rng rng(5);
  const TaskInstance t = sample_task(cfg, rng);
  const Dataset pool = t.pooled();
  for (Index i = 0; i < pool.size(); ++i) {
    const int c = pool.labels[static_cast<std::size_t>(i)];
    EXPECT_EQ(pool.xs.values().row(i), t.class_means.row(c));
  }
  EXPECT_EQ(t.train.size(), 6);
  EXPECT_EQ(t.val.size(), 9);
  EXPECT_NO_THROW(pool.validate());
}

TEST(Batch, CountAndDeterminism) {
  TaskDistributionConfig cfg;
  Rng a(42), b(42);
  const auto batch_a = sample_batch(cfg, 32, a);
  const auto batch_b = sample_batch(cfg, 32, b);
  ASSERT_EQ(batch_a.size(), 32u);
  Rng c(0);
  EXPECT_EQ(sample_batch(cfg, 1, c).size(), 1u);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(batch_a[i].train.xs, batch_b[i].train.xs);
    EXPECT_EQ(batch_a[i].val.ys, batch_b[i].val.ys);
  }
}

TEST(Subsets, TrainOnlyReturnsTrainSet) {
  TaskDistributionConfig cfg;
  Rng rng(2);
  const TaskInstance t = sample_task(cfg, rng);
  const auto subsets = sample_subsets(t, {SubsetKind::kTrainOnly}, 1, rng);
  ASSERT_EQ(subsets.size(), 1u);
  EXPECT_EQ(subsets[0].xs, t.train.xs);
  EXPECT_EQ(subsets[0].ys, t.train.ys);
  EXPECT_EQ(sample_subsets(t, {SubsetKind::kTrainOnly}, 3, rng).size(), 3u);
}

TEST(Subsets, RandomMFullPoolIsThePool) {
  TaskDistributionConfig cfg;
  cfg.val_size = 6;
  Rng rng(2);
  const TaskInstance t = sample_task(cfg, rng);
  const Dataset pool = t.pooled();
  const auto subsets = sample_subsets(t, {SubsetKind::kRandomM, 16}, 2, rng);
  for (const Dataset& s : subsets) {
    EXPECT_EQ(s.xs, pool.xs);
    EXPECT_EQ(s.indices, pool.indices);
  }
  EXPECT_THROW(sample_subsets(t, {SubsetKind::kRandomM, 17}, 1, rng), std::invalid_argument);
  EXPECT_THROW(sample_subsets(t, {SubsetKind::kTrainOnly}, 0, rng), std::invalid_argument);
}

TEST(Subsets, MembershipByProvenance) {
  TaskDistributionConfig cfg;
  cfg.val_size = 15;
  Rng rng(8);
  const TaskInstance t = sample_task(cfg, rng);
  const Dataset pool = t.pooled();
  for (const Dataset& s : sample_subsets(t, {SubsetKind::kRandomHalf}, 5, rng)) {
    ASSERT_EQ(s.size(), 12);
    std::set<std::size_t> seen;
    for (Index i = 0; i < s.size(); ++i) {
      const std::size_t src = s.indices[static_cast<std::size_t>(i)];
      ASSERT_LT(src, static_cast<std::size_t>(pool.size()));
      EXPECT_TRUE(seen.insert(src).second);
      EXPECT_EQ(s.xs.values().row(i), pool.xs.values().row(static_cast<Index>(src)));
      EXPECT_EQ(s.ys.values().row(i), pool.ys.values().row(static_cast<Index>(src)));
    }
    EXPECT_TRUE(std::is_sorted(s.indices.begin(), s.indices.end()));
  }
}

TEST(Subsets, SameSeedSameSubsets) {
  TaskDistributionConfig cfg;
  Rng r0(4);
  const TaskInstance t = sample_task(cfg, r0);
  Rng a(9), b(9);
  const auto sa = sample_subsets(t, {SubsetKind::kRandomM, 20}, 4, a);
  const auto sb = sample_subsets(t, {SubsetKind::kRandomM, 20}, 4, b);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].indices, sb[i].indices);
}

TEST(Subsets, ClassBalancedCounts) {
  TaskDistributionConfig cfg = blobs_config();
  Rng rng(6);
  const TaskInstance t = sample_task(cfg, rng);
  for (int m : {3, 6, 7, 13}) {
    for (const Dataset& s : sample_subsets(t, {SubsetKind::kRandomM, m, true}, 3, rng)) {
      std::vector<int> counts(3, 0);
      for (int l : s.labels) ++counts[l];
      const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
      EXPECT_LE(*hi - *lo, 1) << "m=" << m;
      EXPECT_EQ(s.size(), m);
    }
  }
}

TEST(Dataset, ValidateRejectsBadLabels) {
  Dataset d;
  d.xs = Tensor::zeros(Shape{2, 1});
  d.labels = {0, 3};
  d.num_classes = 2;
  EXPECT_THROW(d.validate(), std::invalid_argument);
  Dataset r;
  r.xs = Tensor::zeros(Shape{2, 1});
  r.ys = Tensor::zeros(Shape{3, 1});
  EXPECT_THROW(r.validate(), std::invalid_argument);
}

TEST(Dataset, RepeatRows) {
  TaskDistributionConfig cfg;
  cfg.shots = 3;
  Rng rng(1);
  const TaskInstance t = sample_task(cfg, rng);
  const Dataset d = repeat_rows(t.train, 2);
  EXPECT_EQ(d.size(), 6);
  EXPECT_EQ(d.xs.values().row(4), t.train.xs.values().row(1));
}

TEST(TaskIo, JsonLinesRoundTrip) {
  TaskDistributionConfig sine;
  sine.val_size = 4;
  TaskDistributionConfig blobs = blobs_config();
  Rng rng(77);
  std::vector<TaskInstance> tasks = sample_batch(sine, 3, rng);
  tasks.push_back(sample_task(blobs, rng));
  const auto path = std::filesystem::temp_directory_path() / "conml_tasks_roundtrip.jsonl";
  dump_tasks(path, tasks);
  const auto loaded = load_tasks(path);
  std::filesystem::remove(path);
  ASSERT_EQ(loaded.size(), tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    EXPECT_EQ(loaded[i].kind, tasks[i].kind);
    EXPECT_EQ(loaded[i].train.xs, tasks[i].train.xs);
    EXPECT_EQ(loaded[i].val.xs, tasks[i].val.xs);
    EXPECT_EQ(loaded[i].train.labels, tasks[i].train.labels);
    EXPECT_EQ(loaded[i].sinusoid.amplitude, tasks[i].sinusoid.amplitude);
    EXPECT_EQ(loaded[i].class_means, tasks[i].class_means);
    if (!tasks[i].train.is_classification()) EXPECT_EQ(loaded[i].val.ys, tasks[i].val.ys);
  }
}

}  // namespace
}  // namespace conml
