#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "mlprobe/trainer.hpp"
#include "scenarios.hpp"

using namespace mlprobe;
using namespace mlprobe::testing;

TEST(EarlyStop, PlateauAfterBestTriggers) {
  const std::vector<double> h = {0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6};
  EXPECT_TRUE(check_early_stop(h, 5));
  EXPECT_FALSE(check_early_stop(std::vector<double>{0.5, 0.6}, 5));
}

TEST(EarlyStop, ImprovementResetsPatience) {
  std::vector<double> h(20);
  std::iota(h.begin(), h.end(), 0.0);
  for (std::size_t n = 1; n <= h.size(); ++n)
    EXPECT_FALSE(check_early_stop(std::span(h).first(n), 5));
  // four stale values then a new best
  EXPECT_FALSE(check_early_stop(std::vector<double>{0.5, 0.7, 0.6, 0.6, 0.6, 0.6, 0.71}, 5));
  EXPECT_TRUE(check_early_stop(std::vector<double>{0.5, 0.7, 0.6, 0.6, 0.6, 0.6, 0.7}, 5));
  EXPECT_FALSE(check_early_stop(std::vector<double>{0.5, 0.5, 0.5}, 0));
}

TEST(Batches, EachEpochIsAPermutation) {
  Rng rng(3);
  std::vector<std::size_t> previous;
  for (int epoch = 0; epoch < 3; ++epoch) {
    const auto batches = epoch_batches(1003, 64, rng);
    ASSERT_EQ(batches.size(), 16u);
    EXPECT_EQ(batches.back().size(), 1003u - 15u * 64u);
    std::vector<std::size_t> all;
    for (const auto &b : batches)
      all.insert(all.end(), b.begin(), b.end());
    EXPECT_NE(all, previous);
    previous = all;
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i)
      ASSERT_EQ(all[i], i);
  }
}

TEST(RunSeed, DependsOnEveryCoordinate) {
  const auto base = derive_run_seed(0, "Depth", 3, Setting::with_mlp);
  EXPECT_EQ(base, derive_run_seed(0, "Depth", 3, Setting::with_mlp));
  EXPECT_NE(base, derive_run_seed(1, "Depth", 3, Setting::with_mlp));
  EXPECT_NE(base, derive_run_seed(0, "Tense", 3, Setting::with_mlp));
  EXPECT_NE(base, derive_run_seed(0, "Depth", 4, Setting::with_mlp));
  EXPECT_NE(base, derive_run_seed(0, "Depth", 3, Setting::without_mlp));
}

TEST(TrainConfig, RejectsInvalidValues) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.lr = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.eval_every = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

class XorProbe : public ::testing::Test {
protected:
  static void SetUpTestSuite() { data_ = new synthetic::Dataset(synthetic::xor_dataset()); }
  static void TearDownTestSuite() { delete data_; }
  static synthetic::Dataset *data_;
};
synthetic::Dataset *XorProbe::data_ = nullptr;

TEST_F(XorProbe, MlpSolvesAndLinearStaysNearChance) {
  const auto spec = binary_task("xor");
  std::vector<double> with, without;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = train_on(*data_, spec, true, seed);
    const auto wo = train_on(*data_, spec, false, seed);
    EXPECT_GE(w.test_acc, 0.95) << "seed " << seed;
    EXPECT_LE(wo.test_acc, 0.60) << "seed " << seed;
    with.push_back(w.test_acc);
    without.push_back(wo.test_acc);
  }
  EXPECT_GT(std::accumulate(with.begin(), with.end(), 0.0), std::accumulate(without.begin(), without.end(), 0.0));
}

TEST_F(XorProbe, SameSeedIsBitIdentical) {
  const auto spec = binary_task("xor");
  const auto cfg = synthetic_config(true, 4);
  const auto a = train_probe_with_params(data_->train, data_->val, data_->test, spec, cfg);
  const auto b = train_probe_with_params(data_->train, data_->val, data_->test, spec, cfg);
  EXPECT_EQ(a.result, b.result);
  EXPECT_EQ(a.best_params, b.best_params);
}

TEST_F(XorProbe, StepBudgetAndCheckpointSelection) {
  const auto spec = binary_task("xor");
  auto cfg = synthetic_config(true, 1);
  const auto out = train_probe_with_params(data_->train, data_->val, data_->test, spec, cfg);
  const auto &r = out.result;
  const std::size_t per_epoch = (data_->train.size() + cfg.batch_size - 1) / cfg.batch_size;
  EXPECT_LE(r.steps_run, cfg.epochs * per_epoch);
  ASSERT_FALSE(r.history.empty());
  EXPECT_EQ(r.history.back().step, r.steps_run);

  // best_val_acc is the max over history, and the first step reaching it
  double best = -1.0;
  std::size_t best_step = 0;
  for (const auto &h : r.history)
    if (h.val_acc > best) {
      best = h.val_acc;
      best_step = h.step;
    }
  EXPECT_EQ(r.best_val_acc, best);
  EXPECT_EQ(r.best_step, best_step);
  EXPECT_EQ(accuracy(out.best_params, data_->val), r.best_val_acc);
  EXPECT_EQ(accuracy(out.best_params, data_->test), r.test_acc);

  if (r.stopped_early) {
    std::vector<double> vals;
    for (const auto &h : r.history)
      vals.push_back(h.val_acc);
    EXPECT_TRUE(check_early_stop(vals, cfg.patience));
  }
}

TEST_F(XorProbe, EarlyStoppingEndsAStalledRun) {
  const auto spec = binary_task("xor");
  auto cfg = synthetic_config(false, 0);
  cfg.lr = 0.0; // validation accuracy never changes
  cfg.eval_every = 10;
  cfg.patience = 3;
  const auto r = train_probe(data_->train, data_->val, data_->test, spec, cfg);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.steps_run, 40u);
  EXPECT_EQ(r.best_step, 10u);
}

TEST(Trainer, FinalPartialIntervalIsValidated) {
  const auto d = synthetic::linear_dataset({300, 100, 100}, 4);
  auto cfg = synthetic_config(false, 0);
  cfg.epochs = 1;
  cfg.eval_every = 3; // 5 steps per epoch: evaluations at 3 and 5
  cfg.patience = 1000;
  const auto r = train_probe(d.train, d.val, d.test, binary_task("lin"), cfg);
  ASSERT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.history[0].step, 3u);
  EXPECT_EQ(r.history[1].step, 5u);
}

TEST(Trainer, LossFallsOnSeparableData) {
  const auto d = synthetic::linear_dataset({2000, 500, 500});
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (bool mlp : {false, true}) {
      auto cfg = synthetic_config(mlp, seed);
      cfg.patience = 1000;
      const auto r = train_probe(d.train, d.val, d.test, binary_task("lin", Level::surface), cfg);
      ASSERT_GE(r.history.size(), 2u);
      EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss) << "seed " << seed;
      EXPECT_GE(r.test_acc, 0.9);
    }
}

TEST(Trainer, RejectsInconsistentSplits) {
  const auto d = synthetic::linear_dataset({100, 50, 50}, 4);
  auto three = binary_task("t");
  TrainConfig cfg;
  auto bad = d.val;
  bad.labels.class_ids[0] = 2;
  EXPECT_THROW(train_probe(d.train, bad, d.test, three, cfg), ShapeError);
  const auto other = synthetic::linear_dataset({100, 50, 50}, 5);
  EXPECT_THROW(train_probe(d.train, other.val, d.test, three, cfg), ShapeError);
  DatasetSplit empty{{1, Matrix<float>(0, 4)}, {}};
  EXPECT_THROW(train_probe(empty, d.val, d.test, three, cfg), ShapeError);
}

TEST(TrainResultJson, RoundTrips) {
  TrainResult r{0.75, 0.5, 200, 400, true, {{200, 0.25, 0.75}, {400, 0.125, 0.5}}};
  EXPECT_EQ(train_result_from_json(to_json(r)), r);
  TrainConfig c;
  c.lr = 0.01;
  c.hidden = 32;
  c.activation = Activation::tanh;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.lr, 0.01);
  EXPECT_EQ(back.hidden, 32u);
  EXPECT_EQ(back.activation, Activation::tanh);
  EXPECT_EQ(run_stem("Depth", 3, Setting::with_mlp, 2), "Depth_3_with_mlp_2");
}
