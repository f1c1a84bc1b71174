#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "draftrec/draftrec.hpp"

using namespace draftrec;

namespace {

const Corpus& small_corpus() {
  static const Corpus c = [] {
    SyntheticConfig sc;
    sc.seed = 4;
    sc.num_matches = 60;
    sc.num_players = 20;
    sc.num_champions = 20;
    sc.bans_per_match = 4;
    return generate_synthetic(sc).corpus;
  }();
  return c;
}

Config tiny(std::uint64_t seed = 1) {
  auto c = profile_config("synthetic");
  c.model.d = 8;
  c.model.heads = 2;
  c.model.head_dim = 4;
  c.model.history_len = 4;
  c.train.epochs = 3;
  c.train.batch_size = 100;
  c.train.seed = seed;
  return c;
}

}  // namespace

TEST(CosineLr, QuarterAndHalfway) {
  const LrSchedule s{1e-3, 1e-5, 100};
  EXPECT_DOUBLE_EQ(cosine_lr(0, s), 1e-3);
  EXPECT_NEAR(cosine_lr(50, s), (1e-3 + 1e-5) / 2, 1e-15);
  EXPECT_NEAR(cosine_lr(25, s), 1e-5 + (1e-3 - 1e-5) * (1 + std::cos(std::numbers::pi / 4)) / 2, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_lr(100, s), 1e-5);
  EXPECT_DOUBLE_EQ(cosine_lr(1000, s), 1e-5);
}

TEST(Train, SameSeedSameBytes) {
  const auto a = train(tiny(7), small_corpus());
  const auto b = train(tiny(7), small_corpus());
  const auto c = train(tiny(8), small_corpus());
  EXPECT_EQ(serialize_checkpoint(a.best), serialize_checkpoint(b.best));
  EXPECT_NE(checkpoint_hash(a.best), checkpoint_hash(c.best));
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
}

TEST(Train, LossFallsAndBestEpochHasLowestValidationLoss) {
  auto cfg = tiny();
  cfg.train.epochs = 6;
  cfg.train.initial_lr = 1e-2;
  const auto r = train(cfg, small_corpus());
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
  std::size_t best = 0;
  for (std::size_t i = 0; i < r.log.size(); ++i)
    if (r.log[i].val_loss < r.log[best].val_loss) best = i;
  EXPECT_EQ(r.best_epoch, best + 1);
  EXPECT_EQ(r.best.meta["epoch"], best + 1);
  EXPECT_EQ(r.best.step, (best + 1) * ((small_corpus().range(SplitPart::Train).second + 9) / 10));
}

TEST(Train, WithoutValidationTheLastEpochWins) {
  TrainOptions o;
  o.val_part.reset();
  std::size_t steps = 0, epochs = 0;
  o.on_step = [&](std::size_t, double) { ++steps; };
  o.on_epoch = [&](const EpochLog& e) {
    ++epochs;
    EXPECT_TRUE(std::isnan(e.val_loss));
  };
  const auto r = train(tiny(), small_corpus(), o);
  EXPECT_EQ(r.best_epoch, 3u);
  EXPECT_EQ(epochs, 3u);
  const auto n_train = small_corpus().range(SplitPart::Train).second;
  EXPECT_EQ(steps, 3 * ((n_train + 9) / 10));  // 10 matches per step
  EXPECT_TRUE(r.best.meta["val_loss"].is_null());
}

TEST(Train, LambdaZeroLeavesTheChampionHeadUntouched) {
  auto cfg = tiny();
  cfg.train.lambda = 0;
  cfg.train.weight_decay = 0;
  const auto r = train(cfg, small_corpus());
  const DraftRecModel<float> init(cfg.model, small_corpus().vocab(), derive_seed(cfg.train.seed, 0));
  const auto& m = r.best.model;
  EXPECT_EQ(m.params()[m.w_p()], init.params()[init.w_p()]);
  EXPECT_EQ(m.params()[m.b_p()], init.params()[init.b_p()]);
  EXPECT_EQ(m.params()[m.b_c()], init.params()[init.b_c()]);
  EXPECT_NE(m.params()[m.b_v()], init.params()[init.b_v()]);
}

TEST(Train, RejectsBadConfigAndEmptySplit) {
  auto cfg = tiny();
  cfg.train.lambda = 2;
  EXPECT_THROW(train(cfg, small_corpus()), Error);
  TrainOptions o;
  o.train_part = SplitPart::Val;
  o.val_part = SplitPart::Test;
  EXPECT_NO_THROW(train(tiny(), small_corpus(), o));
}

TEST(Train, EvaluateLossMatchesItsParts) {
  const auto r = train(tiny(), small_corpus());
  const auto [vb, ve] = small_corpus().range(SplitPart::Val);
  const auto tc = tiny().train;
  const auto l = evaluate_loss(r.best.model, small_corpus(), r.best.normalizer, vb, ve, tc);
  EXPECT_EQ(l.states, (ve - vb) * kNumTurns);
  EXPECT_NEAR(l.loss, r.log[r.best_epoch - 1].val_loss, 1e-9);
  EvalOptions eo;
  eo.split = SplitPart::Val;
  const auto rep = evaluate(r.best.model, small_corpus(), r.best.normalizer, eo);
  EXPECT_NEAR(l.hr1, *rep.hr1, 1e-9);
  EXPECT_NEAR(l.mae, *rep.mae, 1e-6);
}
