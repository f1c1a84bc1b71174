#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "draftrec/draftrec.hpp"
#include "support/model_check.hpp"

using namespace draftrec;
using namespace draftrec::testing;

namespace {

ModelConfig tiny_config(std::size_t heads) {
  ModelConfig mc;
  mc.d = 8;
  mc.layers = 1;
  mc.heads = heads;
  mc.head_dim = 8 / heads;
  mc.history_len = 3;
  mc.dropout = 0.1;
  return mc;
}

ModelConfig small_config() {
  ModelConfig mc;
  mc.d = 16;
  mc.layers = 2;
  mc.heads = 2;
  mc.head_dim = 8;
  mc.history_len = 5;
  mc.dropout = 0.0;
  return mc;
}

std::vector<float> forward_probs(const DraftRecModel<float>& model, const DraftState& s, float* win = nullptr) {
  auto bb = model.builder();
  bb.add_state(s);
  const auto r = model.forward(bb.take());
  if (win) *win = r.blue_win_prob(0);
  const auto p = r.champion_probs();
  return {p.data(), p.data() + p.size()};
}

}  // namespace

class FullModelGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(FullModelGradient, EveryParameterMatchesCentralDifferences) {
  const auto errs = full_model_gradient_check(tiny_config(GetParam()), 10);
  ASSERT_FALSE(errs.empty());
  std::size_t values = 0;
  for (const auto& e : errs) {
    EXPECT_LT(e.rel_error, 1e-3) << e.name;
    values += e.size;
  }
  EXPECT_GT(values, 500u);
}

INSTANTIATE_TEST_SUITE_P(Heads, FullModelGradient, ::testing::Values(2u, 1u));

TEST(FullModelGradient, NoEncoderLayers) {
  auto mc = tiny_config(1);
  mc.layers = 0;
  for (const auto& e : full_model_gradient_check(mc, 10)) EXPECT_LT(e.rel_error, 1e-3) << e.name;
}

TEST(Model, RejectsOddWidthAndMismatchedBatch) {
  const auto vocab = tiny_vocab(12, 3, 2);
  auto mc = small_config();
  mc.d = 15;
  EXPECT_THROW(DraftRecModel<float>(mc, vocab, 1), Error);
  DraftRecModel<float> model(small_config(), vocab, 1);
  DraftRecModel<float> other(small_config(), tiny_vocab(13, 3, 2), 1);
  Rng rng(3);
  auto bb = other.builder();
  bb.add_state(build_state(random_inputs(tiny_vocab(13, 3, 2), rng, 0, 4), 1, identity_normalizer(2), 5));
  EXPECT_THROW(model.forward(bb.take()), ShapeError);
}

TEST(Model, IllegalChampionsGetZeroProbability) {
  const auto vocab = tiny_vocab(20, 3, 2);
  DraftRecModel<float> model(small_config(), vocab, 7);
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const auto in = random_inputs(vocab, rng, 4, 6);
    const int t = static_cast<int>(1 + rng.below(kNumTurns));
    const auto s = build_state(in, t, identity_normalizer(2), 5);
    const auto p = forward_probs(model, s);
    const auto legal = legal_mask(s, vocab.champion_rows());
    double sum = 0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (!legal[c]) {
        EXPECT_EQ(p[c], 0.f) << c;
      }
      sum += p[c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(Model, HiddenInformationDoesNotMoveOutputs) {
  const auto vocab = tiny_vocab(20, 3, 2);
  DraftRecModel<float> model(small_config(), vocab, 11);
  Rng rng(12);
  const auto norm = identity_normalizer(2);
  for (int rep = 0; rep < 30; ++rep) {
    const auto in = random_inputs(vocab, rng, 2, 6);
    const int t = static_cast<int>(1 + rng.below(kNumTurns));
    const Team acting = team_of_turn(t);
    auto alt = in;
    const auto other = random_inputs(vocab, rng, 2, 6);
    for (int k = 1; k <= kNumTurns; ++k) {
      const auto i = static_cast<std::size_t>(k - 1);
      if (team_of_turn(k) != acting) {
        alt.histories[i] = other.histories[i];
        alt.roles[i] = other.roles[i];
      }
    }
    // The pick at t and later ones are unseen; permute them.
    std::rotate(alt.picks.begin() + (t - 1), alt.picks.begin() + t, alt.picks.end());
    float wa = 0, wb = 0;
    const auto pa = forward_probs(model, build_state(in, t, norm, 5), &wa);
    const auto pb = forward_probs(model, build_state(alt, t, norm, 5), &wb);
    EXPECT_EQ(pa, pb);
    EXPECT_EQ(wa, wb);
  }
}

TEST(Model, HiddenSlotsUseTheUnknownPlayerRow) {
  const auto vocab = tiny_vocab(20, 3, 2);
  DraftRecModel<float> model(small_config(), vocab, 1);
  Rng rng(2);
  auto in = random_inputs(vocab, rng, 0, 4);
  in.withheld[0] = true;
  auto bb = model.builder();
  bb.add_state(build_state(in, 3, identity_normalizer(2), 5));  // Purple acting
  const auto& b = bb.batch();
  EXPECT_EQ(b.player_row[0], BatchBuilder::kUnknownPlayer);  // Blue
  EXPECT_NE(b.player_row[1], BatchBuilder::kUnknownPlayer);  // Purple, turn 2
  EXPECT_EQ(b.player_row[3], BatchBuilder::kUnknownPlayer);  // Blue
}

TEST(Model, BatchCompositionDoesNotChangeAState) {
  const auto vocab = tiny_vocab(20, 3, 2);
  DraftRecModel<float> model(small_config(), vocab, 21);
  Rng rng(22);
  const auto norm = identity_normalizer(2);
  const auto target = build_state(random_inputs(vocab, rng, 3, 6), 6, norm, 5);
  float alone_win = 0;
  const auto alone = forward_probs(model, target, &alone_win);
  auto bb = model.builder();
  for (int i = 0; i < 7; ++i) bb.add_state(build_state(random_inputs(vocab, rng, 3, 6), 1 + i, norm, 5));
  const auto seq = bb.add_state(target);
  const auto r = model.forward(bb.take());
  const auto p = r.champion_probs();
  for (std::size_t c = 0; c < alone.size(); ++c) EXPECT_NEAR(p(seq, c), alone[c], 1e-6);
  EXPECT_NEAR(r.blue_win_prob(seq), alone_win, 1e-6);
}

TEST(Model, InferenceIsDeterministicAndDropoutOnlyInTraining) {
  const auto vocab = tiny_vocab(20, 3, 2);
  auto mc = small_config();
  mc.dropout = 0.3;
  DraftRecModel<float> model(mc, vocab, 5);
  Rng rng(6);
  const auto s = build_state(random_inputs(vocab, rng, 0, 6), 4, identity_normalizer(2), 5);
  EXPECT_EQ(forward_probs(model, s), forward_probs(model, s));
  auto bb = model.builder();
  bb.add_state(s);
  const auto batch = bb.take();
  Rng d1(1), d2(2);
  const auto a = model.forward(batch, &d1, true).champion_probs();
  const auto b = model.forward(batch, &d2, true).champion_probs();
  EXPECT_NE(std::vector<float>(a.data(), a.data() + a.size()), std::vector<float>(b.data(), b.data() + b.size()));
}

TEST(Model, SameSeedSameWeights) {
  const auto vocab = tiny_vocab(20, 3, 2);
  DraftRecModel<float> a(small_config(), vocab, 9), b(small_config(), vocab, 9), c(small_config(), vocab, 10);
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i], b.params()[i]);
  EXPECT_NE(a.params()[a.e_c()], c.params()[c.e_c()]);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(a.params()[a.e_c()](kPad, j), 0.f);
}

TEST(Loss, ComponentsCombineWithLambda) {
  const auto vocab = tiny_vocab(20, 3, 2);
  DraftRecModel<float> model(small_config(), vocab, 31);
  Rng rng(32);
  auto bb = model.builder();
  for (int i = 0; i < 4; ++i) {
    const auto in = random_inputs(vocab, rng, 0, 4);
    const auto seq = bb.add_state(build_state(in, 1 + 2 * i, identity_normalizer(2), 5));
    bb.set_targets(seq, in.picks[static_cast<std::size_t>(2 * i)], i % 2 == 0);
  }
  const auto batch = bb.take();
  const auto r = model.forward(batch);
  TrainConfig tc;
  tc.lambda = 0.3;
  tc.weight_decay = 0.01;
  const auto terms = compute_loss(r, batch, model.params(), tc);
  EXPECT_NEAR(terms.total.value()[0], 0.3 * terms.champion + 0.7 * terms.outcome + 0.01 * terms.l2, 1e-4);

  // Oracle: plain log-softmax over the legal champions, and BCE.
  const auto p = r.champion_probs();
  double nll = 0, bce = 0;
  for (std::size_t q = 0; q < 4; ++q) nll -= std::log(static_cast<double>(p(q, static_cast<std::size_t>(batch.target_champion[q]))));
  for (std::size_t s = 0; s < 4; ++s) {
    const double v = r.blue_win_prob(s);
    bce -= batch.target_blue[s] > 0.5f ? std::log(v) : std::log(1 - v);
  }
  EXPECT_NEAR(terms.champion, nll / 4, 1e-4);
  EXPECT_NEAR(terms.outcome, bce / 4, 1e-5);
  double l2 = 0;
  for (const auto& e : model.params().entries)
    if (e.learnable)
      for (float x : e.value.values()) l2 += static_cast<double>(x) * x;
  EXPECT_NEAR(terms.l2, l2, l2 * 1e-5);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint c;
  c.config = profile_config("synthetic");
  c.config.model = small_config();
  c.vocab = tiny_vocab(20, 3, 2);
  c.normalizer = {{0.5, -1.0}, {2.0, 0.25}, 5.0};
  c.seed = 77;
  c.step = 123;
  c.meta = {{"note", "x"}};
  c.model = DraftRecModel<float>(c.config.model, c.vocab, c.seed);
  c.adam = AdamState<float>::for_params(c.model.params().learnable());
  c.adam.step = 5;
  c.adam.m[0][3] = 0.25f;
  const auto bytes = serialize_checkpoint(c);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(checkpoint_hash(back), checkpoint_hash(c));
  EXPECT_EQ(back.step, 123u);
  EXPECT_EQ(back.meta["note"], "x");
  EXPECT_EQ(back.adam.m[0][3], 0.25f);
  EXPECT_EQ(back.normalizer.stddev, c.normalizer.stddev);
  Rng rng(1);
  const auto s = build_state(random_inputs(c.vocab, rng, 1, 6), 7, c.normalizer, 5);
  EXPECT_EQ(forward_probs(c.model, s), forward_probs(back.model, s));
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  Checkpoint c;
  c.config.model = small_config();
  c.vocab = tiny_vocab(12, 3, 0);
  c.model = DraftRecModel<float>(c.config.model, c.vocab, 1);
  const auto bytes = serialize_checkpoint(c);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), DataError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), DataError);
  EXPECT_THROW(deserialize_checkpoint(""), DataError);
  auto tampered = bytes;
  const auto at = tampered.find("d=16");
  ASSERT_NE(at, std::string::npos);
  tampered[at + 2] = '2';  // d=26, hash no longer matches
  EXPECT_THROW(deserialize_checkpoint(tampered), DataError);
}

TEST(Config, TextRoundTripAndHash) {
  auto c = profile_config("dota2");
  c.train.lambda = 0.25;
  c.train.champion_loss = ChampionLoss::BceOneHot;
  const auto back = parse_config(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(config_hash(back), config_hash(c));
  c.train.seed = 43;
  EXPECT_NE(config_hash(back), config_hash(c));
}

TEST(Config, ProfilesAndErrors) {
  const auto lol = profile_config("lol");
  EXPECT_EQ(lol.model.d, 128u);
  EXPECT_EQ(lol.model.history_len, 50u);
  EXPECT_DOUBLE_EQ(lol.train.lambda, 0.1);
  const auto dota = profile_config("dota2");
  EXPECT_EQ(dota.model.d, 64u);
  EXPECT_EQ(dota.model.layers, 1u);
  EXPECT_EQ(dota.model.history_len, 20u);
  EXPECT_EQ(dota.train.epochs, 20u);
  EXPECT_THROW(profile_config("chess"), Error);
  EXPECT_THROW(parse_config("d=16\nbogus=1\n"), Error);
  EXPECT_THROW(parse_config("lambda=1.5\n"), Error);
  EXPECT_THROW(parse_config("d=abc\n"), Error);
  EXPECT_THROW(parse_config("just words\n"), Error);
  const auto c = parse_config("# comment\nprofile = dota2  # trailing\nlambda=0.5\n");
  EXPECT_EQ(c.model.d, 64u);
  EXPECT_DOUBLE_EQ(c.train.lambda, 0.5);
}
