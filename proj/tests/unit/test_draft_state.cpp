#include <gtest/gtest.h>

#include "draftrec/draftrec.hpp"

using namespace draftrec;

namespace {

struct World {
  SyntheticWorld w;
  Normalizer norm;
};

const World& world() {
  static const World w = [] {
    SyntheticConfig sc;
    sc.seed = 21;
    sc.num_matches = 400;
    sc.num_players = 60;
    World out{generate_synthetic(sc), {}};
    out.norm = fit_normalizer(out.w.corpus);
    return out;
  }();
  return w;
}

constexpr std::size_t kL = 8;

}  // namespace

TEST(BuildState, TurnOneShowsNoChampionsAndBlueHistories) {
  const auto& c = world().w.corpus;
  const auto& m = c[c.size() - 1];
  const auto s = build_state(m, c, 1, world().norm, kL);
  EXPECT_EQ(s.turn, 1);
  EXPECT_EQ(s.acting_team(), Team::Blue);
  EXPECT_EQ(s.slot(1).champion, kMask);
  for (int k = 2; k <= kNumTurns; ++k) EXPECT_EQ(s.slot(k).champion, kUnk) << k;
  for (int k : kBlueTurns) {
    EXPECT_TRUE(s.slot(k).history_visible) << k;
    EXPECT_EQ(s.slot(k).role, m.at_turn(k).role);
  }
  for (int k : kPurpleTurns) EXPECT_FALSE(s.slot(k).history_visible) << k;
}

TEST(BuildState, TurnFiveShowsFirstFourPicks) {
  const auto& c = world().w.corpus;
  const auto& m = c[300];
  const auto s = build_state(m, c, 5, world().norm, kL);
  for (int k = 1; k <= 4; ++k) EXPECT_EQ(s.slot(k).champion, m.at_turn(k).champion);
  EXPECT_EQ(s.slot(5).champion, kMask);
  for (int k = 6; k <= 10; ++k) EXPECT_EQ(s.slot(k).champion, kUnk);
}

TEST(BuildState, OpponentsNeverExposeRoleOrHistory) {
  const auto& c = world().w.corpus;
  for (std::size_t i = c.size() - 50; i < c.size(); ++i)
    for (int t = 1; t <= kNumTurns; ++t) {
      const auto s = build_state(c[i], c, t, world().norm, kL);
      for (int k = 1; k <= kNumTurns; ++k) {
        const auto& v = s.slot(k);
        EXPECT_EQ(v.team, team_of_turn(k));
        if (v.team != s.acting_team()) {
          EXPECT_EQ(v.role, kUnk);
          EXPECT_FALSE(v.history_visible);
          EXPECT_TRUE(v.history.empty());
        } else {
          EXPECT_EQ(v.role, c[i].at_turn(k).role);
          EXPECT_TRUE(v.history_visible);
        }
        if (k < t) {
          EXPECT_EQ(v.champion, c[i].at_turn(k).champion);
        }
        else if (k == t) EXPECT_EQ(v.champion, kMask);
        else EXPECT_EQ(v.champion, kUnk);
      }
    }
}

TEST(BuildState, HistoriesAreNormalizedAndWindowed) {
  const auto& c = world().w.corpus;
  const auto& m = c[c.size() - 1];
  const auto s = build_state(m, c, 4, world().norm, kL);
  for (int k : kBlueTurns) {
    const auto raw = c.history(m.at_turn(k).player_id, m.timestamp, kL);
    const auto& h = s.slot(k).history;
    ASSERT_EQ(h.size(), raw.size());
    EXPECT_LE(h.size(), kL);
    for (std::size_t i = 0; i < h.size(); ++i) {
      EXPECT_EQ(h[i].champion, raw[i].champion);
      EXPECT_EQ(h[i].features, world().norm.apply(raw[i].features));
    }
  }
}

TEST(BuildState, ColdStartPlayerHasEmptyVisibleHistory) {
  const auto& c = world().w.corpus;
  const auto s = build_state(c[0], c, 1, world().norm, kL);
  EXPECT_TRUE(s.slot(1).history_visible);
  EXPECT_TRUE(s.slot(1).history.empty());
}

TEST(BuildState, WithheldTeammateHidesHistoryOnly) {
  const auto& c = world().w.corpus;
  auto in = inputs_from_match(c[350], c, kL);
  in.withheld[3] = true;  // turn 4, Blue
  const auto s = build_state(in, 1, world().norm, kL);
  EXPECT_FALSE(s.slot(4).history_visible);
  EXPECT_TRUE(s.slot(4).history.empty());
  EXPECT_EQ(s.slot(4).role, in.roles[3]);
}

TEST(BuildState, PureAndDeterministic) {
  const auto& c = world().w.corpus;
  for (int t = 1; t <= kNumTurns; ++t) EXPECT_EQ(build_state(c[222], c, t, world().norm, kL), build_state(c[222], c, t, world().norm, kL));
  EXPECT_THROW(build_state(c[0], c, 0, world().norm, kL), Error);
  EXPECT_THROW(build_state(c[0], c, 11, world().norm, kL), Error);
}

TEST(BuildState, VisibilityGrowsForTheSameTeam) {
  const auto& c = world().w.corpus;
  const auto& m = c[333];
  for (int t = 1; t <= kNumTurns; ++t)
    for (int u = t + 1; u <= kNumTurns; ++u) {
      if (team_of_turn(t) != team_of_turn(u)) continue;
      const auto a = build_state(m, c, t, world().norm, kL), b = build_state(m, c, u, world().norm, kL);
      for (int k = 1; k <= kNumTurns; ++k) {
        if (a.slot(k).champion >= kFirstId) {
          EXPECT_EQ(a.slot(k).champion, b.slot(k).champion);
        }
        if (a.slot(k).history_visible) {
          EXPECT_EQ(a.slot(k).history.size(), b.slot(k).history.size());
        }
        if (a.slot(k).role != kUnk) {
          EXPECT_EQ(a.slot(k).role, b.slot(k).role);
        }
      }
    }
}

TEST(Legality, CountsOnALargeRoster) {
  SyntheticConfig sc;
  sc.num_champions = 156;
  sc.num_matches = 30;
  sc.num_players = 30;
  sc.bans_per_match = 10;
  const auto w = generate_synthetic(sc);
  const auto norm = fit_normalizer(w.corpus);
  const auto& m = w.corpus[20];
  const auto s = build_state(m, w.corpus, 10, norm, kL);
  EXPECT_EQ(legal_champions(s, w.corpus.vocab()).size(), 137u);
  auto in = inputs_from_match(m, w.corpus, kL);
  in.bans.clear();
  EXPECT_EQ(legal_champions(build_state(in, 1, norm, kL), w.corpus.vocab()).size(), 156u);
}

TEST(Legality, TruePickAlwaysLegalAndNothingVisibleIs) {
  const auto& c = world().w.corpus;
  for (const auto& m : c.matches())
    for (int t = 1; t <= kNumTurns; ++t) {
      const auto s = build_state(m, c, t, world().norm, kL);
      const auto mask = legal_mask(s, c.vocab().champion_rows());
      ASSERT_TRUE(mask[static_cast<std::size_t>(m.at_turn(t).champion)]);
      for (int b : m.bans) ASSERT_FALSE(mask[static_cast<std::size_t>(b)]);
      for (int k = 1; k < t; ++k) ASSERT_FALSE(mask[static_cast<std::size_t>(m.at_turn(k).champion)]);
      for (int r = 0; r < kFirstId; ++r) ASSERT_FALSE(mask[static_cast<std::size_t>(r)]);
    }
}

TEST(WhatIf, FillsQueryAndMasksNextTurn) {
  const auto& c = world().w.corpus;
  const auto& m = c[310];
  const auto rows = c.vocab().champion_rows();
  const auto s = build_state(m, c, 3, world().norm, kL);
  const int x = m.at_turn(3).champion;
  const auto w = apply_whatif(s, x, rows);
  EXPECT_TRUE(w.whatif);
  EXPECT_EQ(w.slot(3).champion, x);
  EXPECT_EQ(w.slot(4).champion, kMask);
  for (int k = 1; k <= kNumTurns; ++k)
    if (k != 3 && k != 4) {
      EXPECT_EQ(w.slot(k), s.slot(k)) << k;
    }
  EXPECT_EQ(w.turn, s.turn);
  EXPECT_EQ(w.bans, s.bans);
}

TEST(WhatIf, LastTurnCompletesTheDraft) {
  const auto& c = world().w.corpus;
  const auto& m = c[311];
  const auto s = build_state(m, c, 10, world().norm, kL);
  const auto w = apply_whatif(s, m.at_turn(10).champion, c.vocab().champion_rows());
  for (int k = 1; k <= kNumTurns; ++k) EXPECT_EQ(w.slot(k).champion, m.at_turn(k).champion);
}

TEST(WhatIf, IllegalCandidatesNameTheRule) {
  const auto& c = world().w.corpus;
  const auto& m = c[312];
  const auto rows = c.vocab().champion_rows();
  const auto s = build_state(m, c, 4, world().norm, kL);
  auto rule = [&](const DraftState& st, int ch) {
    try {
      apply_whatif(st, ch, rows);
    } catch (const LegalityError& e) {
      return e.rule();
    }
    return std::string("none");
  };
  EXPECT_EQ(rule(s, m.bans.front()), "banned");
  EXPECT_EQ(rule(s, m.at_turn(2).champion), "taken");
  EXPECT_EQ(rule(s, kMask), "unknown");
  EXPECT_EQ(rule(s, static_cast<int>(rows)), "unknown");
  EXPECT_EQ(rule(apply_whatif(s, m.at_turn(4).champion, rows), m.at_turn(5).champion), "whatif");
}

TEST(StateJson, NamesVisibleFieldsOnly) {
  const auto& c = world().w.corpus;
  const auto& m = c[313];
  const auto s = build_state(m, c, 2, world().norm, kL);
  const auto j = state_to_json(s, c.vocab());
  EXPECT_EQ(j["turn"], 2);
  EXPECT_EQ(j["acting_team"], "purple");
  EXPECT_EQ(j["slots"][0]["champion"], c.vocab().champion_name(m.at_turn(1).champion));
  EXPECT_TRUE(j["slots"][1]["champion"].is_null());
  EXPECT_EQ(j["slots"][1]["champion_id"], kMask);
  EXPECT_TRUE(j["slots"][0]["role"].is_null());  // Blue slot, Purple acting
  EXPECT_EQ(j["bans"].size(), m.bans.size());
}
