#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "draftrec/match_data.hpp"
#include "draftrec/rng.hpp"

namespace draftrec {

// Generator for desk-scale corpora with known ground truth.
//
// Players keep three preferred champions (each with a different natural role)
// and a hidden skill. Champion c's natural role is (c - kFirstId) % 5. Outcomes
// follow a logistic model over skill, within-team synergy, cross-team counters
// and a bonus for players on one of their preferred champions.
struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t num_players = 400;
  std::size_t num_matches = 5000;
  std::size_t num_champions = 50;
  double preference_sharpness = 0.9;
  double role_mismatch_weight = 0.1;
  std::size_t bans_per_match = 10;
  double skill_sd = 0.35;
  double synergy_scale = 1.0;  // sd of planted synergy entries
  double counter_scale = 0.0;
  double proficiency_bonus = 0.4;  // logit per player on a preferred champion
  bool planted_role_pairs = true;  // synergy only between planted role pairs
  // Optional explicit |C| x |C| synergy table (row-major, 0-based champion
  // index); overrides synergy_scale when non-empty.
  std::vector<double> synergy_table;
};

inline constexpr int kSyntheticRoles = 5;
inline const std::vector<std::string>& synthetic_role_names() {
  static const std::vector<std::string> names{"top", "jungle", "middle", "bottom", "support"};
  return names;
}
inline const std::vector<std::string>& synthetic_feature_names() {
  static const std::vector<std::string> names{"kills", "deaths", "assists", "gold_earned", "vision_score"};
  return names;
}

// Role pairs (0-based role index) that carry synergy when planted.
inline bool planted_pair(int ra, int rb) {
  auto is = [&](int x, int y) { return (ra == x && rb == y) || (ra == y && rb == x); };
  return is(1, 2) || is(3, 4);
}

inline int natural_role(int champion) { return (champion - kFirstId) % kSyntheticRoles; }

struct SyntheticPlayer {
  std::string id;
  double skill = 0;
  std::vector<int> preferred;  // champion ids
};

struct SyntheticWorld {
  SyntheticConfig config;
  Corpus corpus;
  std::vector<SyntheticPlayer> players;
  std::vector<double> synergy;  // |C| x |C|, 0-based
  std::vector<double> counter;  // |C| x |C|, antisymmetric

  double synergy_of(int a, int b) const {
    const std::size_t n = config.num_champions;
    return synergy[static_cast<std::size_t>(a - kFirstId) * n + static_cast<std::size_t>(b - kFirstId)];
  }
  double counter_of(int a, int b) const {
    const std::size_t n = config.num_champions;
    return counter[static_cast<std::size_t>(a - kFirstId) * n + static_cast<std::size_t>(b - kFirstId)];
  }
};

inline SyntheticWorld generate_synthetic(const SyntheticConfig& cfg) {
  const std::size_t C = cfg.num_champions;
  if (C < 20) throw DataError("synthetic size", "synthetic: need at least 20 champions for legal drafts");
  if (cfg.bans_per_match + kNumTurns > C)
    throw DataError("synthetic size", "synthetic: " + std::to_string(cfg.bans_per_match) + " bans + 10 picks exceed " +
                                          std::to_string(C) + " champions");
  if (cfg.num_players < kNumTurns) throw DataError("synthetic size", "synthetic: need at least 10 players");
  if (!cfg.synergy_table.empty() && cfg.synergy_table.size() != C * C)
    throw DataError("synthetic size", "synthetic: synergy table must be |C| x |C|");

  SyntheticWorld w;
  w.config = cfg;
  Rng root(cfg.seed);
  Rng table_rng = root.split(1), player_rng = root.split(2), match_rng = root.split(3);

  std::vector<std::string> champs;
  for (std::size_t i = 0; i < C; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "champ%03zu", i);
    champs.emplace_back(buf);
  }
  Vocab vocab(champs, synthetic_role_names(), synthetic_feature_names());

  w.synergy.assign(C * C, 0.0);
  w.counter.assign(C * C, 0.0);
  if (!cfg.synergy_table.empty()) {
    w.synergy = cfg.synergy_table;
  } else if (cfg.synergy_scale > 0) {
    for (std::size_t a = 0; a < C; ++a)
      for (std::size_t b = a + 1; b < C; ++b) {
        const bool on = !cfg.planted_role_pairs ||
                        planted_pair(static_cast<int>(a) % kSyntheticRoles, static_cast<int>(b) % kSyntheticRoles);
        const double v = on ? table_rng.normal(0.0, cfg.synergy_scale) : 0.0;
        w.synergy[a * C + b] = w.synergy[b * C + a] = v;
      }
  }
  if (cfg.counter_scale > 0)
    for (std::size_t a = 0; a < C; ++a)
      for (std::size_t b = a + 1; b < C; ++b) {
        const double v = table_rng.normal(0.0, cfg.counter_scale);
        w.counter[a * C + b] = v;
        w.counter[b * C + a] = -v;
      }

  for (std::size_t p = 0; p < cfg.num_players; ++p) {
    SyntheticPlayer pl;
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%05zu", p);
    pl.id = buf;
    pl.skill = cfg.skill_sd > 0 ? player_rng.normal(0.0, cfg.skill_sd) : 0.0;
    std::vector<int> roles{0, 1, 2, 3, 4};
    player_rng.shuffle(roles);
    for (int k = 0; k < 3; ++k) {
      const std::size_t per_role = (C - static_cast<std::size_t>(roles[k]) + kSyntheticRoles - 1) / kSyntheticRoles;
      const std::size_t j = player_rng.below(per_role);
      pl.preferred.push_back(kFirstId + roles[static_cast<std::size_t>(k)] + static_cast<int>(j) * kSyntheticRoles);
    }
    w.players.push_back(std::move(pl));
  }

  std::vector<MatchRecord> matches;
  matches.reserve(cfg.num_matches);
  std::vector<std::size_t> pool(cfg.num_players);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  for (std::size_t mi = 0; mi < cfg.num_matches; ++mi) {
    MatchRecord m;
    char buf[24];
    std::snprintf(buf, sizeof buf, "m%06zu", mi);
    m.match_id = buf;
    m.timestamp = 1'600'000'000 + static_cast<std::int64_t>(mi) * 600;

    // partial Fisher-Yates for 10 distinct players
    for (std::size_t k = 0; k < kNumTurns; ++k) std::swap(pool[k], pool[k + match_rng.below(pool.size() - k)]);
    std::vector<int> blue_roles{0, 1, 2, 3, 4}, purple_roles{0, 1, 2, 3, 4};
    match_rng.shuffle(blue_roles);
    match_rng.shuffle(purple_roles);

    std::vector<bool> taken(C + kFirstId, false);
    std::vector<int> all(C);
    for (std::size_t c = 0; c < C; ++c) all[c] = kFirstId + static_cast<int>(c);
    for (std::size_t b = 0; b < cfg.bans_per_match; ++b) {
      std::swap(all[b], all[b + match_rng.below(C - b)]);
      m.bans.push_back(all[b]);
      taken[static_cast<std::size_t>(all[b])] = true;
    }
    std::sort(m.bans.begin(), m.bans.end());

    int bi = 0, pi = 0;
    std::array<bool, kNumTurns> proficient{};
    for (int t = 1; t <= kNumTurns; ++t) {
      const auto& pl = w.players[pool[static_cast<std::size_t>(t - 1)]];
      const Team team = team_of_turn(t);
      const int role = team == Team::Blue ? blue_roles[static_cast<std::size_t>(bi++)] : purple_roles[static_cast<std::size_t>(pi++)];
      auto weight = [&](int c) { return natural_role(c) == role ? 1.0 : cfg.role_mismatch_weight; };

      std::vector<int> cand;
      std::vector<double> wts;
      for (int c : pl.preferred)
        if (!taken[static_cast<std::size_t>(c)]) {
          cand.push_back(c);
          wts.push_back(weight(c));
        }
      const bool use_pref = !cand.empty() && match_rng.bernoulli(cfg.preference_sharpness);
      if (!use_pref) {
        cand.clear();
        wts.clear();
        for (int c : all)
          if (!taken[static_cast<std::size_t>(c)] &&
              std::find(pl.preferred.begin(), pl.preferred.end(), c) == pl.preferred.end()) {
            cand.push_back(c);
            wts.push_back(weight(c));
          }
        std::sort(cand.begin(), cand.end());
        for (std::size_t i = 0; i < cand.size(); ++i) wts[i] = weight(cand[i]);
      }
      const int champ = cand[match_rng.weighted(wts)];
      taken[static_cast<std::size_t>(champ)] = true;
      proficient[static_cast<std::size_t>(t - 1)] =
          std::find(pl.preferred.begin(), pl.preferred.end(), champ) != pl.preferred.end();

      Slot s;
      s.player_id = pl.id;
      s.turn = t;
      s.team = team;
      s.role = kFirstId + role;
      s.champion = champ;
      m.slots[static_cast<std::size_t>(t - 1)] = std::move(s);
    }

    double logit = 0;
    for (int t = 1; t <= kNumTurns; ++t) {
      const auto& st = m.at_turn(t);
      const double sign = st.team == Team::Blue ? 1.0 : -1.0;
      logit += sign * (w.players[pool[static_cast<std::size_t>(t - 1)]].skill +
                       (proficient[static_cast<std::size_t>(t - 1)] ? cfg.proficiency_bonus : 0.0));
      for (int u = t + 1; u <= kNumTurns; ++u) {
        const auto& su = m.at_turn(u);
        if (su.team == st.team)
          logit += sign * w.synergy_of(st.champion, su.champion);
        else
          logit += sign * w.counter_of(st.champion, su.champion);
      }
    }
    const bool blue_win = match_rng.bernoulli(1.0 / (1.0 + std::exp(-logit)));

    for (int t = 1; t <= kNumTurns; ++t) {
      auto& s = m.slots[static_cast<std::size_t>(t - 1)];
      s.win = (s.team == Team::Blue) == blue_win;
      const double skill = w.players[pool[static_cast<std::size_t>(t - 1)]].skill;
      const double won = s.win ? 1.0 : 0.0;
      const bool support = s.role == kFirstId + 4;
      s.features = {
          static_cast<float>(std::max(0.0, std::round(4.0 + 3.0 * skill + 2.5 * won + match_rng.normal(0, 2.0)))),
          static_cast<float>(std::max(0.0, std::round(5.0 - 2.0 * skill - 2.0 * won + match_rng.normal(0, 1.5)))),
          static_cast<float>(std::max(0.0, std::round(7.0 + 2.0 * skill + 3.0 * won + match_rng.normal(0, 2.5)))),
          static_cast<float>(std::round(10000.0 + 1500.0 * skill + 1800.0 * won + match_rng.normal(0, 1200.0))),
          static_cast<float>(std::max(0.0, std::round((support ? 45.0 : 20.0) + 4.0 * skill + match_rng.normal(0, 5.0)))),
      };
    }
    matches.push_back(std::move(m));
  }
  for (auto& m : matches) validate_match(m, vocab);
  w.corpus = Corpus(std::move(vocab), std::move(matches));
  return w;
}

// Control corpus: same drafts, outcomes replaced by balanced random labels
// (exactly half Blue wins within each chronological split).
inline Corpus shuffle_outcomes(const Corpus& corpus, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MatchRecord> matches = corpus.matches();
  auto relabel = [&](std::size_t b, std::size_t e) {
    std::vector<char> labels(e - b, 0);
    for (std::size_t i = 0; i < labels.size() / 2; ++i) labels[i] = 1;
    if (labels.size() % 2 == 1) labels.back() = rng.bernoulli(0.5);
    rng.shuffle(labels);
    for (std::size_t i = b; i < e; ++i)
      for (auto& s : matches[i].slots) s.win = (s.team == Team::Blue) == (labels[i - b] != 0);
  };
  for (auto part : {SplitPart::Train, SplitPart::Val, SplitPart::Test}) {
    auto [b, e] = corpus.range(part);
    relabel(b, e);
  }
  return Corpus(corpus.vocab(), std::move(matches));
}

}  // namespace draftrec
