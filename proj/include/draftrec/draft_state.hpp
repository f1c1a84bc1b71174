#pragma once

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <vector>

#include "draftrec/match_data.hpp"

namespace draftrec {

// What the acting player can see about one slot.
struct SlotView {
  int champion = kUnk;  // real id, kMask (query slot) or kUnk (not yet visible)
  int role = kUnk;
  Team team = Team::Blue;
  bool history_visible = false;  // teammate with a known history
  std::vector<HistoryEntry> history;  // normalized, oldest first, at most L entries

  bool operator==(const SlotView& o) const {
    if (champion != o.champion || role != o.role || team != o.team || history_visible != o.history_visible ||
        history.size() != o.history.size())
      return false;
    for (std::size_t i = 0; i < history.size(); ++i)
      if (history[i].champion != o.history[i].champion || history[i].role != o.history[i].role ||
          history[i].features != o.history[i].features)
        return false;
    return true;
  }
};

struct DraftState {
  int turn = 1;
  std::vector<int> bans;  // sorted
  std::array<SlotView, kNumTurns> slots;  // slots[k] is turn k + 1
  bool whatif = false;  // slot `turn` filled by apply_whatif

  Team acting_team() const { return team_of_turn(turn); }
  const SlotView& slot(int t) const { return slots[static_cast<std::size_t>(t - 1)]; }
  SlotView& slot(int t) { return slots[static_cast<std::size_t>(t - 1)]; }

  bool operator==(const DraftState&) const = default;
};

// Everything known about a draft regardless of who looks at it. Matches and
// live sessions both reduce to this before visibility is applied.
struct DraftInputs {
  std::vector<int> bans;
  std::array<int, kNumTurns> picks{};  // entries for turns >= t are ignored
  std::array<int, kNumTurns> roles{};
  std::array<std::vector<HistoryEntry>, kNumTurns> histories;  // raw features
  std::array<bool, kNumTurns> withheld{};  // anonymous player: history unknown even to teammates
};

inline DraftInputs inputs_from_match(const MatchRecord& m, const Corpus& corpus, std::size_t L) {
  DraftInputs in;
  in.bans = m.bans;
  for (int t = 1; t <= kNumTurns; ++t) {
    const auto& s = m.at_turn(t);
    const auto k = static_cast<std::size_t>(t - 1);
    in.picks[k] = s.champion;
    in.roles[k] = s.role;
    in.histories[k] = corpus.history(s.player_id, m.timestamp, L);
  }
  return in;
}

// Applies the visibility rules for turn t: earlier picks are public, the
// query slot is [mask], later picks are [unk]; roles and histories are only
// visible for the acting team.
inline DraftState build_state(const DraftInputs& in, int t, const Normalizer& norm, std::size_t L) {
  if (t < 1 || t > kNumTurns) throw Error("build_state: turn " + std::to_string(t) + " outside 1..10");
  DraftState s;
  s.turn = t;
  s.bans = in.bans;
  std::sort(s.bans.begin(), s.bans.end());
  const Team acting = team_of_turn(t);
  for (int k = 1; k <= kNumTurns; ++k) {
    const auto i = static_cast<std::size_t>(k - 1);
    SlotView& v = s.slots[i];
    v.team = team_of_turn(k);
    v.champion = k < t ? in.picks[i] : (k == t ? kMask : kUnk);
    if (v.team == acting) {
      v.role = in.roles[i];
      if (!in.withheld[i]) {
        v.history_visible = true;
        const auto& h = in.histories[i];
        const std::size_t n = std::min(h.size(), L);
        for (std::size_t j = h.size() - n; j < h.size(); ++j) {
          HistoryEntry e = h[j];
          norm.apply_inplace(e.features);
          v.history.push_back(std::move(e));
        }
      }
    }
  }
  return s;
}

inline DraftState build_state(const MatchRecord& m, const Corpus& corpus, int t, const Normalizer& norm,
                              std::size_t L) {
  return build_state(inputs_from_match(m, corpus, L), t, norm, L);
}

// Bitmap over champion table rows; true means the champion may be picked now.
inline std::vector<bool> legal_mask(const DraftState& s, std::size_t champion_rows) {
  std::vector<bool> legal(champion_rows, false);
  for (std::size_t c = kFirstId; c < champion_rows; ++c) legal[c] = true;
  auto drop = [&](int c) {
    if (c >= kFirstId && static_cast<std::size_t>(c) < champion_rows) legal[static_cast<std::size_t>(c)] = false;
  };
  for (int b : s.bans) drop(b);
  for (const auto& v : s.slots) drop(v.champion);
  return legal;
}

inline std::vector<int> legal_champions(const DraftState& s, const Vocab& vocab) {
  const auto mask = legal_mask(s, vocab.champion_rows());
  std::vector<int> out;
  for (std::size_t c = 0; c < mask.size(); ++c)
    if (mask[c]) out.push_back(static_cast<int>(c));
  return out;
}

// Fills the query slot with c and turns the next turn's slot into the query.
inline DraftState apply_whatif(const DraftState& s, int c, std::size_t champion_rows) {
  if (s.whatif) throw LegalityError("whatif", "apply_whatif: state already holds a what-if pick");
  const auto legal = legal_mask(s, champion_rows);
  if (c < 0 || static_cast<std::size_t>(c) >= champion_rows || !legal[static_cast<std::size_t>(c)]) {
    const bool banned = std::find(s.bans.begin(), s.bans.end(), c) != s.bans.end();
    throw LegalityError(banned ? "banned" : (c >= kFirstId && static_cast<std::size_t>(c) < champion_rows) ? "taken" : "unknown",
                        "apply_whatif: champion " + std::to_string(c) + " is not legal at turn " + std::to_string(s.turn));
  }
  DraftState out = s;
  out.whatif = true;
  out.slot(s.turn).champion = c;
  if (s.turn < kNumTurns) out.slot(s.turn + 1).champion = kMask;
  return out;
}

inline json state_to_json(const DraftState& s, const Vocab& vocab) {
  json slots = json::array();
  for (int k = 1; k <= kNumTurns; ++k) {
    const auto& v = s.slot(k);
    json js = {{"turn", k},
               {"team", team_name(v.team)},
               {"champion", v.champion >= kFirstId ? json(vocab.champion_name(v.champion)) : json(nullptr)},
               {"champion_id", v.champion},
               {"role", v.role >= kFirstId ? json(vocab.role_name(v.role)) : json(nullptr)},
               {"history_visible", v.history_visible},
               {"history_length", v.history.size()}};
    slots.push_back(std::move(js));
  }
  json bans = json::array();
  for (int b : s.bans) bans.push_back(vocab.champion_name(b));
  return {{"turn", s.turn}, {"acting_team", team_name(s.acting_team())}, {"bans", bans}, {"slots", slots}};
}

}  // namespace draftrec
