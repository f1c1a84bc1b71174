#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "draftrec/checkpoint.hpp"
#include "draftrec/model.hpp"

namespace draftrec {

enum class Strategy { P, V, PPlusV };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "p") return Strategy::P;
  if (s == "v") return Strategy::V;
  if (s == "p+v" || s == "p v" || s == "pv") return Strategy::PPlusV;  // '+' arrives as ' ' in unescaped query strings
  throw Error("unknown strategy '" + s + "' (p|v|p+v)");
}

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::P: return "p";
    case Strategy::V: return "v";
    default: return "p+v";
  }
}

inline double player_perspective(double blue_prob, Team acting) { return acting == Team::Blue ? blue_prob : 1.0 - blue_prob; }

struct Explanation {
  std::optional<int> synergy_champion;
  double synergy_weight = 0;
  std::optional<int> counter_champion;
  double counter_weight = 0;
  bool empty() const { return !synergy_champion && !counter_champion; }
};

struct Recommendation {
  int champion = kPad;
  double select_prob = 0;
  double win_prob = 0;  // acting player's perspective
  bool passed_threshold = false;
  Explanation explanation;
};

// Model outputs for every legal champion of one state.
struct StateScores {
  std::vector<int> legal;       // ascending id
  std::vector<double> p;        // p-hat per legal champion
  std::vector<double> v;        // what-if win probability, acting player's view
  double current_blue = 0.5;    // v-hat of the state itself
  std::vector<std::array<double, kNumTurns>> attention_row;  // per candidate: head-averaged final-layer row of slot t
};

// Selection probabilities for the state and one what-if probe per candidate,
// all in a single batched forward that encodes the visible histories once.
inline StateScores score_state(const DraftRecModel<float>& model, const DraftState& state,
                               const std::vector<int>* candidates = nullptr, bool with_attention = false) {
  if (state.whatif) throw Error("score_state: state already holds a what-if pick");
  StateScores out;
  const auto mask = legal_mask(state, model.champion_rows());
  for (std::size_t c = 0; c < mask.size(); ++c)
    if (mask[c]) out.legal.push_back(static_cast<int>(c));
  const std::vector<int>& probe = candidates ? *candidates : out.legal;
  if (probe.empty()) throw Error("probe_outcomes: empty candidate set");

  auto bb = model.builder();
  const auto rows = bb.add_histories(state);
  bb.add_state(state, rows);
  for (int c : probe) bb.add_state(apply_whatif(state, c, model.champion_rows()), rows);
  const auto batch = bb.take();
  const auto r = model.forward(batch, nullptr, false, with_attention);

  const auto probs = r.champion_probs();
  for (int c : out.legal) out.p.push_back(static_cast<double>(probs(0, static_cast<std::size_t>(c))));
  const Team acting = state.acting_team();
  out.current_blue = static_cast<double>(r.blue_win_prob(0));
  for (std::size_t i = 0; i < probe.size(); ++i)
    out.v.push_back(player_perspective(static_cast<double>(r.blue_win_prob(i + 1)), acting));
  if (candidates) {
    // p stays aligned with legal; reorder v to match as well
    std::vector<double> v(out.legal.size(), 0.0);
    for (std::size_t i = 0; i < probe.size(); ++i) {
      auto it = std::lower_bound(out.legal.begin(), out.legal.end(), probe[i]);
      v[static_cast<std::size_t>(it - out.legal.begin())] = out.v[i];
    }
    out.v = std::move(v);
  }
  if (with_attention && model.config().layers > 0) {
    const std::size_t H = model.config().heads, t = static_cast<std::size_t>(state.turn - 1);
    out.attention_row.assign(out.legal.size(), {});
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const std::size_t seq = i + 1;
      auto it = std::lower_bound(out.legal.begin(), out.legal.end(), probe[i]);
      auto& row = out.attention_row[static_cast<std::size_t>(it - out.legal.begin())];
      for (std::size_t h = 0; h < H; ++h) {
        const float* a = r.attention.row((seq * H + h) * kNumTurns + t);
        for (std::size_t j = 0; j < kNumTurns; ++j) row[j] += static_cast<double>(a[j]) / static_cast<double>(H);
      }
    }
  }
  return out;
}

// Player-perspective what-if win probability for each candidate.
inline std::vector<double> probe_outcomes(const DraftRecModel<float>& model, const DraftState& state,
                                          const std::vector<int>& candidates) {
  if (candidates.empty()) throw Error("probe_outcomes: empty candidate set");
  const auto s = score_state(model, state, &candidates);
  std::vector<double> out;
  for (int c : candidates) {
    auto it = std::lower_bound(s.legal.begin(), s.legal.end(), c);
    out.push_back(s.v[static_cast<std::size_t>(it - s.legal.begin())]);
  }
  return out;
}

// Full ordering of the legal champions (indices into legal/p/v).
inline std::vector<std::size_t> rank_candidates(const std::vector<int>& legal, const std::vector<double>& p,
                                                const std::vector<double>& v, Strategy strategy, double tau) {
  std::vector<std::size_t> idx(legal.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto by_p = [&](std::size_t a, std::size_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return legal[a] < legal[b];
  };
  auto by_v = [&](std::size_t a, std::size_t b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return by_p(a, b);
  };
  switch (strategy) {
    case Strategy::P:
      std::sort(idx.begin(), idx.end(), by_p);
      break;
    case Strategy::V:
      std::sort(idx.begin(), idx.end(), by_v);
      break;
    case Strategy::PPlusV: {
      auto passes = [&](std::size_t i) { return tau <= 0 || p[i] > tau; };
      auto mid = std::stable_partition(idx.begin(), idx.end(), passes);
      std::sort(idx.begin(), mid, by_v);
      std::sort(mid, idx.end(), by_p);
      break;
    }
  }
  return idx;
}

// Head-averaged attention row of the query slot -> strongest visible teammate
// and opponent. Slots without a visible champion are not attributable.
inline Explanation explain_from_attention(const std::array<double, kNumTurns>& row, const DraftState& whatif_state) {
  Explanation e;
  const Team acting = whatif_state.acting_team();
  for (int k = 1; k <= kNumTurns; ++k) {
    if (k == whatif_state.turn) continue;
    const auto& v = whatif_state.slot(k);
    if (v.champion < kFirstId) continue;
    const double w = row[static_cast<std::size_t>(k - 1)];
    if (v.team == acting) {
      if (!e.synergy_champion || w > e.synergy_weight) {
        e.synergy_champion = v.champion;
        e.synergy_weight = w;
      }
    } else if (!e.counter_champion || w > e.counter_weight) {
      e.counter_champion = v.champion;
      e.counter_weight = w;
    }
  }
  return e;
}

inline std::vector<Recommendation> recommend_from_scores(const StateScores& s, const DraftState& state,
                                                         std::size_t champion_rows, Strategy strategy, double tau,
                                                         std::size_t k) {
  if (k == 0) throw Error("recommend: k must be at least 1");
  const auto order = rank_candidates(s.legal, s.p, s.v, strategy, tau);
  std::vector<Recommendation> out;
  for (std::size_t i = 0; i < order.size() && out.size() < k; ++i) {
    const std::size_t j = order[i];
    Recommendation r;
    r.champion = s.legal[j];
    r.select_prob = s.p[j];
    r.win_prob = s.v[j];
    r.passed_threshold = s.p[j] > tau;
    if (!s.attention_row.empty())
      r.explanation = explain_from_attention(s.attention_row[j], apply_whatif(state, r.champion, champion_rows));
    out.push_back(r);
  }
  return out;
}

inline std::vector<Recommendation> recommend(const DraftRecModel<float>& model, const DraftState& state,
                                             Strategy strategy, double tau, std::size_t k, bool explain = true) {
  const auto s = score_state(model, state, nullptr, explain);
  return recommend_from_scores(s, state, model.champion_rows(), strategy, tau, k);
}

// Explanation for one chosen champion, from its what-if forward.
inline Explanation explain(const DraftRecModel<float>& model, const DraftState& state, int champion) {
  const std::vector<int> one{champion};
  const auto s = score_state(model, state, &one, true);
  auto it = std::lower_bound(s.legal.begin(), s.legal.end(), champion);
  return explain_from_attention(s.attention_row[static_cast<std::size_t>(it - s.legal.begin())],
                                apply_whatif(state, champion, model.champion_rows()));
}

// Mean final-layer attention (heads and states averaged), rows and columns
// reordered so index i is the slot holding label_order position i.
// slot_labels[s][k] gives the label index (0..9) of slot k in state s.
inline std::array<std::array<double, kNumTurns>, kNumTurns> role_attention_heatmap(
    const DraftRecModel<float>& model, const std::vector<DraftState>& states,
    const std::vector<std::array<int, kNumTurns>>& slot_labels) {
  if (states.empty()) throw Error("heatmap: no states");
  if (model.config().layers == 0) throw Error("heatmap: model has no attention layers");
  if (slot_labels.size() != states.size()) throw Error("heatmap: one label row per state required");
  std::array<std::array<double, kNumTurns>, kNumTurns> acc{};
  const std::size_t H = model.config().heads;
  constexpr std::size_t chunk = 64;
  for (std::size_t b = 0; b < states.size(); b += chunk) {
    auto bb = model.builder();
    const std::size_t e = std::min(states.size(), b + chunk);
    for (std::size_t i = b; i < e; ++i) bb.add_state(states[i]);
    const auto r = model.forward(bb.take(), nullptr, false, true);
    for (std::size_t i = b; i < e; ++i) {
      const auto& lab = slot_labels[i];
      const std::size_t seq = i - b;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t q = 0; q < kNumTurns; ++q) {
          const float* a = r.attention.row((seq * H + h) * kNumTurns + q);
          for (std::size_t kk = 0; kk < kNumTurns; ++kk)
            acc[static_cast<std::size_t>(lab[q])][static_cast<std::size_t>(lab[kk])] += a[kk];
        }
    }
  }
  const double n = static_cast<double>(states.size() * H);
  for (auto& row : acc)
    for (auto& x : row) x /= n;
  return acc;
}

struct Heatmap {
  std::vector<std::string> labels;  // "blue top", ..., "purple support"
  std::array<std::array<double, kNumTurns>, kNumTurns> matrix{};
  std::size_t states = 0;
};

// Every turn state of the split's matches, slots labelled by (team, true role).
// Matches whose roles are not a full set per team are skipped.
inline Heatmap heatmap_over_split(const Checkpoint& ck, const Corpus& corpus, SplitPart split) {
  const Vocab& vocab = corpus.vocab();
  const std::size_t R = vocab.role_rows() - kFirstId;
  if (R != kTeamSize) throw Error("heatmap: needs exactly 5 roles, vocab has " + std::to_string(R));
  Heatmap h;
  for (int team = 0; team < 2; ++team)
    for (std::size_t r = 0; r < R; ++r)
      h.labels.push_back(std::string(team_name(static_cast<Team>(team))) + " " + vocab.role_name(static_cast<int>(r + kFirstId)));
  std::vector<DraftState> states;
  std::vector<std::array<int, kNumTurns>> labels;
  const auto [b, e] = corpus.range(split);
  const std::size_t L = ck.config.model.history_len;
  for (std::size_t mi = b; mi < e; ++mi) {
    const auto& m = corpus[mi];
    std::array<int, kNumTurns> lab{};
    std::array<std::array<bool, kTeamSize>, 2> seen{};
    bool ok = true;
    for (int t = 1; t <= kNumTurns && ok; ++t) {
      const auto& s = m.at_turn(t);
      const int team = static_cast<int>(team_of_turn(t));
      const int r = s.role - kFirstId;
      if (r < 0 || r >= static_cast<int>(R) || seen[team][r]) {
        ok = false;
        break;
      }
      seen[team][r] = true;
      lab[static_cast<std::size_t>(t - 1)] = team * static_cast<int>(R) + r;
    }
    if (!ok) continue;
    const auto in = inputs_from_match(m, corpus, L);
    for (int t = 1; t <= kNumTurns; ++t) {
      states.push_back(build_state(in, t, ck.normalizer, L));
      labels.push_back(lab);
    }
  }
  if (states.empty()) throw Error("heatmap: no match in the split has a full role assignment");
  h.matrix = role_attention_heatmap(ck.model, states, labels);
  h.states = states.size();
  return h;
}

inline void write_heatmap_csv(std::ostream& os, const Heatmap& h) {
  os.precision(9);
  os << "query";
  for (const auto& l : h.labels) os << ',' << l;
  os << '\n';
  for (std::size_t i = 0; i < kNumTurns; ++i) {
    os << h.labels[i];
    for (double x : h.matrix[i]) os << ',' << x;
    os << '\n';
  }
}

}  // namespace draftrec
