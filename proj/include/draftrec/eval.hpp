#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "draftrec/checkpoint.hpp"
#include "draftrec/recommender.hpp"

namespace draftrec {

struct RankMetrics {
  double hr = 0;
  double ng = 0;
};

// HR@k and NG@k of one ranked list with a single relevant item (1-based rank).
inline RankMetrics ranking_metrics(std::span<const int> ranked, int truth, std::size_t k) {
  auto it = std::find(ranked.begin(), ranked.end(), truth);
  if (it == ranked.end()) throw Error("ranking_metrics: ground truth " + std::to_string(truth) + " not among candidates");
  const auto rank = static_cast<std::size_t>(it - ranked.begin()) + 1;
  if (rank > k) return {};
  return {1.0, 1.0 / std::log2(static_cast<double>(rank) + 1.0)};
}

struct OutcomeMetrics {
  double acc = 0;
  double mae = 0;
};

// v >= 0.5 predicts a win.
inline OutcomeMetrics outcome_metrics(std::span<const double> v, std::span<const double> o) {
  if (v.size() != o.size())
    throw ShapeError("outcome_metrics: " + std::to_string(v.size()) + " predictions, " + std::to_string(o.size()) + " labels");
  if (v.empty()) throw Error("outcome_metrics: no predictions");
  OutcomeMetrics m;
  for (std::size_t i = 0; i < v.size(); ++i) {
    m.acc += ((v[i] >= 0.5) == (o[i] >= 0.5)) ? 1.0 : 0.0;
    m.mae += std::abs(v[i] - o[i]);
  }
  m.acc /= static_cast<double>(v.size());
  m.mae /= static_cast<double>(v.size());
  return m;
}

struct MetricReport {
  std::string name;
  std::size_t states = 0;
  std::size_t matches = 0;
  std::optional<double> hr1, hr5, hr10, ng5, ng10;
  std::optional<double> acc, mae;
  std::optional<double> win3, win10;

  bool operator==(const MetricReport&) const = default;
};

inline std::vector<std::pair<std::string, std::optional<double>>> report_fields(const MetricReport& r) {
  return {{"HR@1", r.hr1}, {"HR@5", r.hr5}, {"HR@10", r.hr10}, {"NG@5", r.ng5}, {"NG@10", r.ng10},
          {"ACC", r.acc}, {"MAE", r.mae}, {"Win@3", r.win3}, {"Win@10", r.win10}};
}

inline void write_report_csv(std::ostream& os, const std::vector<MetricReport>& reports) {
  os << "name,states";
  if (reports.empty()) {
    os << "\n";
    return;
  }
  for (const auto& [k, v] : report_fields(reports.front())) os << ',' << k;
  os << "\n";
  for (const auto& r : reports) {
    os << r.name << ',' << r.states;
    for (const auto& [k, v] : report_fields(r)) {
      os << ',';
      if (v) os << std::setprecision(10) << *v;
    }
    os << "\n";
  }
}

inline void write_report_table(std::ostream& os, const std::vector<MetricReport>& reports) {
  os << std::left << std::setw(14) << "model" << std::right << std::setw(8) << "states";
  if (!reports.empty())
    for (const auto& [k, v] : report_fields(reports.front())) os << std::setw(9) << k;
  os << "\n";
  for (const auto& r : reports) {
    os << std::left << std::setw(14) << r.name << std::right << std::setw(8) << r.states;
    for (const auto& [k, v] : report_fields(r)) {
      if (v)
        os << std::setw(9) << std::fixed << std::setprecision(4) << *v;
      else
        os << std::setw(9) << "-";
    }
    os << std::defaultfloat << "\n";
  }
}

namespace detail {

// One evaluated state; reduced after sorting so the result does not depend
// on the order matches were visited.
struct StateRecord {
  std::string match_id;
  int turn = 0;
  std::vector<int> ranked;  // may be empty (outcome-only records)
  int truth = kPad;
  double v_blue = 0;
  double o_blue = 0;
  double win3 = 0, win10 = 0;
  bool has_outcome = false;
  bool has_win = false;
};

inline MetricReport reduce(std::string name, std::vector<StateRecord> recs) {
  if (recs.empty()) throw Error("evaluate: no states to evaluate");
  std::sort(recs.begin(), recs.end(), [](const StateRecord& a, const StateRecord& b) {
    return a.match_id != b.match_id ? a.match_id < b.match_id : a.turn < b.turn;
  });
  MetricReport r;
  r.name = std::move(name);
  r.states = recs.size();
  std::string last;
  double hr1 = 0, hr5 = 0, hr10 = 0, ng5 = 0, ng10 = 0, w3 = 0, w10 = 0;
  std::size_t ranked = 0, won = 0;
  std::vector<double> v, o;
  for (const auto& s : recs) {
    if (s.match_id != last) {
      ++r.matches;
      last = s.match_id;
    }
    if (!s.ranked.empty()) {
      ++ranked;
      hr1 += ranking_metrics(s.ranked, s.truth, 1).hr;
      const auto m5 = ranking_metrics(s.ranked, s.truth, 5);
      const auto m10 = ranking_metrics(s.ranked, s.truth, 10);
      hr5 += m5.hr;
      ng5 += m5.ng;
      hr10 += m10.hr;
      ng10 += m10.ng;
    }
    if (s.has_outcome) {
      v.push_back(s.v_blue);
      o.push_back(s.o_blue);
    }
    if (s.has_win) {
      ++won;
      w3 += s.win3;
      w10 += s.win10;
    }
  }
  if (ranked) {
    const double n = static_cast<double>(ranked);
    r.hr1 = hr1 / n;
    r.hr5 = hr5 / n;
    r.hr10 = hr10 / n;
    r.ng5 = ng5 / n;
    r.ng10 = ng10 / n;
  }
  if (!v.empty()) {
    const auto om = outcome_metrics(v, o);
    r.acc = om.acc;
    r.mae = om.mae;
  }
  if (won) {
    r.win3 = w3 / static_cast<double>(won);
    r.win10 = w10 / static_cast<double>(won);
  }
  return r;
}

inline std::vector<std::size_t> match_indices(const Corpus& corpus, SplitPart part) {
  const auto [b, e] = corpus.range(part);
  if (e <= b) throw Error("evaluate: empty split");
  std::vector<std::size_t> idx;
  for (std::size_t i = b; i < e; ++i) idx.push_back(i);
  return idx;
}

inline std::vector<int> rank_by_scores(const std::vector<int>& legal, const std::vector<double>& score) {
  std::vector<std::size_t> idx(legal.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return score[a] != score[b] ? score[a] > score[b] : legal[a] < legal[b];
  });
  std::vector<int> out;
  for (auto i : idx) out.push_back(legal[i]);
  return out;
}

}  // namespace detail

// Leakage guard: every evaluated match must be strictly later than every training match.
inline void assert_no_leakage(const Corpus& corpus, const std::vector<std::size_t>& eval_matches) {
  const auto [tb, te] = corpus.range(SplitPart::Train);
  if (te == 0) return;
  const auto last_train = corpus[te - 1].timestamp;
  for (auto i : eval_matches)
    if (i < te || corpus[i].timestamp < last_train)
      throw DataError("split leakage", "evaluate: match " + corpus[i].match_id + " overlaps the training split");
}

struct EvalOptions {
  SplitPart split = SplitPart::Test;
  bool post_draft = false;
  // Restrict to these match indices (any order); empty means the whole split.
  std::vector<std::size_t> matches;
};

// Per-turn protocol: every (match, turn) state of the split, uniformly averaged.
inline MetricReport evaluate(const DraftRecModel<float>& model, const Corpus& corpus, const Normalizer& norm,
                             const EvalOptions& opt = {}) {
  auto idx = opt.matches.empty() ? detail::match_indices(corpus, opt.split) : opt.matches;
  if (opt.split == SplitPart::Test || opt.split == SplitPart::Val) assert_no_leakage(corpus, idx);
  std::vector<detail::StateRecord> recs;
  const std::size_t L = model.config().history_len;
  for (auto mi : idx) {
    const auto& m = corpus[mi];
    const double o = m.blue_win() ? 1.0 : 0.0;
    if (opt.post_draft) {
      // completed draft as seen by the last picker
      const auto s10 = build_state(m, corpus, kNumTurns, norm, L);
      auto bb = model.builder();
      bb.add_state(apply_whatif(s10, m.at_turn(kNumTurns).champion, model.champion_rows()));
      const auto r = model.forward(bb.take());
      detail::StateRecord rec;
      rec.match_id = m.match_id;
      rec.turn = kNumTurns;
      rec.v_blue = static_cast<double>(r.blue_win_prob(0));
      rec.o_blue = o;
      rec.has_outcome = true;
      recs.push_back(std::move(rec));
      continue;
    }
    auto bb = model.builder();
    bb.add_match(m, corpus, norm);
    const auto batch = bb.take();
    const auto r = model.forward(batch);
    const auto probs = r.champion_probs();
    for (std::size_t q = 0; q < r.query_seq.size(); ++q) {
      const std::size_t s = r.query_seq[q];
      const int t = batch.query_turn[s];
      std::vector<int> legal;
      std::vector<double> score;
      for (std::size_t c = 0; c < batch.champion_rows; ++c)
        if (batch.legal[s * batch.champion_rows + c]) {
          legal.push_back(static_cast<int>(c));
          score.push_back(static_cast<double>(probs(q, c)));
        }
      detail::StateRecord rec;
      rec.match_id = m.match_id;
      rec.turn = t;
      rec.ranked = detail::rank_by_scores(legal, score);
      rec.truth = m.at_turn(t).champion;
      rec.v_blue = static_cast<double>(r.blue_win_prob(s));
      rec.o_blue = o;
      rec.has_outcome = true;
      recs.push_back(std::move(rec));
    }
  }
  return detail::reduce(opt.post_draft ? "draftrec-post" : "draftrec", std::move(recs));
}

// Frequency rankers over the acting player's own history window.
struct BaselineRanker {
  enum class Kind { Pop, SPop, Random } kind = Kind::Pop;
  std::size_t n = 0;  // S-POP recency window
  std::uint64_t seed = 0;

  static BaselineRanker parse(const std::string& s) {
    if (s == "pop") return {Kind::Pop, 0, 0};
    if (s.rfind("spop:", 0) == 0) {
      const auto n = std::stoul(s.substr(5));
      if (n == 0) throw Error("baseline: spop window must be positive");
      return {Kind::SPop, n, 0};
    }
    if (s == "random") return {Kind::Random, 0, 0};
    throw Error("unknown baseline '" + s + "' (pop|spop:n|random)");
  }
  std::string name() const {
    switch (kind) {
      case Kind::Pop: return "pop";
      case Kind::SPop: return "spop:" + std::to_string(n);
      default: return "random";
    }
  }

  // history: oldest first, already limited to the model's window.
  std::vector<int> rank(const std::vector<int>& legal, const std::vector<HistoryEntry>& history, Rng* rng) const {
    std::vector<double> score(legal.size(), 0.0);
    if (kind == Kind::Random) {
      std::vector<int> out = legal;
      rng->shuffle(out);
      return out;
    }
    const std::size_t start = kind == Kind::SPop && history.size() > n ? history.size() - n : 0;
    std::map<int, double> freq;
    for (std::size_t i = start; i < history.size(); ++i) freq[history[i].champion] += 1;
    for (std::size_t i = 0; i < legal.size(); ++i) {
      auto it = freq.find(legal[i]);
      if (it != freq.end()) score[i] = it->second;
    }
    return detail::rank_by_scores(legal, score);
  }
};

inline MetricReport evaluate_baseline(const BaselineRanker& ranker, const Corpus& corpus, std::size_t L,
                                      const EvalOptions& opt = {}) {
  auto idx = opt.matches.empty() ? detail::match_indices(corpus, opt.split) : opt.matches;
  if (opt.split == SplitPart::Test || opt.split == SplitPart::Val) assert_no_leakage(corpus, idx);
  std::vector<detail::StateRecord> recs;
  const Normalizer identity{std::vector<double>(corpus.vocab().num_features(), 0.0),
                            std::vector<double>(corpus.vocab().num_features(), 1.0), 1e30};
  for (auto mi : idx) {
    const auto& m = corpus[mi];
    const auto in = inputs_from_match(m, corpus, L);
    Rng rng(derive_seed(ranker.seed, mi));
    for (int t = 1; t <= kNumTurns; ++t) {
      const auto s = build_state(in, t, identity, L);
      detail::StateRecord rec;
      rec.match_id = m.match_id;
      rec.turn = t;
      rec.ranked = ranker.rank(legal_champions(s, corpus.vocab()), s.slot(t).history, &rng);
      rec.truth = m.at_turn(t).champion;
      recs.push_back(std::move(rec));
    }
  }
  return detail::reduce(ranker.name(), std::move(recs));
}

struct StrategyEvalOptions {
  SplitPart split = SplitPart::Test;
  double tau = 0.02;
  std::vector<std::size_t> ks{3, 10};
  std::vector<std::size_t> matches;
};

// Offline strategy comparison: the recommender proposes its top-k, the
// evaluator scores each proposal, and Win@k is the best evaluator score among
// the top-k (acting player's view). HR/NG use the strategy's ranking.
inline std::vector<MetricReport> strategy_eval(const Checkpoint& rec, const Checkpoint& evaluator, const Corpus& corpus,
                                               const std::vector<Strategy>& strategies,
                                               const StrategyEvalOptions& opt = {},
                                               std::ostream* warnings = nullptr) {
  if (checkpoint_hash(rec) == checkpoint_hash(evaluator) && warnings)
    *warnings << "warning: recommender and evaluator checkpoints are identical; Win@k will share their errors\n";
  auto idx = opt.matches.empty() ? detail::match_indices(corpus, opt.split) : opt.matches;
  if (opt.split == SplitPart::Test || opt.split == SplitPart::Val) assert_no_leakage(corpus, idx);
  std::size_t k_small = 3, k_large = 10;
  if (opt.ks.size() >= 1) k_small = opt.ks[0];
  if (opt.ks.size() >= 2) k_large = opt.ks[1];
  const std::size_t L_rec = rec.config.model.history_len, L_eval = evaluator.config.model.history_len;

  std::vector<std::vector<detail::StateRecord>> recs(strategies.size());
  for (auto mi : idx) {
    const auto& m = corpus[mi];
    const auto in_rec = inputs_from_match(m, corpus, L_rec);
    const auto in_eval = inputs_from_match(m, corpus, L_eval);
    for (int t = 1; t <= kNumTurns; ++t) {
      const auto s_rec = build_state(in_rec, t, rec.normalizer, L_rec);
      const auto scores = score_state(rec.model, s_rec);
      std::vector<std::vector<int>> tops(strategies.size());
      std::vector<int> needed;
      for (std::size_t si = 0; si < strategies.size(); ++si) {
        const auto order = rank_candidates(scores.legal, scores.p, scores.v, strategies[si], opt.tau);
        for (auto j : order) tops[si].push_back(scores.legal[j]);
        for (std::size_t j = 0; j < std::min(k_large, order.size()); ++j) needed.push_back(scores.legal[order[j]]);
      }
      std::sort(needed.begin(), needed.end());
      needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
      const auto s_eval = build_state(in_eval, t, evaluator.normalizer, L_eval);
      const auto ev = probe_outcomes(evaluator.model, s_eval, needed);
      auto eval_of = [&](int c) {
        return ev[static_cast<std::size_t>(std::lower_bound(needed.begin(), needed.end(), c) - needed.begin())];
      };
      for (std::size_t si = 0; si < strategies.size(); ++si) {
        detail::StateRecord r;
        r.match_id = m.match_id;
        r.turn = t;
        r.truth = m.at_turn(t).champion;
        r.has_win = true;
        double best = 0;
        for (std::size_t j = 0; j < std::min(k_large, tops[si].size()); ++j) {
          best = std::max(best, eval_of(tops[si][j]));
          if (j + 1 == std::min(k_small, tops[si].size())) r.win3 = best;
        }
        r.win10 = best;
        r.ranked = std::move(tops[si]);
        recs[si].push_back(std::move(r));
      }
    }
  }
  std::vector<MetricReport> out;
  for (std::size_t si = 0; si < strategies.size(); ++si)
    out.push_back(detail::reduce(std::string("draftrec_") + strategy_name(strategies[si]), std::move(recs[si])));
  return out;
}

}  // namespace draftrec
