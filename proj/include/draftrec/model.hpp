#pragma once

#include <array>
#include <string>
#include <vector>

#include "draftrec/config.hpp"
#include "draftrec/draft_state.hpp"
#include "draftrec/transformer.hpp"

namespace draftrec {

// Flattened network input. Histories are encoded once and referenced by row
// from the match-level tokens; row 0 is always the unknown player.
struct ModelBatch {
  std::size_t history_len = 0;
  std::size_t num_features = 0;
  std::size_t champion_rows = 0;

  std::size_t num_histories = 0;
  std::vector<int> hist_champ, hist_role;  // num_histories * L
  std::vector<float> hist_feat;            // num_histories * L * F

  std::vector<int> champ, role, team, turn;  // S * 10
  std::vector<std::size_t> player_row;       // S * 10
  std::vector<int> query_turn;               // S; 0 when the champion head is not needed
  std::vector<char> legal;                   // S * champion_rows
  std::vector<int> target_champion;          // S; kPad when absent
  std::vector<float> target_blue;            // S

  std::size_t num_sequences() const { return query_turn.size(); }
};

class BatchBuilder {
 public:
  BatchBuilder(std::size_t L, std::size_t num_features, std::size_t champion_rows) {
    b_.history_len = L;
    b_.num_features = num_features;
    b_.champion_rows = champion_rows;
    // unknown player: every position [unk], zero features
    b_.hist_champ.assign(L, kUnk);
    b_.hist_role.assign(L, kUnk);
    b_.hist_feat.assign(L * num_features, 0.f);
    b_.num_histories = 1;
  }

  static constexpr std::size_t kUnknownPlayer = 0;

  // Entries are already normalized; the most recent one ends up last.
  std::size_t add_history(const std::vector<HistoryEntry>& h) {
    const std::size_t L = b_.history_len, F = b_.num_features;
    const std::size_t n = std::min(h.size(), L), pad = L - n;
    for (std::size_t i = 0; i < pad; ++i) {
      b_.hist_champ.push_back(kPad);
      b_.hist_role.push_back(kPad);
      b_.hist_feat.insert(b_.hist_feat.end(), F, 0.f);
    }
    for (std::size_t i = h.size() - n; i < h.size(); ++i) {
      if (h[i].features.size() != F)
        throw ShapeError("history entry has " + std::to_string(h[i].features.size()) + " features, expected " +
                         std::to_string(F));
      b_.hist_champ.push_back(h[i].champion);
      b_.hist_role.push_back(h[i].role);
      b_.hist_feat.insert(b_.hist_feat.end(), h[i].features.begin(), h[i].features.end());
    }
    return b_.num_histories++;
  }

  // History rows for every visible slot of the state; hidden slots map to the unknown player.
  std::array<std::size_t, kNumTurns> add_histories(const DraftState& s) {
    std::array<std::size_t, kNumTurns> rows{};
    for (std::size_t k = 0; k < kNumTurns; ++k)
      rows[k] = s.slots[k].history_visible ? add_history(s.slots[k].history) : kUnknownPlayer;
    return rows;
  }

  std::size_t add_state(const DraftState& s, const std::array<std::size_t, kNumTurns>& rows) {
    for (std::size_t k = 0; k < kNumTurns; ++k) {
      const auto& v = s.slots[k];
      b_.champ.push_back(v.champion);
      b_.role.push_back(v.role);
      b_.team.push_back(static_cast<int>(v.team));
      b_.turn.push_back(static_cast<int>(k));
      b_.player_row.push_back(v.history_visible ? rows[k] : kUnknownPlayer);
    }
    if (s.whatif) {
      b_.query_turn.push_back(0);
      b_.legal.insert(b_.legal.end(), b_.champion_rows, 0);
    } else {
      b_.query_turn.push_back(s.turn);
      const auto legal = legal_mask(s, b_.champion_rows);
      for (bool x : legal) b_.legal.push_back(x ? 1 : 0);
    }
    b_.target_champion.push_back(kPad);
    b_.target_blue.push_back(0.f);
    return b_.query_turn.size() - 1;
  }

  std::size_t add_state(const DraftState& s) { return add_state(s, add_histories(s)); }

  void set_targets(std::size_t seq, int champion, bool blue_win) {
    b_.target_champion[seq] = champion;
    b_.target_blue[seq] = blue_win ? 1.f : 0.f;
  }

  // All ten turn states of a finished match with their training targets; the
  // ten histories are encoded once and shared by the states.
  void add_match(const MatchRecord& m, const Corpus& corpus, const Normalizer& norm) {
    const auto in = inputs_from_match(m, corpus, b_.history_len);
    std::array<std::size_t, kNumTurns> rows{};
    for (std::size_t k = 0; k < kNumTurns; ++k) {
      std::vector<HistoryEntry> h = in.histories[k];
      for (auto& e : h) norm.apply_inplace(e.features);
      rows[k] = add_history(h);
    }
    for (int t = 1; t <= kNumTurns; ++t) {
      const auto s = build_state(in, t, norm, b_.history_len);
      const auto seq = add_state(s, rows);
      set_targets(seq, m.at_turn(t).champion, m.blue_win());
    }
  }

  const ModelBatch& batch() const { return b_; }
  ModelBatch take() { return std::move(b_); }

 private:
  ModelBatch b_;
};

template <class T>
struct ForwardResult {
  ParamVars<T> params;
  std::vector<std::size_t> query_seq;  // sequence index of each champion-head row
  ad::Var<T> champion_logits;          // Q x champion_rows, pre-mask
  Tensor<T> champion_mask;             // Q x champion_rows additive
  ad::Var<T> outcome_logit;            // S x 1, Blue perspective
  ad::Var<T> slot_reps;                // S*10 x d
  Tensor<T> attention;                 // last match layer, S*heads*10 x 10 (when kept)

  // p-hat rows (legal-masked softmax).
  Tensor<T> champion_probs() const {
    if (query_seq.empty()) return {};
    return ad::softmax(ad::Var<T>::constant(champion_logits.value()), &champion_mask).value();
  }
  T blue_win_prob(std::size_t seq) const { return ad::sigmoid_value(outcome_logit.value()[seq]); }
};

// Unit-variance lookup tables. At 0.02 the champion rows are drowned by the
// fixed sinusoidal tables (norm ~sqrt(d/2)) and training stalls near uniform.
inline constexpr double kEmbedInitSd = 1.0;

template <class T>
class DraftRecModel {
 public:
  DraftRecModel() = default;
  DraftRecModel(const ModelConfig& cfg, const Vocab& vocab, std::uint64_t seed)
      : cfg_(cfg),
        champion_rows_(vocab.champion_rows()),
        role_rows_(vocab.role_rows()),
        num_features_(vocab.num_features()) {
    if (cfg.d % 2 != 0) throw Error("model: d must be even for the sinusoidal tables");
    Rng rng(seed);
    const std::size_t d = cfg.d;
    auto embed = [&](std::size_t rows, bool zero_pad) {
      auto t = init::normal<T>(rows, d, rng, kEmbedInitSd);
      if (zero_pad)
        for (std::size_t j = 0; j < d; ++j) t(kPad, j) = T(0);
      return t;
    };
    e_c_ = params_.add("E_C", embed(champion_rows_, true));
    e_r_ = params_.add("E_R", embed(role_rows_, true));
    if (num_features_ > 0) e_ftr_ = params_.add("E_FTR", init::normal<T>(num_features_, d, rng, 0.02));
    e_pos_ = params_.add("E_pos", init::sinusoidal<T>(cfg.history_len, d), false);
    const BlockShape bs{d, cfg.heads, cfg.head_dim, cfg.dropout};
    for (std::size_t i = 0; i < cfg.layers; ++i)
      player_blocks_.push_back(EncoderBlock<T>::create(params_, "player.block" + std::to_string(i), bs, rng));
    e_team_ = params_.add("E_Team", init::normal<T>(2, d, rng, 0.02));
    e_turn_ = params_.add("E_Turn", init::sinusoidal<T>(kNumTurns, d), false);
    for (std::size_t i = 0; i < cfg.layers; ++i)
      match_blocks_.push_back(EncoderBlock<T>::create(params_, "match.block" + std::to_string(i), bs, rng));
    w_p_ = params_.add("W_P", init::xavier<T>(d, d, rng));
    b_p_ = params_.add("b_P", Tensor<T>(Shape{d}));
    b_c_ = params_.add("b_C", Tensor<T>(Shape{champion_rows_}));
    w_o_ = params_.add("W_O", init::xavier<T>(d, d, rng));
    b_o_ = params_.add("b_O", Tensor<T>(Shape{d}));
    w_v_ = params_.add("W_V", init::xavier<T>(d, 1, rng));
    b_v_ = params_.add("b_V", Tensor<T>(Shape{1}));
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t champion_rows() const { return champion_rows_; }
  std::size_t num_features() const { return num_features_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  BatchBuilder builder() const { return BatchBuilder(cfg_.history_len, num_features_, champion_rows_); }

  // Player representations for every history in the batch: num_histories x d.
  ad::Var<T> encode_players(const ParamVars<T>& p, const ModelBatch& b, Rng* rng) const {
    using namespace ad;
    const std::size_t L = cfg_.history_len, P = b.num_histories, F = num_features_;
    check_batch(b);
    auto x = add(embedding(p[e_c_], b.hist_champ), embedding(p[e_r_], b.hist_role));
    if (F > 0) {
      Tensor<T> feats = Tensor<T>::matrix(P * L, F);
      for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = static_cast<T>(b.hist_feat[i]);
      x = add(x, matmul(Var<T>::constant(std::move(feats)), p[e_ftr_]));
    }
    std::vector<std::size_t> pos(P * L);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % L;
    x = add(x, select_rows(p[e_pos_], pos));
    Tensor<T> mask = Tensor<T>::matrix(P, L);
    for (std::size_t i = 0; i < P * L; ++i)
      if (b.hist_champ[i] == kPad) mask[i] = static_cast<T>(kMaskedLogit);
    for (const auto& blk : player_blocks_) x = blk.forward(p, x, L, &mask, rng);
    std::vector<std::size_t> last(P);
    for (std::size_t i = 0; i < P; ++i) last[i] = i * L + L - 1;
    return select_rows(x, last);
  }

  ForwardResult<T> forward(const ModelBatch& b, Rng* rng = nullptr, bool train = false,
                           bool keep_attention = false) const {
    using namespace ad;
    ForwardResult<T> r;
    r.params = ParamVars<T>::bind(params_, train);
    const auto& p = r.params;
    const std::size_t S = b.num_sequences();
    if (S == 0) throw Error("model: empty batch");

    auto reps = encode_players(p, b, rng);
    auto x = add(add(embedding(p[e_c_], b.champ), embedding(p[e_r_], b.role)), embedding(p[e_team_], b.team, -1));
    std::vector<std::size_t> turn_rows(b.turn.begin(), b.turn.end());
    x = add(add(x, select_rows(p[e_turn_], turn_rows)), select_rows(reps, b.player_row));
    for (std::size_t i = 0; i < match_blocks_.size(); ++i) {
      const bool last = i + 1 == match_blocks_.size();
      x = match_blocks_[i].forward(p, x, kNumTurns, nullptr, rng, last && keep_attention ? &r.attention : nullptr);
    }
    r.slot_reps = x;

    std::vector<std::size_t> qrows;
    for (std::size_t s = 0; s < S; ++s)
      if (b.query_turn[s] > 0) {
        r.query_seq.push_back(s);
        qrows.push_back(s * kNumTurns + static_cast<std::size_t>(b.query_turn[s] - 1));
      }
    if (!qrows.empty()) {
      auto h = gelu(add_bias(matmul(select_rows(x, qrows), p[w_p_]), p[b_p_]));
      r.champion_logits = add_bias(matmul_nt(h, p[e_c_]), p[b_c_]);
      r.champion_mask = Tensor<T>::matrix(qrows.size(), champion_rows_);
      for (std::size_t q = 0; q < qrows.size(); ++q) {
        const char* legal = b.legal.data() + r.query_seq[q] * champion_rows_;
        bool any = false;
        for (std::size_t c = 0; c < champion_rows_; ++c) {
          if (!legal[c]) r.champion_mask(q, c) = static_cast<T>(kMaskedLogit);
          any = any || legal[c];
        }
        if (!any) throw LegalityError("empty legality", "champion head: no legal champion for sequence " + std::to_string(r.query_seq[q]));
      }
    }

    std::vector<std::vector<std::size_t>> blue(S), purple(S);
    for (std::size_t s = 0; s < S; ++s) {
      for (int t : kBlueTurns) blue[s].push_back(s * kNumTurns + static_cast<std::size_t>(t - 1));
      for (int t : kPurpleTurns) purple[s].push_back(s * kNumTurns + static_cast<std::size_t>(t - 1));
    }
    auto diff = sub(pool_rows(x, blue), pool_rows(x, purple));
    r.outcome_logit = add_bias(matmul(add_bias(matmul(diff, p[w_o_]), p[b_o_]), p[w_v_]), p[b_v_]);
    return r;
  }

  // Parameter indices, for tests and tooling.
  std::size_t e_c() const { return e_c_; }
  std::size_t e_pos() const { return e_pos_; }
  std::size_t e_turn() const { return e_turn_; }
  std::size_t e_team() const { return e_team_; }
  std::size_t b_c() const { return b_c_; }
  std::size_t b_p() const { return b_p_; }
  std::size_t w_p() const { return w_p_; }
  std::size_t b_o() const { return b_o_; }
  std::size_t b_v() const { return b_v_; }
  const std::vector<EncoderBlock<T>>& match_blocks() const { return match_blocks_; }

 private:
  void check_batch(const ModelBatch& b) const {
    const std::size_t L = cfg_.history_len;
    if (b.history_len != L || b.num_features != num_features_ || b.champion_rows != champion_rows_)
      throw ShapeError("model: batch built for L=" + std::to_string(b.history_len) + ", F=" +
                       std::to_string(b.num_features) + ", |C|+3=" + std::to_string(b.champion_rows) +
                       " but model has L=" + std::to_string(L) + ", F=" + std::to_string(num_features_) +
                       ", |C|+3=" + std::to_string(champion_rows_));
  }

  ModelConfig cfg_;
  std::size_t champion_rows_ = 0, role_rows_ = 0, num_features_ = 0;
  ParamStore<T> params_;
  std::size_t e_c_ = 0, e_r_ = 0, e_ftr_ = 0, e_pos_ = 0, e_team_ = 0, e_turn_ = 0;
  std::size_t w_p_ = 0, b_p_ = 0, b_c_ = 0, w_o_ = 0, b_o_ = 0, w_v_ = 0, b_v_ = 0;
  std::vector<EncoderBlock<T>> player_blocks_, match_blocks_;
};

template <class T>
struct LossTerms {
  ad::Var<T> total;
  double champion = 0;  // mean over query rows
  double outcome = 0;   // mean over sequences
  double l2 = 0;        // sum of squares of learnable parameters
};

// lambda * L_p + (1 - lambda) * L_v + c * sum(theta^2)
template <class T>
LossTerms<T> compute_loss(const ForwardResult<T>& r, const ModelBatch& b, const ParamStore<T>& store,
                          const TrainConfig& tc) {
  using namespace ad;
  LossTerms<T> out;
  const T lambda = static_cast<T>(tc.lambda);
  Var<T> total;
  auto accumulate = [&](const Var<T>& term) { total = total.defined() ? add(total, term) : term; };

  if (!r.query_seq.empty()) {
    std::vector<int> targets;
    for (std::size_t s : r.query_seq) targets.push_back(b.target_champion[s]);
    Var<T> lp = tc.champion_loss == ChampionLoss::Categorical
                    ? mean(softmax_nll(r.champion_logits, targets, &r.champion_mask))
                    : mean(onehot_bce(softmax(r.champion_logits, &r.champion_mask), targets, &r.champion_mask));
    out.champion = static_cast<double>(lp.value()[0]);
    if (lambda > 0) accumulate(scale(lp, lambda));
  }
  std::vector<T> y(b.target_blue.begin(), b.target_blue.end());
  auto lv = mean(sigmoid_bce(r.outcome_logit, y));
  out.outcome = static_cast<double>(lv.value()[0]);
  if (lambda < 1) accumulate(scale(lv, T(1) - lambda));

  if (tc.weight_decay > 0) {
    Var<T> l2;
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (!store.entries[i].learnable) continue;
      auto sq = sum_squares(r.params[i]);
      l2 = l2.defined() ? add(l2, sq) : sq;
    }
    out.l2 = static_cast<double>(l2.value()[0]);
    accumulate(scale(l2, static_cast<T>(tc.weight_decay)));
  } else {
    double s = 0;
    for (const auto& e : store.entries)
      if (e.learnable)
        for (T v : e.value.values()) s += static_cast<double>(v) * static_cast<double>(v);
    out.l2 = s;
  }
  out.total = total;
  return out;
}

}  // namespace draftrec
