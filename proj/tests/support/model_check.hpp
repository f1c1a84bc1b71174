#pragma once

// Whole-model finite-difference check and small hand-built draft fixtures,
// shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "draftrec/draftrec.hpp"
#include "support/gradcheck.hpp"

namespace draftrec::testing {

inline Vocab tiny_vocab(std::size_t champions, std::size_t roles, std::size_t features) {
  std::vector<std::string> c, r, f;
  for (std::size_t i = 0; i < champions; ++i) c.push_back("c" + std::to_string(i));
  for (std::size_t i = 0; i < roles; ++i) r.push_back("r" + std::to_string(i));
  for (std::size_t i = 0; i < features; ++i) f.push_back("f" + std::to_string(i));
  return Vocab(c, r, f);
}

inline Normalizer identity_normalizer(std::size_t F) {
  return {std::vector<double>(F, 0.0), std::vector<double>(F, 1.0), 1e30};
}

// Random but legal draft inputs over `vocab`; bans and picks distinct.
inline DraftInputs random_inputs(const Vocab& vocab, Rng& rng, std::size_t bans, std::size_t max_history) {
  DraftInputs in;
  std::vector<int> ids;
  for (std::size_t c = kFirstId; c < vocab.champion_rows(); ++c) ids.push_back(static_cast<int>(c));
  rng.shuffle(ids);
  in.bans.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(bans));
  for (std::size_t k = 0; k < kNumTurns; ++k) {
    in.picks[k] = ids[bans + k];
    in.roles[k] = vocab.num_roles() ? static_cast<int>(kFirstId + rng.below(vocab.num_roles())) : kUnk;
    const std::size_t n = rng.below(max_history + 1);
    for (std::size_t i = 0; i < n; ++i) {
      HistoryEntry e;
      e.champion = static_cast<int>(kFirstId + rng.below(vocab.num_champions()));
      e.role = vocab.num_roles() ? static_cast<int>(kFirstId + rng.below(vocab.num_roles())) : kUnk;
      for (std::size_t f = 0; f < vocab.num_features(); ++f) e.features.push_back(static_cast<float>(rng.normal(0, 1)));
      in.histories[k].push_back(std::move(e));
    }
  }
  return in;
}

struct ParamGradError {
  std::string name;
  double rel_error = 0;
  std::size_t size = 0;
};

// Central differences over every learnable value of a double-precision model
// on a mixed batch (query states, a what-if state, both loss terms, L2, dropout
// with a replayed mask).
inline std::vector<ParamGradError> full_model_gradient_check(const ModelConfig& mc, std::size_t champions,
                                                             std::uint64_t seed = 5, double eps = 1e-4) {
  const Vocab vocab = tiny_vocab(champions, 3, 2);
  DraftRecModel<double> model(mc, vocab, seed);
  Rng rng(seed + 1);
  // Init-scale weights leave the attention gradients near the difference noise.
  for (auto& e : model.params().entries)
    if (e.learnable)
      for (auto& v : e.value.values()) v = rng.normal(0, 0.5);
  const auto norm = identity_normalizer(vocab.num_features());
  auto bb = model.builder();
  for (int i = 0; i < 3; ++i) {
    const auto in = random_inputs(vocab, rng, 0, mc.history_len + 1);
    const int t = static_cast<int>(1 + rng.below(kNumTurns));
    const auto s = build_state(in, t, norm, mc.history_len);
    const auto seq = bb.add_state(s);
    bb.set_targets(seq, in.picks[static_cast<std::size_t>(t - 1)], rng.bernoulli(0.5));
    if (i == 0) {
      const auto w = apply_whatif(s, in.picks[static_cast<std::size_t>(t - 1)], vocab.champion_rows());
      bb.set_targets(bb.add_state(w), kPad, rng.bernoulli(0.5));
    }
  }
  const ModelBatch batch = bb.take();
  TrainConfig tc;
  tc.lambda = 0.4;
  tc.weight_decay = 1e-3;

  auto loss_at = [&](bool backward) {
    Rng drop(99);
    auto r = model.forward(batch, &drop, true);
    auto terms = compute_loss(r, batch, model.params(), tc);
    if (backward) ad::backward(terms.total);
    return std::make_pair(r.params, terms.total.value()[0]);
  };
  const auto vars = loss_at(true).first;
  std::vector<ParamGradError> out;
  auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store.entries[i].learnable) continue;
    Tensor<double> analytic = vars[i].grad().size() ? vars[i].grad() : Tensor<double>(store[i].shape());
    Tensor<double> numeric(store[i].shape());
    for (std::size_t j = 0; j < store[i].size(); ++j) {
      const double orig = store[i][j];
      store[i][j] = orig + eps;
      const double up = loss_at(false).second;
      store[i][j] = orig - eps;
      const double down = loss_at(false).second;
      store[i][j] = orig;
      numeric[j] = (up - down) / (2 * eps);
    }
    // Key biases have an exactly zero gradient (softmax shift), so the norm is floored.
    double diff = 0, na = 0, nn = 0;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      diff += (analytic[j] - numeric[j]) * (analytic[j] - numeric[j]);
      na += analytic[j] * analytic[j];
      nn += numeric[j] * numeric[j];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
    out.push_back({store.entries[i].name, std::sqrt(diff) / denom, store[i].size()});
  }
  return out;
}

}  // namespace draftrec::testing
