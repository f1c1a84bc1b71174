#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "draftrec/checkpoint.hpp"
#include "draftrec/model.hpp"
#include "draftrec/optim.hpp"

namespace draftrec {

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_hr1 = std::numeric_limits<double>::quiet_NaN();
  double val_mae = std::numeric_limits<double>::quiet_NaN();
};

inline void write_log_header(std::ostream& os) { os << "epoch,train_loss,val_loss,val_HR@1,val_MAE\n"; }
inline void write_log_row(std::ostream& os, const EpochLog& e) {
  os.precision(9);
  os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_hr1 << ',' << e.val_mae << '\n';
}

struct TrainOptions {
  SplitPart train_part = SplitPart::Train;
  // Validation drives checkpoint selection; without it the last epoch wins.
  std::optional<SplitPart> val_part = SplitPart::Val;
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

struct SplitLoss {
  double loss = 0;  // lambda * L_p + (1 - lambda) * L_v, averaged over states
  double champion_nll = 0;
  double hr1 = 0;
  double mae = 0;
  std::size_t states = 0;
};

// Data loss and quick metrics of a model over a range of matches (eval mode).
inline SplitLoss evaluate_loss(const DraftRecModel<float>& model, const Corpus& corpus, const Normalizer& norm,
                               std::size_t begin, std::size_t end, const TrainConfig& tc,
                               std::size_t matches_per_batch = 32) {
  SplitLoss out;
  double sum_p = 0, sum_v = 0, hits = 0, abs_err = 0;
  for (std::size_t b = begin; b < end; b += matches_per_batch) {
    auto bb = model.builder();
    const std::size_t e = std::min(end, b + matches_per_batch);
    for (std::size_t i = b; i < e; ++i) bb.add_match(corpus[i], corpus, norm);
    const auto batch = bb.take();
    const auto r = model.forward(batch);
    TrainConfig no_decay = tc;
    no_decay.weight_decay = 0;
    const auto terms = compute_loss(r, batch, model.params(), no_decay);
    const auto n = static_cast<double>(batch.num_sequences());
    sum_p += terms.champion * n;
    sum_v += terms.outcome * n;
    const auto& logits = r.champion_logits.value();
    for (std::size_t q = 0; q < r.query_seq.size(); ++q) {
      std::size_t best = 0;
      float best_v = -std::numeric_limits<float>::infinity();
      for (std::size_t c = 0; c < logits.cols(); ++c) {
        const float v = logits(q, c) + r.champion_mask(q, c);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      hits += static_cast<int>(best) == batch.target_champion[r.query_seq[q]];
    }
    for (std::size_t s = 0; s < batch.num_sequences(); ++s)
      abs_err += std::abs(static_cast<double>(r.blue_win_prob(s)) - batch.target_blue[s]);
    out.states += batch.num_sequences();
  }
  if (out.states == 0) return out;
  const double n = static_cast<double>(out.states);
  out.champion_nll = sum_p / n;
  out.loss = tc.lambda * sum_p / n + (1 - tc.lambda) * sum_v / n;
  out.hr1 = hits / n;
  out.mae = abs_err / n;
  return out;
}

// Minibatches hold whole matches (all ten turn states share one pass over the
// ten player histories), so batch_size / 10 matches per step.
inline TrainResult train(const Config& cfg, const Corpus& corpus, const TrainOptions& opts = {}) {
  cfg.validate();
  const auto& tc = cfg.train;
  const auto [tb, te] = corpus.range(opts.train_part);
  if (te <= tb) throw DataError("empty train", "train: empty training split");
  const Normalizer norm = fit_normalizer(std::span(corpus.matches()).subspan(tb, te - tb), corpus.vocab().num_features());

  Rng root(tc.seed);
  DraftRecModel<float> model(cfg.model, corpus.vocab(), derive_seed(tc.seed, 0));
  auto params = model.params().learnable();
  auto adam = AdamState<float>::for_params(params);

  const std::size_t per_batch = std::max<std::size_t>(1, tc.batch_size / kNumTurns);
  const std::size_t n_train = te - tb;
  const std::size_t steps_per_epoch = (n_train + per_batch - 1) / per_batch;
  const LrSchedule sched{tc.initial_lr, tc.final_lr, steps_per_epoch * tc.epochs};

  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = tb + i;

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::uint64_t step = 0;
  auto snapshot = [&](std::size_t epoch, double val_loss) {
    Checkpoint c;
    c.config = cfg;
    c.vocab = corpus.vocab();
    c.normalizer = norm;
    c.seed = tc.seed;
    c.step = step;
    c.meta = {{"epoch", epoch}, {"val_loss", std::isfinite(val_loss) ? json(val_loss) : json(nullptr)}};
    c.model = model;
    c.adam = adam;
    return c;
  };

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    Rng shuffle_rng = root.split(1'000'000 + epoch);
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    std::size_t states = 0;
    for (std::size_t b = 0; b < n_train; b += per_batch) {
      auto bb = model.builder();
      const std::size_t e = std::min(n_train, b + per_batch);
      for (std::size_t i = b; i < e; ++i) bb.add_match(corpus[order[i]], corpus, norm);
      const auto batch = bb.take();
      Rng dropout_rng = root.split(step + 1);
      auto r = model.forward(batch, &dropout_rng, true);
      auto terms = compute_loss(r, batch, model.params(), tc);
      const double loss = static_cast<double>(terms.total.value()[0]);
      if (!std::isfinite(loss))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + " (first match " + corpus[order[b]].match_id + ")");
      ad::backward(terms.total);

      std::vector<Tensor<float>> grads;
      for (std::size_t i = 0; i < model.params().size(); ++i) {
        if (!model.params().entries[i].learnable) continue;
        const auto& g = r.params[i].grad();
        grads.push_back(g.size() == model.params()[i].size() ? g : Tensor<float>(model.params()[i].shape()));
      }
      clip_global_norm(grads, tc.grad_clip);
      adam_step(params, grads, adam, cosine_lr(step, sched));
      ++step;
      loss_sum += loss * static_cast<double>(batch.num_sequences());
      states += batch.num_sequences();
      if (opts.on_step) opts.on_step(step, loss);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(states);
    bool improved = !opts.val_part.has_value();
    if (opts.val_part) {
      const auto [vb, ve] = corpus.range(*opts.val_part);
      const auto v = evaluate_loss(model, corpus, norm, vb, ve, tc);
      log.val_loss = v.loss;
      log.val_hr1 = v.hr1;
      log.val_mae = v.mae;
      improved = v.loss < best_val;
      if (improved) best_val = v.loss;
    }
    if (improved) {
      result.best = snapshot(epoch, log.val_loss);
      result.best_epoch = epoch;
    }
    result.log.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
  }
  if (tc.epochs == 0) result.best = snapshot(0, std::numeric_limits<double>::quiet_NaN());
  return result;
}

}  // namespace draftrec
