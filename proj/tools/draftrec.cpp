#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "draftrec/draftrec.hpp"
#include "draftrec/http.hpp"

using namespace draftrec;

namespace {

SplitPart split_arg(const std::string& s) { return parse_split(s); }

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto k = std::stoul(tok);
    if (k == 0) throw Error("k values must be positive");
    out.push_back(k);
  }
  if (out.empty() || out.size() > 2) throw Error("--k takes one or two comma-separated values");
  return out;
}

void emit_reports(const std::vector<MetricReport>& reports, const std::string& csv_path) {
  write_report_table(std::cout, reports);
  if (csv_path.empty()) return;
  std::ofstream f(csv_path);
  if (!f) throw Error("cannot write " + csv_path);
  write_report_csv(f, reports);
}

// Cells shade from white (0) to dark blue (largest value).
void write_heatmap_svg(const std::string& path, const std::array<std::array<double, kNumTurns>, kNumTurns>& m,
                       const std::vector<std::string>& labels) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  const int cell = 48, left = 120, top = 120;
  double hi = 0;
  for (const auto& r : m)
    for (double x : r) hi = std::max(hi, x);
  const int size = left + cell * kNumTurns + 20;
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << top + cell * kNumTurns + 20
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i < kNumTurns; ++i) {
    f << "<text x=\"" << left - 6 << "\" y=\"" << top + i * cell + cell / 2 + 4 << "\" text-anchor=\"end\">"
      << labels[static_cast<std::size_t>(i)] << "</text>\n";
    const int x = left + i * cell + cell / 2, y = top - 6;
    f << "<text x=\"" << x << "\" y=\"" << y << "\" transform=\"rotate(-60 " << x << ' ' << y << ")\">"
      << labels[static_cast<std::size_t>(i)] << "</text>\n";
  }
  for (int i = 0; i < kNumTurns; ++i)
    for (int j = 0; j < kNumTurns; ++j) {
      const double v = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      const double u = hi > 0 ? v / hi : 0;
      const int r = static_cast<int>(255 - 220 * u), g = static_cast<int>(255 - 180 * u), b = static_cast<int>(255 - 80 * u);
      char val[16];
      std::snprintf(val, sizeof val, "%.3f", v);
      f << "<rect x=\"" << left + j * cell << "\" y=\"" << top + i * cell << "\" width=\"" << cell << "\" height=\""
        << cell << "\" fill=\"rgb(" << r << ',' << g << ',' << b << ")\" stroke=\"#fff\"/>\n";
      f << "<text x=\"" << left + j * cell + cell / 2 << "\" y=\"" << top + i * cell + cell / 2 + 4
        << "\" text-anchor=\"middle\" fill=\"" << (u > 0.6 ? "#fff" : "#222") << "\">" << val << "</text>\n";
    }
  f << "</svg>\n";
}

httplib::Server* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DraftRec: personalized champion recommendation for MOBA drafts"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic corpus and its vocab");
  SyntheticConfig sc;
  std::string gen_out, gen_vocab;
  bool gen_shuffle = false;
  gen->add_option("--out", gen_out, "corpus JSONL")->required();
  gen->add_option("--vocab-out", gen_vocab, "vocab JSON")->required();
  gen->add_option("--seed", sc.seed);
  gen->add_option("--matches", sc.num_matches);
  gen->add_option("--players", sc.num_players);
  gen->add_option("--champions", sc.num_champions);
  gen->add_option("--sharpness", sc.preference_sharpness, "preference sharpness in [0,1]");
  gen->add_option("--synergy-scale", sc.synergy_scale);
  gen->add_option("--counter-scale", sc.counter_scale);
  gen->add_option("--skill-sd", sc.skill_sd);
  gen->add_option("--proficiency-bonus", sc.proficiency_bonus);
  gen->add_flag("--shuffle-outcomes", gen_shuffle, "replace outcomes with balanced random labels");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_data, tr_vocab, tr_out, tr_log, tr_split = "train";
  std::vector<std::string> tr_set;
  bool tr_no_val = false;
  tr->add_option("--config", tr_config, "key=value config file")->required();
  tr->add_option("--data", tr_data, "corpus JSONL")->required();
  tr->add_option("--vocab", tr_vocab, "vocab JSON")->required();
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--log", tr_log, "epoch log CSV (default: stdout)");
  tr->add_option("--set", tr_set, "override a config key, key=value");
  tr->add_option("--train-split", tr_split, "train|all");
  tr->add_flag("--no-val", tr_no_val, "skip validation; keep the last epoch");

  // eval
  auto* ev = app.add_subcommand("eval", "per-turn metrics on a split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_baseline, ev_csv;
  std::size_t ev_L = 0;
  bool ev_post = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint (also supplies the vocab)");
  ev->add_option("--vocab", tr_vocab, "vocab JSON, needed for baselines without --ckpt");
  ev->add_option("--data", ev_data, "corpus JSONL")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_flag("--post-draft", ev_post, "outcome metrics on completed drafts only");
  ev->add_option("--baseline", ev_baseline, "pop|spop:n|random");
  ev->add_option("--history-len", ev_L, "baseline history window (default: checkpoint L or 50)");
  ev->add_option("--csv", ev_csv, "also write the report as CSV");

  // strategy-eval
  auto* se = app.add_subcommand("strategy-eval", "compare recommendation strategies with an evaluator model");
  std::string se_rec, se_oracle, se_data, se_split = "test", se_ks = "3,10", se_csv;
  std::vector<std::string> se_strategies{"p+v"};
  double se_tau = 0.02;
  se->add_option("--rec", se_rec, "recommender checkpoint")->required();
  se->add_option("--oracle", se_oracle, "evaluator checkpoint (trained with another seed)")->required();
  se->add_option("--data", se_data, "corpus JSONL")->required();
  se->add_option("--split", se_split);
  se->add_option("--strategy", se_strategies, "p|v|p+v, repeatable")->delimiter(',');
  se->add_option("--tau", se_tau);
  se->add_option("--k", se_ks, "two cut-offs, e.g. 3,10");
  se->add_option("--csv", se_csv);

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "mean final-layer match attention by team and role");
  std::string hm_ckpt, hm_data, hm_split = "test", hm_csv, hm_svg;
  hm->add_option("--ckpt", hm_ckpt)->required();
  hm->add_option("--data", hm_data)->required();
  hm->add_option("--split", hm_split);
  hm->add_option("--csv", hm_csv)->required();
  hm->add_option("--svg", hm_svg, "rendered plot");

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP draft assistant");
  std::string sv_ckpt, sv_vocab, sv_data, sv_host = "127.0.0.1", sv_journal;
  int sv_port = 8080;
  sv->add_option("--ckpt", sv_ckpt)->required();
  sv->add_option("--vocab", sv_vocab, "must match the checkpoint vocab");
  sv->add_option("--data", sv_data, "corpus for player_id bindings");
  sv->add_option("--host", sv_host);
  sv->add_option("--port", sv_port);
  sv->add_option("--journal", sv_journal, "append-only session journal; replayed on start");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto world = generate_synthetic(sc);
      Corpus corpus = gen_shuffle ? shuffle_outcomes(world.corpus, sc.seed + 1) : std::move(world.corpus);
      save_vocab(gen_vocab, corpus.vocab());
      save_corpus(gen_out, corpus);
      std::cerr << "wrote " << corpus.size() << " matches to " << gen_out << "\n";
    } else if (*tr) {
      Config cfg = load_config(tr_config);
      for (const auto& kv : tr_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.validate();
      const Corpus corpus = load_corpus(tr_data, load_vocab(tr_vocab));
      TrainOptions opts;
      opts.train_part = split_arg(tr_split);
      if (tr_no_val) opts.val_part.reset();
      std::ofstream log_file;
      std::ostream* log = &std::cout;
      if (!tr_log.empty()) {
        log_file.open(tr_log);
        if (!log_file) throw Error("cannot write " + tr_log);
        log = &log_file;
      }
      write_log_header(*log);
      opts.on_epoch = [&](const EpochLog& e) {
        write_log_row(*log, e);
        log->flush();
      };
      auto result = train(cfg, corpus, opts);
      save_checkpoint(tr_out, result.best);
      std::cerr << "saved epoch " << result.best_epoch << " to " << tr_out << "\n";
    } else if (*ev) {
      EvalOptions opt;
      opt.split = split_arg(ev_split);
      opt.post_draft = ev_post;
      std::vector<MetricReport> reports;
      if (!ev_ckpt.empty()) {
        const auto ck = load_checkpoint(ev_ckpt);
        const Corpus corpus = load_corpus(ev_data, ck.vocab);
        if (ev_baseline.empty()) reports.push_back(evaluate(ck.model, corpus, ck.normalizer, opt));
        else reports.push_back(evaluate_baseline(BaselineRanker::parse(ev_baseline), corpus,
                                                 ev_L ? ev_L : ck.config.model.history_len, opt));
      } else {
        if (ev_baseline.empty() || tr_vocab.empty()) throw Error("eval: give --ckpt, or --baseline with --vocab");
        const Corpus corpus = load_corpus(ev_data, load_vocab(tr_vocab));
        reports.push_back(evaluate_baseline(BaselineRanker::parse(ev_baseline), corpus, ev_L ? ev_L : 50, opt));
      }
      emit_reports(reports, ev_csv);
    } else if (*se) {
      const auto rec = load_checkpoint(se_rec);
      const auto oracle = load_checkpoint(se_oracle);
      if (rec.vocab.to_json() != oracle.vocab.to_json()) throw Error("strategy-eval: checkpoints use different vocabs");
      const Corpus corpus = load_corpus(se_data, rec.vocab);
      StrategyEvalOptions opt;
      opt.split = split_arg(se_split);
      opt.tau = se_tau;
      opt.ks = parse_ks(se_ks);
      std::vector<Strategy> strategies;
      for (const auto& s : se_strategies) strategies.push_back(parse_strategy(s));
      emit_reports(strategy_eval(rec, oracle, corpus, strategies, opt, &std::cerr), se_csv);
    } else if (*hm) {
      const auto ck = load_checkpoint(hm_ckpt);
      const Corpus corpus = load_corpus(hm_data, ck.vocab);
      const auto result = heatmap_over_split(ck, corpus, split_arg(hm_split));
      std::ofstream f(hm_csv);
      if (!f) throw Error("cannot write " + hm_csv);
      write_heatmap_csv(f, result);
      if (!hm_svg.empty()) write_heatmap_svg(hm_svg, result.matrix, result.labels);
    } else if (*sv) {
      auto ck = load_checkpoint(sv_ckpt);
      if (!sv_vocab.empty() && load_vocab(sv_vocab).to_json() != ck.vocab.to_json())
        throw Error("serve: --vocab does not match the checkpoint vocab");
      DraftService::Options opt;
      opt.journal = sv_journal;
      DraftService svc(opt);
      if (!sv_data.empty()) svc.set_corpus(std::make_shared<const Corpus>(load_corpus(sv_data, ck.vocab)));
      svc.add_checkpoint("default", std::move(ck));
      if (!sv_journal.empty()) {
        const auto n = svc.replay_journal(sv_journal);
        if (n) std::cerr << "replayed " << n << " journal records\n";
      }
      httplib::Server server;
      mount(server, svc);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << sv_host << ":" << sv_port << "\n";
      if (!server.listen(sv_host, sv_port)) throw Error("serve: cannot listen on port " + std::to_string(sv_port));
    }
  } catch (const DataError& e) {
    std::cerr << "error [" << e.rule() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
