#pragma once

// Live draft sessions over JSON/HTTP (/v1). The request handling is plain
// functions over JSON so it can be driven without a socket; serve() binds it
// to cpp-httplib.

#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "draftrec/checkpoint.hpp"
#include "draftrec/recommender.hpp"

namespace draftrec {

struct ApiError : Error {
  int status;
  std::string code;
  std::string field;
  std::string rule;
  ApiError(int status, std::string code, const std::string& message, std::string field = {}, std::string rule = {})
      : Error(message), status(status), code(std::move(code)), field(std::move(field)), rule(std::move(rule)) {}
};

struct ApiResponse {
  int status = 200;
  json body;
};

inline json error_body(const ApiError& e) {
  json j = {{"code", e.code}, {"message", e.what()}};
  if (!e.field.empty()) j["field"] = e.field;
  if (!e.rule.empty()) j["rule"] = e.rule;
  return j;
}

struct SlotBinding {
  std::optional<std::string> player_id;  // informational once resolved
  bool anonymous = false;
  int role = kUnk;
  std::vector<HistoryEntry> history;  // raw features, oldest first
};

struct Session {
  std::string id;
  std::string checkpoint;
  std::vector<int> bans;  // as submitted
  std::array<SlotBinding, kNumTurns> slots;
  std::vector<int> picks;  // picks[i] is turn i + 1

  int cursor() const { return static_cast<int>(picks.size()) + 1; }
  bool complete() const { return picks.size() == kNumTurns; }

  DraftInputs inputs() const {
    DraftInputs in;
    in.bans = bans;
    for (std::size_t k = 0; k < kNumTurns; ++k) {
      in.picks[k] = k < picks.size() ? picks[k] : kUnk;
      in.roles[k] = slots[k].role;
      in.histories[k] = slots[k].history;
      in.withheld[k] = slots[k].anonymous;
    }
    return in;
  }
};

struct LoadedModel {
  std::string name;
  Checkpoint ckpt;
  std::string version;  // parameter hash, hex
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline double state_blue_prob(const DraftRecModel<float>& model, const DraftState& s) {
  auto bb = model.builder();
  bb.add_state(s);
  return static_cast<double>(model.forward(bb.take()).blue_win_prob(0));
}

class DraftService {
 public:
  struct Options {
    std::string journal;  // append-only JSONL; empty disables
    std::size_t max_k = 1000;
  };

  DraftService() = default;
  explicit DraftService(Options opt) : opt_(std::move(opt)) {}

  void add_checkpoint(const std::string& name, Checkpoint c) {
    auto m = std::make_shared<LoadedModel>();
    m->name = name;
    m->version = hex64(checkpoint_hash(c));
    m->ckpt = std::move(c);
    std::unique_lock lock(mu_);
    if (models_.empty()) default_model_ = name;
    models_[name] = std::move(m);
  }

  // Source of player histories for player_id bindings.
  void set_corpus(std::shared_ptr<const Corpus> corpus) { corpus_ = std::move(corpus); }

  // Rebuilds sessions from a journal written by an earlier run, then keeps
  // appending to it.
  std::size_t replay_journal(const std::string& path) {
    std::ifstream f(path);
    if (!f) return 0;
    std::string line;
    std::size_t n = 0, lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      json rec;
      try {
        rec = json::parse(line);
        const auto op = rec.at("op").get<std::string>();
        if (op == "create") {
          auto s = session_from_record(rec.at("session"));
          std::unique_lock lock(mu_);
          next_id_ = std::max(next_id_, id_number(s.id) + 1);
          const std::string sid = s.id;
          sessions_[sid] = std::make_shared<Entry>(std::move(s));
        } else if (op == "pick") {
          auto e = find(rec.at("id").get<std::string>());
          std::unique_lock lock(e->mu);
          apply_pick(e->s, rec.at("turn").get<int>(), rec.at("champion").get<int>());
        } else {
          throw Error("unknown op '" + op + "'");
        }
      } catch (const std::exception& ex) {
        throw Error("journal " + path + ":" + std::to_string(lineno) + ": " + ex.what());
      }
      ++n;
    }
    return n;
  }

  ApiResponse create_session(const json& body) {
    if (!body.is_object()) throw ApiError(400, "malformed", "request body must be a JSON object");
    auto model = resolve_model(body);
    const Vocab& vocab = model->ckpt.vocab;
    Session s;
    s.checkpoint = model->name;

    if (body.contains("bans")) {
      const auto& bans = body.at("bans");
      if (!bans.is_array()) throw ApiError(400, "malformed", "bans must be an array", "bans");
      for (std::size_t i = 0; i < bans.size(); ++i) {
        const std::string field = "bans[" + std::to_string(i) + "]";
        const int c = champion_ref(vocab, bans[i], field);
        if (std::find(s.bans.begin(), s.bans.end(), c) != s.bans.end())
          throw ApiError(400, "malformed", "champion banned twice", field);
        s.bans.push_back(c);
      }
    }
    if (!body.contains("slots")) throw ApiError(400, "malformed", "slots is required", "slots");
    const auto& slots = body.at("slots");
    if (!slots.is_array() || slots.size() != kNumTurns)
      throw ApiError(400, "malformed", "slots must be an array of exactly 10 bindings", "slots");
    for (std::size_t k = 0; k < kNumTurns; ++k) s.slots[k] = binding(vocab, slots[k], "slots[" + std::to_string(k) + "]", model->ckpt.config.model.history_len);

    auto e = std::make_shared<Entry>(std::move(s));
    {
      std::unique_lock lock(mu_);
      e->s.id = "s" + std::to_string(next_id_++);
      journal({{"op", "create"}, {"session", session_record(e->s)}});
      sessions_[e->s.id] = e;
    }
    std::shared_lock lock(e->mu);
    return {201, summary(e->s, *model)};
  }

  ApiResponse submit_pick(const std::string& id, const json& body) {
    auto e = find(id);
    if (!body.is_object()) throw ApiError(400, "malformed", "request body must be a JSON object");
    if (!body.contains("turn") || !body.at("turn").is_number_integer())
      throw ApiError(400, "malformed", "turn must be an integer", "turn");
    if (!body.contains("champion")) throw ApiError(400, "malformed", "champion is required", "champion");
    auto model = model_of(e->s.checkpoint);
    const int turn = body.at("turn").get<int>();

    std::unique_lock lock(e->mu);
    if (e->s.complete()) throw ApiError(409, "complete", "session " + id + " has finished its draft", "turn");
    if (turn != e->s.cursor())
      throw ApiError(409, "out_of_order", "expected turn " + std::to_string(e->s.cursor()) + ", got " +
                                              std::to_string(turn), "turn");
    const int c = champion_ref(model->ckpt.vocab, body.at("champion"), "champion", true);
    check_legal(e->s, c, model->ckpt.vocab);
    {
      std::lock_guard jl(journal_mu_);
      journal_locked({{"op", "pick"}, {"id", id}, {"turn", turn}, {"champion", c}});
    }
    apply_pick(e->s, turn, c);
    return {200, summary(e->s, *model)};
  }

  ApiResponse get_state(const std::string& id) {
    auto e = find(id);
    auto model = model_of(e->s.checkpoint);
    const Session snap = snapshot(*e);
    return {200, summary(snap, *model)};
  }

  struct RecQuery {
    std::size_t k = 3;
    Strategy strategy = Strategy::PPlusV;
    std::optional<double> tau;  // checkpoint config when absent
  };

  ApiResponse recommendations(const std::string& id, const RecQuery& q) {
    auto e = find(id);
    auto model = model_of(e->s.checkpoint);
    const Session snap = snapshot(*e);
    if (snap.complete()) throw ApiError(409, "complete", "session " + id + " has finished its draft");
    if (q.k == 0 || q.k > opt_.max_k) throw ApiError(400, "malformed", "k must be in 1.." + std::to_string(opt_.max_k), "k");
    const auto& ck = model->ckpt;
    const double tau = q.tau.value_or(ck.config.tau);
    const auto state = session_state(snap, ck);
    const auto scores = score_state(ck.model, state, nullptr, true);
    const auto recs = recommend_from_scores(scores, state, ck.model.champion_rows(), q.strategy, tau, q.k);

    json list = json::array();
    for (const auto& r : recs) {
      const auto& ex = r.explanation;
      list.push_back({{"champion", ck.vocab.champion_name(r.champion)},
                      {"champion_id", r.champion},
                      {"win_prob", r.win_prob},
                      {"select_prob", r.select_prob},
                      {"passed_threshold", r.passed_threshold},
                      {"synergy", ex.synergy_champion ? json(ck.vocab.champion_name(*ex.synergy_champion)) : json(nullptr)},
                      {"counter", ex.counter_champion ? json(ck.vocab.champion_name(*ex.counter_champion)) : json(nullptr)}});
    }
    return {200,
            {{"session_id", snap.id},
             {"turn", state.turn},
             {"acting_team", team_name(state.acting_team())},
             {"strategy", strategy_name(q.strategy)},
             {"tau", tau},
             {"k", q.k},
             {"model_version", model->version},
             {"current_win_prob", player_perspective(scores.current_blue, state.acting_team())},
             {"recommendations", std::move(list)}}};
  }

  ApiResponse meta() const {
    std::shared_lock lock(mu_);
    json models = json::array();
    json champions = json::array(), roles = json::array(), features = json::array();
    for (const auto& [name, m] : models_) {
      const auto& c = m->ckpt;
      models.push_back({{"name", name},
                        {"version", m->version},
                        {"config_hash", hex64(config_hash(c.config))},
                        {"step", c.step},
                        {"tau", c.config.tau}});
    }
    if (!default_model_.empty()) {
      const auto& v = models_.at(default_model_)->ckpt.vocab;
      for (std::size_t c = kFirstId; c < v.champion_rows(); ++c)
        champions.push_back({{"id", c}, {"name", v.champion_name(static_cast<int>(c))}});
      for (std::size_t r = kFirstId; r < v.role_rows(); ++r)
        roles.push_back({{"id", r}, {"name", v.role_name(static_cast<int>(r))}});
      for (const auto& f : v.features()) features.push_back(f);
    }
    return {200,
            {{"api", "v1"},
             {"champions", champions},
             {"roles", roles},
             {"features", features},
             {"checkpoints", models},
             {"default_checkpoint", default_model_},
             {"defaults", {{"k", 3}, {"strategy", "p+v"}}}}};
  }

  // DraftState the acting player sees at the session's current turn.
  DraftState current_state(const std::string& id) {
    auto e = find(id);
    const Session snap = snapshot(*e);
    if (snap.complete()) throw ApiError(409, "complete", "session " + id + " has finished its draft");
    return session_state(snap, model_of(snap.checkpoint)->ckpt);
  }

  Session session(const std::string& id) { return snapshot(*find(id)); }

  std::vector<std::string> session_ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, e] : sessions_) out.push_back(id);
    return out;
  }

 private:
  struct Entry {
    explicit Entry(Session s) : s(std::move(s)) {}
    mutable std::shared_mutex mu;
    Session s;
  };

  static std::size_t id_number(const std::string& id) {
    if (id.size() < 2 || id[0] != 's') throw Error("bad session id '" + id + "'");
    return static_cast<std::size_t>(std::stoull(id.substr(1)));
  }

  static Session snapshot(const Entry& e) {
    std::shared_lock lock(e.mu);
    return e.s;
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(404, "not_found", "no session '" + id + "'");
    return it->second;
  }

  std::shared_ptr<const LoadedModel> model_of(const std::string& name) const {
    std::shared_lock lock(mu_);
    auto it = models_.find(name);
    if (it == models_.end()) throw ApiError(404, "not_found", "unknown checkpoint '" + name + "'", "checkpoint");
    return it->second;
  }

  std::shared_ptr<const LoadedModel> resolve_model(const json& body) const {
    if (!body.contains("checkpoint")) {
      if (default_model_.empty()) throw ApiError(404, "not_found", "no checkpoint loaded", "checkpoint");
      return model_of(default_model_);
    }
    if (!body.at("checkpoint").is_string()) throw ApiError(400, "malformed", "checkpoint must be a string", "checkpoint");
    return model_of(body.at("checkpoint").get<std::string>());
  }

  // Champion by name or id. Unknown names in a pick are a legality failure,
  // elsewhere the body is malformed.
  static int champion_ref(const Vocab& vocab, const json& v, const std::string& field, bool pick = false) {
    const int status = pick ? 422 : 400;
    const std::string code = pick ? "illegal_pick" : "malformed";
    const std::string rule = pick ? "unknown" : "";
    if (v.is_string()) {
      auto id = vocab.find_champion(v.get<std::string>());
      if (!id) throw ApiError(status, code, "unknown champion '" + v.get<std::string>() + "'", field, rule);
      return *id;
    }
    if (v.is_number_integer()) {
      const auto c = v.get<long long>();
      if (c < kFirstId || c >= static_cast<long long>(vocab.champion_rows()))
        throw ApiError(status, code, "unknown champion id " + std::to_string(c), field, rule);
      return static_cast<int>(c);
    }
    throw ApiError(400, "malformed", "champion must be a name or an id", field);
  }

  static int role_ref(const Vocab& vocab, const json& v, const std::string& field) {
    if (v.is_null()) return kUnk;
    if (v.is_string()) {
      auto id = vocab.find_role(v.get<std::string>());
      if (!id) throw ApiError(400, "malformed", "unknown role '" + v.get<std::string>() + "'", field);
      return *id;
    }
    if (v.is_number_integer()) {
      const auto r = v.get<long long>();
      if (r < kFirstId || r >= static_cast<long long>(vocab.role_rows()))
        throw ApiError(400, "malformed", "unknown role id " + std::to_string(r), field);
      return static_cast<int>(r);
    }
    throw ApiError(400, "malformed", "role must be a name, an id or null", field);
  }

  SlotBinding binding(const Vocab& vocab, const json& js, const std::string& field, std::size_t L) const {
    if (!js.is_object()) throw ApiError(400, "malformed", "slot binding must be an object", field);
    static const std::set<std::string> known{"player_id", "history", "anonymous", "role"};
    for (const auto& [key, _] : js.items())
      if (!known.count(key)) throw ApiError(400, "malformed", "unknown field '" + key + "'", field + "." + key);
    SlotBinding b;
    if (js.contains("role")) b.role = role_ref(vocab, js.at("role"), field + ".role");
    if (js.contains("anonymous")) {
      if (!js.at("anonymous").is_boolean()) throw ApiError(400, "malformed", "anonymous must be a boolean", field + ".anonymous");
      b.anonymous = js.at("anonymous").get<bool>();
    }
    const bool has_player = js.contains("player_id"), has_history = js.contains("history");
    if (b.anonymous && (has_player || has_history))
      throw ApiError(400, "malformed", "an anonymous slot cannot carry a player or history", field);
    if (has_player && has_history)
      throw ApiError(400, "malformed", "give either player_id or history, not both", field);
    if (!b.anonymous && !has_player && !has_history) b.anonymous = true;
    if (has_player) {
      if (!js.at("player_id").is_string()) throw ApiError(400, "malformed", "player_id must be a string", field + ".player_id");
      if (!corpus_) throw ApiError(422, "no_corpus", "player_id bindings need a corpus loaded", field + ".player_id");
      b.player_id = js.at("player_id").get<std::string>();
      b.history = corpus_->latest_history(*b.player_id, L);
    }
    if (has_history) {
      const auto& h = js.at("history");
      if (!h.is_array()) throw ApiError(400, "malformed", "history must be an array", field + ".history");
      for (std::size_t i = 0; i < h.size(); ++i) {
        const std::string f = field + ".history[" + std::to_string(i) + "]";
        if (!h[i].is_object() || !h[i].contains("champion"))
          throw ApiError(400, "malformed", "history entry needs a champion", f);
        HistoryEntry e;
        e.champion = champion_ref(vocab, h[i].at("champion"), f + ".champion");
        e.role = h[i].contains("role") ? role_ref(vocab, h[i].at("role"), f + ".role") : kUnk;
        if (h[i].contains("features")) {
          const auto& fs = h[i].at("features");
          if (!fs.is_array()) throw ApiError(400, "malformed", "features must be an array", f + ".features");
          for (const auto& x : fs) {
            if (!x.is_number()) throw ApiError(400, "malformed", "features must be numbers", f + ".features");
            e.features.push_back(x.get<float>());
          }
        } else {
          e.features.assign(vocab.num_features(), 0.f);
        }
        if (e.features.size() != vocab.num_features())
          throw ApiError(400, "malformed", "expected " + std::to_string(vocab.num_features()) + " features", f + ".features");
        b.history.push_back(std::move(e));
      }
    }
    return b;
  }

  static void check_legal(const Session& s, int c, const Vocab& vocab) {
    if (std::find(s.bans.begin(), s.bans.end(), c) != s.bans.end())
      throw ApiError(422, "illegal_pick", vocab.champion_name(c) + " is banned", "champion", "banned");
    if (std::find(s.picks.begin(), s.picks.end(), c) != s.picks.end())
      throw ApiError(422, "illegal_pick", vocab.champion_name(c) + " is already taken", "champion", "taken");
  }

  static void apply_pick(Session& s, int turn, int c) {
    if (s.complete() || turn != s.cursor()) throw Error("pick for turn " + std::to_string(turn) + " out of order");
    s.picks.push_back(c);
  }

  static DraftState session_state(const Session& s, const Checkpoint& ck) {
    return build_state(s.inputs(), s.cursor(), ck.normalizer, ck.config.model.history_len);
  }

  json summary(const Session& s, const LoadedModel& m) const {
    const auto& ck = m.ckpt;
    const auto& vocab = ck.vocab;
    json picks = json::array();
    for (std::size_t i = 0; i < s.picks.size(); ++i) {
      const int t = static_cast<int>(i) + 1;
      picks.push_back({{"turn", t},
                       {"team", team_name(team_of_turn(t))},
                       {"champion", vocab.champion_name(s.picks[i])},
                       {"champion_id", s.picks[i]}});
    }
    json bans = json::array();
    for (int b : s.bans) bans.push_back(vocab.champion_name(b));
    json out = {{"session_id", s.id},
                {"checkpoint", s.checkpoint},
                {"model_version", m.version},
                {"bans", bans},
                {"picks", picks},
                {"complete", s.complete()}};
    if (s.complete()) {
      // final draft: the last pick is probed onto the turn-10 state
      DraftInputs in = s.inputs();
      const auto t10 = build_state(in, kNumTurns, ck.normalizer, ck.config.model.history_len);
      const auto done = apply_whatif(t10, s.picks.back(), ck.model.champion_rows());
      out["turn"] = nullptr;
      out["blue_win_prob"] = state_blue_prob(ck.model, done);
    } else {
      const auto st = session_state(s, ck);
      const double blue = state_blue_prob(ck.model, st);
      out["turn"] = st.turn;
      out["acting_team"] = team_name(st.acting_team());
      out["win_prob"] = player_perspective(blue, st.acting_team());
      out["blue_win_prob"] = blue;
      out["state"] = state_to_json(st, vocab);
    }
    return out;
  }

  static json history_json(const std::vector<HistoryEntry>& h) {
    json out = json::array();
    for (const auto& e : h) out.push_back({{"champion", e.champion}, {"role", e.role}, {"features", e.features}});
    return out;
  }

  // Journal form of a new session: bindings fully resolved, ids only.
  static json session_record(const Session& s) {
    json slots = json::array();
    for (const auto& b : s.slots) {
      json js = {{"anonymous", b.anonymous}, {"role", b.role}, {"history", history_json(b.history)}};
      if (b.player_id) js["player_id"] = *b.player_id;
      slots.push_back(std::move(js));
    }
    return {{"id", s.id}, {"checkpoint", s.checkpoint}, {"bans", s.bans}, {"slots", slots}};
  }

  Session session_from_record(const json& r) const {
    Session s;
    s.id = r.at("id").get<std::string>();
    s.checkpoint = r.at("checkpoint").get<std::string>();
    model_of(s.checkpoint);
    s.bans = r.at("bans").get<std::vector<int>>();
    const auto& slots = r.at("slots");
    if (slots.size() != kNumTurns) throw Error("session record needs 10 slots");
    for (std::size_t k = 0; k < kNumTurns; ++k) {
      const auto& js = slots[k];
      auto& b = s.slots[k];
      b.anonymous = js.at("anonymous").get<bool>();
      b.role = js.at("role").get<int>();
      if (js.contains("player_id")) b.player_id = js.at("player_id").get<std::string>();
      for (const auto& e : js.at("history"))
        b.history.push_back({e.at("champion").get<int>(), e.at("role").get<int>(), e.at("features").get<std::vector<float>>()});
    }
    return s;
  }

  void journal(const json& rec) {
    std::lock_guard lock(journal_mu_);
    journal_locked(rec);
  }

  void journal_locked(const json& rec) {
    if (opt_.journal.empty()) return;
    std::ofstream f(opt_.journal, std::ios::app);
    if (!f) throw ApiError(500, "journal", "cannot append to journal " + opt_.journal);
    f << rec.dump() << '\n';
    f.flush();
    if (!f) throw ApiError(500, "journal", "write to journal " + opt_.journal + " failed");
  }

  Options opt_;
  mutable std::shared_mutex mu_;  // sessions_ and models_
  std::mutex journal_mu_;
  std::map<std::string, std::shared_ptr<const LoadedModel>> models_;
  std::string default_model_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::size_t next_id_ = 1;
  std::shared_ptr<const Corpus> corpus_;
};

}  // namespace draftrec
