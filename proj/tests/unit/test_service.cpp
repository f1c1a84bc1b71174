#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "draftrec/draftrec.hpp"
#include "draftrec/http.hpp"
#include "support/model_check.hpp"

using namespace draftrec;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& name) { return std::string(DRAFTREC_FIXTURES) + "/" + name; }

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("missing fixture " + path);
  return json::parse(f);
}

// Numbers compare within 1e-6; everything else exactly.
::testing::AssertionResult json_near(const json& a, const json& b, const std::string& path = "$") {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    if (std::abs(x - y) <= 1e-6 * std::max(1.0, std::abs(y))) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << path << ": " << x << " vs " << y;
  }
  if (a.type() != b.type()) return ::testing::AssertionFailure() << path << ": " << a.dump() << " vs " << b.dump();
  if (a.is_object()) {
    if (a.size() != b.size()) return ::testing::AssertionFailure() << path << ": keys " << a.dump() << " vs " << b.dump();
    for (const auto& [k, v] : a.items()) {
      if (!b.contains(k)) return ::testing::AssertionFailure() << path << ": unexpected key " << k;
      if (auto r = json_near(v, b.at(k), path + "." + k); !r) return r;
    }
    return ::testing::AssertionSuccess();
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return ::testing::AssertionFailure() << path << ": length " << a.size() << " vs " << b.size();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (auto r = json_near(a[i], b[i], path + "[" + std::to_string(i) + "]"); !r) return r;
    return ::testing::AssertionSuccess();
  }
  if (a == b) return ::testing::AssertionSuccess();
  return ::testing::AssertionFailure() << path << ": " << a.dump() << " vs " << b.dump();
}

// DRAFTREC_UPDATE_GOLDEN=1 rewrites the files instead of comparing.
void expect_golden(const std::string& name, const json& actual) {
  const auto path = fixture("api/" + name);
  if (std::getenv("DRAFTREC_UPDATE_GOLDEN")) {
    std::ofstream(path) << actual.dump(2) << "\n";
    return;
  }
  EXPECT_TRUE(json_near(actual, read_json(path))) << name;
}

ModelConfig small_config(std::size_t L) {
  ModelConfig mc;
  mc.d = 16;
  mc.layers = 1;
  mc.heads = 2;
  mc.head_dim = 8;
  mc.history_len = L;
  mc.dropout = 0;
  return mc;
}

Checkpoint fixture_checkpoint() {
  Checkpoint c;
  c.config.model = small_config(5);
  c.vocab = load_vocab(fixture("vocab.json"));
  c.normalizer = {{0, 0, 0}, {1, 1, 1}, 5.0};
  c.seed = 3;
  c.model = DraftRecModel<float>(c.config.model, c.vocab, c.seed);
  return c;
}

std::shared_ptr<const Corpus> fixture_corpus() {
  return std::make_shared<const Corpus>(load_corpus(fixture("matches.jsonl"), load_vocab(fixture("vocab.json"))));
}

struct SyntheticSetup {
  SyntheticWorld world;
  Checkpoint ck;
};

const SyntheticSetup& synthetic() {
  static const SyntheticSetup s = [] {
    SyntheticConfig sc;
    sc.seed = 9;
    sc.num_matches = 200;
    sc.num_players = 40;
    SyntheticSetup out{generate_synthetic(sc), {}};
    out.ck.config.model = small_config(6);
    out.ck.vocab = out.world.corpus.vocab();
    out.ck.normalizer = fit_normalizer(out.world.corpus);
    out.ck.seed = 5;
    out.ck.model = DraftRecModel<float>(out.ck.config.model, out.ck.vocab, out.ck.seed);
    return out;
  }();
  return s;
}

// Session body replaying match m: inline histories as of the match, true roles.
json session_body_for(const MatchRecord& m, const Corpus& c, std::size_t L) {
  json slots = json::array();
  for (int t = 1; t <= kNumTurns; ++t) {
    const auto& s = m.at_turn(t);
    json hist = json::array();
    for (const auto& e : c.history(s.player_id, m.timestamp, L))
      hist.push_back({{"champion", e.champion}, {"role", e.role}, {"features", e.features}});
    slots.push_back({{"history", hist}, {"role", s.role}});
  }
  return {{"bans", m.bans}, {"slots", slots}};
}

json fixture_create_body() { return read_json(fixture("api/create_session.request.json")); }

ApiError api_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const ApiError& e) {
    return e;
  }
  return ApiError(0, "none", "no error");
}

}  // namespace

TEST(Service, GoldenSessionFlow) {
  DraftService svc;
  svc.add_checkpoint("main", fixture_checkpoint());
  svc.set_corpus(fixture_corpus());
  expect_golden("meta.response.json", svc.meta().body);
  const auto created = svc.create_session(fixture_create_body());
  EXPECT_EQ(created.status, 201);
  expect_golden("create_session.response.json", created.body);
  const auto id = created.body["session_id"].get<std::string>();
  expect_golden("recommendations.response.json", svc.recommendations(id, {}).body);
  const auto picked = svc.submit_pick(id, read_json(fixture("api/pick.request.json")));
  EXPECT_EQ(picked.status, 200);
  expect_golden("pick.response.json", picked.body);
  const auto banned = api_error([&] { svc.submit_pick(id, {{"turn", 2}, {"champion", "Teemo"}}); });
  EXPECT_EQ(banned.status, 422);
  expect_golden("error_banned.response.json", error_body(banned));
  const auto order = api_error([&] { svc.submit_pick(id, {{"turn", 5}, {"champion", "Lux"}}); });
  EXPECT_EQ(order.status, 409);
  expect_golden("error_out_of_order.response.json", error_body(order));
}

TEST(Service, CreateValidation) {
  DraftService svc;
  EXPECT_EQ(api_error([&] { svc.create_session(fixture_create_body()); }).status, 404);
  svc.add_checkpoint("main", fixture_checkpoint());
  auto body = fixture_create_body();
  EXPECT_EQ(api_error([&] { svc.create_session(body); }).code, "no_corpus");
  svc.set_corpus(fixture_corpus());

  auto eleven = body;
  eleven["slots"].push_back(json::object());
  auto e = api_error([&] { svc.create_session(eleven); });
  EXPECT_EQ(e.status, 400);
  EXPECT_EQ(e.field, "slots");

  auto ckpt = body;
  ckpt["checkpoint"] = "other";
  EXPECT_EQ(api_error([&] { svc.create_session(ckpt); }).status, 404);

  auto ban = body;
  ban["bans"] = {"Teemo", "Nobody"};
  e = api_error([&] { svc.create_session(ban); });
  EXPECT_EQ(e.status, 400);
  EXPECT_EQ(e.field, "bans[1]");

  auto twice = body;
  twice["bans"] = {"Teemo", "Teemo"};
  EXPECT_EQ(api_error([&] { svc.create_session(twice); }).field, "bans[1]");

  auto extra = body;
  extra["slots"][3]["mood"] = "happy";
  EXPECT_EQ(api_error([&] { svc.create_session(extra); }).field, "slots[3].mood");

  auto role = body;
  role["slots"][2]["role"] = "goalkeeper";
  EXPECT_EQ(api_error([&] { svc.create_session(role); }).field, "slots[2].role");

  auto feats = body;
  feats["slots"][4] = {{"history", {{{"champion", "Lux"}, {"features", {1, 2}}}}}};
  EXPECT_EQ(api_error([&] { svc.create_session(feats); }).field, "slots[4].history[0].features");

  auto both = body;
  both["slots"][0] = {{"player_id", "frank"}, {"anonymous", true}};
  EXPECT_EQ(api_error([&] { svc.create_session(both); }).field, "slots[0]");

  EXPECT_EQ(api_error([&] { svc.create_session(json::array()); }).status, 400);
  EXPECT_TRUE(svc.session_ids().empty());
}

TEST(Service, UnknownPlayersAndEmptyBindingsAreAnonymousOrColdStart) {
  DraftService svc;
  svc.add_checkpoint("main", fixture_checkpoint());
  svc.set_corpus(fixture_corpus());
  json slots = json::array();
  slots.push_back({{"player_id", "nobody-knows-me"}});
  for (int k = 1; k < kNumTurns; ++k) slots.push_back(json::object());
  const auto id = svc.create_session({{"slots", slots}}).body["session_id"].get<std::string>();
  const auto s = svc.session(id);
  EXPECT_FALSE(s.slots[0].anonymous);
  EXPECT_TRUE(s.slots[0].history.empty());
  for (int k = 1; k < kNumTurns; ++k) EXPECT_TRUE(s.slots[static_cast<std::size_t>(k)].anonymous);
  const auto st = svc.current_state(id);
  EXPECT_TRUE(st.slot(1).history_visible);
  EXPECT_FALSE(st.slot(4).history_visible);
}

TEST(Service, OpponentBindingsNeverMatter) {
  const auto& S = synthetic();
  const auto& c = S.world.corpus;
  const auto& m = c[c.size() - 3];
  DraftService svc;
  svc.add_checkpoint("main", S.ck);
  auto full = session_body_for(m, c, 6);
  auto anon = full;
  for (int k : kPurpleTurns) anon["slots"][k - 1] = {{"anonymous", true}};
  const auto a = svc.create_session(full).body["session_id"].get<std::string>();
  const auto b = svc.create_session(anon).body["session_id"].get<std::string>();
  EXPECT_EQ(svc.current_state(a), svc.current_state(b));
  auto ra = svc.recommendations(a, {10, Strategy::PPlusV, {}}).body;
  auto rb = svc.recommendations(b, {10, Strategy::PPlusV, {}}).body;
  ra.erase("session_id");
  rb.erase("session_id");
  EXPECT_EQ(ra, rb);
}

TEST(Service, MatchesLibraryAtEveryTurn) {
  const auto& S = synthetic();
  const auto& c = S.world.corpus;
  const auto& ck = S.ck;
  DraftService svc;
  svc.add_checkpoint("main", ck);
  for (std::size_t mi : {c.size() - 1, c.size() - 7}) {
    const auto& m = c[mi];
    const auto id = svc.create_session(session_body_for(m, c, 6)).body["session_id"].get<std::string>();
    for (int t = 1; t <= kNumTurns; ++t) {
      const auto lib_state = build_state(m, c, t, ck.normalizer, 6);
      ASSERT_EQ(svc.current_state(id), lib_state) << t;
      for (Strategy strat : {Strategy::P, Strategy::V, Strategy::PPlusV}) {
        const auto body = svc.recommendations(id, {5, strat, 0.03}).body;
        const auto lib = recommend(ck.model, lib_state, strat, 0.03, 5);
        ASSERT_EQ(body["recommendations"].size(), lib.size());
        for (std::size_t i = 0; i < lib.size(); ++i) {
          const auto& r = body["recommendations"][i];
          EXPECT_EQ(r["champion_id"].get<int>(), lib[i].champion);
          EXPECT_EQ(r["champion"], c.vocab().champion_name(lib[i].champion));
          EXPECT_EQ(r["win_prob"].get<double>(), lib[i].win_prob);
          EXPECT_EQ(r["select_prob"].get<double>(), lib[i].select_prob);
          EXPECT_EQ(r["passed_threshold"].get<bool>(), lib[i].passed_threshold);
          const auto& ex = lib[i].explanation;
          EXPECT_EQ(r["synergy"], ex.synergy_champion ? json(c.vocab().champion_name(*ex.synergy_champion)) : json(nullptr));
          EXPECT_EQ(r["counter"], ex.counter_champion ? json(c.vocab().champion_name(*ex.counter_champion)) : json(nullptr));
          EXPECT_EQ(r["win_prob"].get<double>(), probe_outcomes(ck.model, lib_state, {lib[i].champion})[0]);
          if (t == 1) {
            EXPECT_TRUE(r["synergy"].is_null());
            EXPECT_TRUE(r["counter"].is_null());
          }
        }
        EXPECT_EQ(body["current_win_prob"].get<double>(),
                  player_perspective(state_blue_prob(ck.model, lib_state), lib_state.acting_team()));
      }
      const auto picked = svc.submit_pick(id, {{"turn", t}, {"champion", m.at_turn(t).champion}});
      if (t < kNumTurns) {
        EXPECT_EQ(picked.body["turn"], t + 1);
      }
    }
    const auto done = svc.get_state(id).body;
    EXPECT_TRUE(done["complete"].get<bool>());
    const auto last = apply_whatif(build_state(m, c, kNumTurns, ck.normalizer, 6), m.at_turn(kNumTurns).champion,
                                   ck.model.champion_rows());
    EXPECT_EQ(done["blue_win_prob"].get<double>(), state_blue_prob(ck.model, last));
    EXPECT_EQ(api_error([&] { svc.recommendations(id, {}); }).status, 409);
    const auto again = api_error([&] { svc.submit_pick(id, {{"turn", 10}, {"champion", 3}}); });
    EXPECT_EQ(again.status, 409);
    EXPECT_EQ(again.code, "complete");
  }
}

TEST(Service, PickRulesAndLargeK) {
  const auto& S = synthetic();
  const auto& c = S.world.corpus;
  const auto& m = c[c.size() - 2];
  DraftService svc;
  svc.add_checkpoint("main", S.ck);
  const auto id = svc.create_session(session_body_for(m, c, 6)).body["session_id"].get<std::string>();
  auto rule = [&](const json& champ) {
    const auto e = api_error([&] { svc.submit_pick(id, {{"turn", 2}, {"champion", champ}}); });
    EXPECT_EQ(e.status, 422);
    return e.rule;
  };
  svc.submit_pick(id, {{"turn", 1}, {"champion", m.at_turn(1).champion}});
  EXPECT_EQ(rule(m.bans[0]), "banned");
  EXPECT_EQ(rule(c.vocab().champion_name(m.at_turn(1).champion)), "taken");
  EXPECT_EQ(rule("Nobody"), "unknown");
  EXPECT_EQ(rule(999), "unknown");
  EXPECT_EQ(api_error([&] { svc.submit_pick(id, {{"turn", "2"}, {"champion", 5}}); }).status, 400);
  EXPECT_EQ(api_error([&] { svc.submit_pick("s999", {{"turn", 2}, {"champion", 5}}); }).status, 404);
  const auto all = svc.recommendations(id, {1000, Strategy::P, {}}).body;
  EXPECT_EQ(all["recommendations"].size(), legal_champions(svc.current_state(id), c.vocab()).size());
  EXPECT_EQ(api_error([&] { svc.recommendations(id, {1001, Strategy::P, {}}); }).field, "k");
  EXPECT_EQ(svc.session(id).picks.size(), 1u);
}

TEST(Service, JournalReplayRebuildsSessions) {
  const auto& S = synthetic();
  const auto& c = S.world.corpus;
  const auto dir = fs::temp_directory_path() / ("draftrec_journal_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto path = (dir / "j.jsonl").string();
  fs::remove(path);
  std::vector<std::string> ids;
  json final_state, partial_state;
  {
    DraftService svc({path, 1000});
    svc.add_checkpoint("main", S.ck);
    const auto& m = c[c.size() - 4];
    ids.push_back(svc.create_session(session_body_for(m, c, 6)).body["session_id"]);
    for (int t = 1; t <= kNumTurns; ++t) svc.submit_pick(ids[0], {{"turn", t}, {"champion", m.at_turn(t).champion}});
    const auto& m2 = c[c.size() - 5];
    ids.push_back(svc.create_session(session_body_for(m2, c, 6)).body["session_id"]);
    for (int t = 1; t <= 4; ++t) svc.submit_pick(ids[1], {{"turn", t}, {"champion", m2.at_turn(t).champion}});
    api_error([&] { svc.submit_pick(ids[1], {{"turn", 5}, {"champion", m2.bans[0]}}); });  // rejected, not journaled
    final_state = svc.get_state(ids[0]).body;
    partial_state = svc.get_state(ids[1]).body;
  }
  DraftService replayed({path, 1000});
  replayed.add_checkpoint("main", S.ck);
  EXPECT_EQ(replayed.replay_journal(path), 2u + 10u + 4u);
  EXPECT_EQ(replayed.session_ids(), ids);
  EXPECT_EQ(replayed.get_state(ids[0]).body, final_state);
  EXPECT_EQ(replayed.get_state(ids[1]).body, partial_state);
  // new sessions continue the numbering and keep appending
  const auto next = replayed.create_session(session_body_for(c[c.size() - 6], c, 6)).body["session_id"];
  EXPECT_EQ(next, "s3");
  DraftService again;
  again.add_checkpoint("main", S.ck);
  EXPECT_EQ(again.replay_journal(path), 17u);

  std::ofstream(path, std::ios::app) << "{\"op\":\"pick\",\"id\":\"s1\",\"turn\":11,\"champion\":3}\n";
  DraftService broken;
  broken.add_checkpoint("main", S.ck);
  EXPECT_THROW(broken.replay_journal(path), Error);
  fs::remove_all(dir);
}

TEST(Service, ReadersSeeConsistentSnapshots) {
  const auto& S = synthetic();
  const auto& c = S.world.corpus;
  const auto& m = c[c.size() - 8];
  DraftService svc;
  svc.add_checkpoint("main", S.ck);
  const auto id = svc.create_session(session_body_for(m, c, 6)).body["session_id"].get<std::string>();
  std::atomic<bool> done{false};
  std::atomic<int> torn{0}, reads{0};
  auto reader = [&] {
    while (!done) {
      const auto st = svc.get_state(id).body;
      if (!st["complete"].get<bool>() && st["turn"].get<int>() != static_cast<int>(st["picks"].size()) + 1) ++torn;
      try {
        const auto r = svc.recommendations(id, {3, Strategy::PPlusV, {}}).body;
        if (r["recommendations"].empty()) ++torn;
      } catch (const ApiError& e) {
        if (e.code != "complete") ++torn;
      }
      ++reads;
    }
  };
  std::thread r1(reader), r2(reader);
  for (int t = 1; t <= kNumTurns; ++t) {
    svc.submit_pick(id, {{"turn", t}, {"champion", m.at_turn(t).champion}});
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  done = true;
  r1.join();
  r2.join();
  EXPECT_EQ(torn.load(), 0);
  EXPECT_GT(reads.load(), 0);
  EXPECT_EQ(svc.session(id).picks.size(), 10u);
}

TEST(Service, FullSizeRecommendationLatency) {
  // 156 champions at the default (lol) model size, full histories.
  Checkpoint ck;
  ck.config = profile_config("lol");
  ck.vocab = draftrec::testing::tiny_vocab(156, 5, 10);
  ck.normalizer = draftrec::testing::identity_normalizer(10);
  ck.model = DraftRecModel<float>(ck.config.model, ck.vocab, 1);
  DraftService svc;
  svc.add_checkpoint("lol", ck);
  Rng rng(2);
  const auto in = draftrec::testing::random_inputs(ck.vocab, rng, 10, 0);
  json slots = json::array();
  for (int t = 1; t <= kNumTurns; ++t) {
    json hist = json::array();
    for (std::size_t i = 0; i < ck.config.model.history_len; ++i)
      hist.push_back({{"champion", kFirstId + static_cast<int>(rng.below(156))},
                      {"role", kFirstId + static_cast<int>(rng.below(5))},
                      {"features", std::vector<double>(10, rng.normal(0, 1))}});
    slots.push_back({{"history", hist}, {"role", in.roles[static_cast<std::size_t>(t - 1)]}});
  }
  const auto id = svc.create_session({{"bans", in.bans}, {"slots", slots}}).body["session_id"].get<std::string>();
  for (int t = 1; t <= 3; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto body = svc.recommendations(id, {10, Strategy::PPlusV, 0.02}).body;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 2.0) << "turn " << t;
    EXPECT_EQ(body["recommendations"].size(), 10u);
    svc.submit_pick(id, {{"turn", t}, {"champion", in.picks[static_cast<std::size_t>(t - 1)]}});
  }
}

TEST(Http, EndToEndOverLoopback) {
  DraftService svc;
  svc.add_checkpoint("main", fixture_checkpoint());
  svc.set_corpus(fixture_corpus());
  httplib::Server server;
  mount(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(cli.Get("/v1/meta")->body)["api"], "v1");

  auto created = cli.Post("/v1/sessions", fixture_create_body().dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const auto id = json::parse(created->body)["session_id"].get<std::string>();
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");

  auto recs = cli.Get("/v1/sessions/" + id + "/recommendations?k=2&strategy=p%2Bv&tau=0.05");
  ASSERT_TRUE(recs);
  EXPECT_EQ(recs->status, 200);
  const auto rj = json::parse(recs->body);
  EXPECT_EQ(rj["recommendations"].size(), 2u);
  EXPECT_EQ(rj["strategy"], "p+v");
  EXPECT_EQ(rj["tau"], 0.05);
  EXPECT_EQ(rj, svc.recommendations(id, {2, Strategy::PPlusV, 0.05}).body);
  EXPECT_EQ(json::parse(cli.Get("/v1/sessions/" + id + "/recommendations?strategy=p+v")->body)["strategy"], "p+v");

  auto bad_k = cli.Get("/v1/sessions/" + id + "/recommendations?k=zero");
  EXPECT_EQ(bad_k->status, 400);
  EXPECT_EQ(json::parse(bad_k->body)["field"], "k");
  EXPECT_EQ(cli.Get("/v1/sessions/" + id + "/recommendations?strategy=q")->status, 400);

  auto bad_json = cli.Post("/v1/sessions/" + id + "/picks", "{turn:", "application/json");
  EXPECT_EQ(bad_json->status, 400);
  EXPECT_EQ(json::parse(bad_json->body)["code"], "malformed");

  auto pick = cli.Post("/v1/sessions/" + id + "/picks", R"({"turn":1,"champion":"Teemo"})", "application/json");
  EXPECT_EQ(pick->status, 422);
  const auto pj = json::parse(pick->body);
  EXPECT_EQ(pj["rule"], "banned");
  EXPECT_EQ(pj["field"], "champion");

  pick = cli.Post("/v1/sessions/" + id + "/picks", R"({"turn":1,"champion":"Lux"})", "application/json");
  EXPECT_EQ(pick->status, 200);
  auto state = cli.Get("/v1/sessions/" + id + "/state");
  EXPECT_EQ(json::parse(state->body), svc.get_state(id).body);

  auto missing = cli.Get("/v1/sessions/s42/state");
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["code"], "not_found");
  auto nowhere = cli.Get("/v2/anything");
  EXPECT_EQ(nowhere->status, 404);
  EXPECT_EQ(json::parse(nowhere->body)["code"], "not_found");
  EXPECT_EQ(cli.Options("/v1/sessions")->status, 204);

  server.stop();
  th.join();
}
