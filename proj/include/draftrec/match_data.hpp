#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "draftrec/error.hpp"
#include "json.hpp"

namespace draftrec {

using json = nlohmann::json;

inline constexpr int kNumTurns = 10;
inline constexpr int kTeamSize = 5;

// Reserved ids shared by the champion and role vocabularies.
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kMask = 2;
inline constexpr int kFirstId = 3;

enum class Team : std::uint8_t { Blue = 0, Purple = 1 };

inline constexpr Team team_of_turn(int turn) {
  switch (turn) {
    case 1: case 4: case 5: case 8: case 9: return Team::Blue;
    default: return Team::Purple;
  }
}

inline constexpr Team other(Team t) { return t == Team::Blue ? Team::Purple : Team::Blue; }
inline const char* team_name(Team t) { return t == Team::Blue ? "blue" : "purple"; }

inline constexpr std::array<int, 5> kBlueTurns{1, 4, 5, 8, 9};
inline constexpr std::array<int, 5> kPurpleTurns{2, 3, 6, 7, 10};

// Name <-> id tables. Real ids start at kFirstId.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> champions, std::vector<std::string> roles, std::vector<std::string> features)
      : champions_(std::move(champions)), roles_(std::move(roles)), features_(std::move(features)) {
    index();
  }

  const std::vector<std::string>& champions() const { return champions_; }
  const std::vector<std::string>& roles() const { return roles_; }
  const std::vector<std::string>& features() const { return features_; }

  std::size_t num_champions() const { return champions_.size(); }
  std::size_t num_roles() const { return roles_.size(); }
  std::size_t num_features() const { return features_.size(); }
  // Embedding table rows, reserved tokens included.
  std::size_t champion_rows() const { return champions_.size() + kFirstId; }
  std::size_t role_rows() const { return roles_.size() + kFirstId; }

  bool valid_champion(int id) const { return id >= kFirstId && id < static_cast<int>(champion_rows()); }
  bool valid_role(int id) const { return id == kUnk || (id >= kFirstId && id < static_cast<int>(role_rows())); }

  std::optional<int> find_champion(const std::string& name) const { return lookup(champion_ids_, name); }
  std::optional<int> find_role(const std::string& name) const { return lookup(role_ids_, name); }
  std::optional<std::size_t> find_feature(const std::string& name) const {
    auto it = feature_ids_.find(name);
    if (it == feature_ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& champion_name(int id) const { return name_of(champions_, id, "champion"); }
  const std::string& role_name(int id) const { return name_of(roles_, id, "role"); }

  json to_json() const { return {{"champions", champions_}, {"roles", roles_}, {"features", features_}}; }
  static Vocab from_json(const json& j) {
    try {
      return Vocab(j.at("champions").get<std::vector<std::string>>(),
                   j.value("roles", std::vector<std::string>{}),
                   j.value("features", std::vector<std::string>{}));
    } catch (const json::exception& e) {
      throw DataError("vocab schema", std::string("vocab: ") + e.what());
    }
  }

  bool operator==(const Vocab& o) const {
    return champions_ == o.champions_ && roles_ == o.roles_ && features_ == o.features_;
  }

 private:
  void index() {
    if (champions_.size() < 2) throw DataError("vocab size", "vocab: need at least 2 champions");
    auto build = [](const std::vector<std::string>& names, const char* what) {
      std::unordered_map<std::string, int> m;
      for (std::size_t i = 0; i < names.size(); ++i)
        if (!m.emplace(names[i], static_cast<int>(i) + kFirstId).second)
          throw DataError("unique names", std::string("vocab: duplicate ") + what + " '" + names[i] + "'");
      return m;
    };
    champion_ids_ = build(champions_, "champion");
    role_ids_ = build(roles_, "role");
    auto f = build(features_, "feature");
    for (auto& [k, v] : f) feature_ids_[k] = static_cast<std::size_t>(v - kFirstId);
  }
  static std::optional<int> lookup(const std::unordered_map<std::string, int>& m, const std::string& k) {
    auto it = m.find(k);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }
  static const std::string& name_of(const std::vector<std::string>& names, int id, const char* what) {
    static const std::array<std::string, 3> reserved{"[pad]", "[unk]", "[mask]"};
    if (id >= 0 && id < kFirstId) return reserved[static_cast<std::size_t>(id)];
    const auto i = static_cast<std::size_t>(id - kFirstId);
    if (i >= names.size()) throw Error(std::string("vocab: no ") + what + " with id " + std::to_string(id));
    return names[i];
  }

  std::vector<std::string> champions_, roles_, features_;
  std::unordered_map<std::string, int> champion_ids_, role_ids_;
  std::unordered_map<std::string, std::size_t> feature_ids_;
};

inline Vocab load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open vocab " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("vocab schema", "vocab " + path + ": " + e.what());
  }
  return Vocab::from_json(j);
}

inline void save_vocab(const std::string& path, const Vocab& v) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write vocab " + path);
  f << v.to_json().dump(2) << "\n";
}

struct Slot {
  std::string player_id;
  int turn = 0;
  Team team = Team::Blue;
  int role = kUnk;
  int champion = kPad;
  bool win = false;
  std::vector<float> features;

  bool operator==(const Slot&) const = default;
};

// One finished match. After validation slots[k] holds turn k + 1.
struct MatchRecord {
  std::string match_id;
  std::int64_t timestamp = 0;
  std::vector<int> bans;
  std::array<Slot, kNumTurns> slots;

  const Slot& at_turn(int t) const { return slots[static_cast<std::size_t>(t - 1)]; }
  bool blue_win() const { return at_turn(1).win; }

  bool operator==(const MatchRecord&) const = default;
};

// Checks every record invariant and orders slots by turn.
inline void validate_match(MatchRecord& m, const Vocab& vocab) {
  auto fail = [&](const std::string& rule, const std::string& detail) {
    throw DataError(rule, "match " + m.match_id + ": " + rule + " violated (" + detail + ")");
  };
  std::set<int> turns;
  for (const auto& s : m.slots) {
    if (s.turn < 1 || s.turn > kNumTurns || !turns.insert(s.turn).second)
      fail("turn permutation", "turn " + std::to_string(s.turn));
    if (s.team != team_of_turn(s.turn)) fail("team of turn", "turn " + std::to_string(s.turn) + " is not " + team_name(s.team));
    if (!vocab.valid_champion(s.champion)) fail("champion id", "id " + std::to_string(s.champion));
    if (!vocab.valid_role(s.role)) fail("role id", "id " + std::to_string(s.role));
    if (s.features.size() != vocab.num_features())
      fail("feature count", std::to_string(s.features.size()) + " != " + std::to_string(vocab.num_features()));
    for (float x : s.features)
      if (!std::isfinite(x)) fail("finite features", "player " + s.player_id);
    if (s.player_id.empty()) fail("player id", "empty");
  }
  std::sort(m.slots.begin(), m.slots.end(), [](const Slot& a, const Slot& b) { return a.turn < b.turn; });
  std::set<int> bans;
  for (int b : m.bans) {
    if (!vocab.valid_champion(b)) fail("champion id", "ban id " + std::to_string(b));
    bans.insert(b);
  }
  std::set<int> picked;
  for (const auto& s : m.slots) {
    if (!picked.insert(s.champion).second) fail("distinct champions", vocab.champion_name(s.champion) + " picked twice");
    if (bans.count(s.champion)) fail("banned champion", vocab.champion_name(s.champion) + " is banned");
  }
  const bool blue = m.at_turn(1).win;
  for (const auto& s : m.slots)
    if (s.win != (s.team == Team::Blue ? blue : !blue)) fail("outcome consistency", "turn " + std::to_string(s.turn));
}

inline MatchRecord match_from_json(const json& j, const Vocab& vocab) {
  MatchRecord m;
  try {
    m.match_id = j.at("match_id").is_string() ? j.at("match_id").get<std::string>() : j.at("match_id").dump();
    m.timestamp = j.at("timestamp").get<std::int64_t>();
    for (const auto& b : j.value("bans", json::array())) {
      auto id = vocab.find_champion(b.get<std::string>());
      if (!id) throw DataError("unknown champion", "match " + m.match_id + ": unknown banned champion " + b.dump());
      m.bans.push_back(*id);
    }
    const auto& slots = j.at("slots");
    if (!slots.is_array() || slots.size() != kNumTurns)
      throw DataError("ten slots", "match " + m.match_id + ": expected 10 slots, got " + std::to_string(slots.size()));
    int blue = 0;
    for (std::size_t k = 0; k < kNumTurns; ++k) {
      const auto& js = slots[k];
      Slot s;
      s.player_id = js.at("player_id").is_string() ? js.at("player_id").get<std::string>() : js.at("player_id").dump();
      s.turn = js.at("turn").get<int>();
      const auto team = js.at("team").get<std::string>();
      if (team != "blue" && team != "purple")
        throw DataError("team name", "match " + m.match_id + ": team must be blue or purple, got " + team);
      s.team = team == "blue" ? Team::Blue : Team::Purple;
      blue += s.team == Team::Blue;
      if (js.contains("role") && !js.at("role").is_null()) {
        auto r = vocab.find_role(js.at("role").get<std::string>());
        if (!r) throw DataError("unknown role", "match " + m.match_id + ": unknown role " + js.at("role").dump());
        s.role = *r;
      }
      auto c = vocab.find_champion(js.at("champion").get<std::string>());
      if (!c) throw DataError("unknown champion", "match " + m.match_id + ": unknown champion " + js.at("champion").dump());
      s.champion = *c;
      const auto outcome = js.at("outcome").get<std::string>();
      if (outcome != "win" && outcome != "lose")
        throw DataError("outcome value", "match " + m.match_id + ": outcome must be win or lose, got " + outcome);
      s.win = outcome == "win";
      s.features.assign(vocab.num_features(), 0.f);
      std::vector<bool> seen(vocab.num_features(), false);
      const json feats = js.value("features", json::object());
      for (const auto& [name, value] : feats.items()) {
        auto f = vocab.find_feature(name);
        if (!f) throw DataError("unknown feature", "match " + m.match_id + ": unknown feature " + name);
        s.features[*f] = value.get<float>();
        seen[*f] = true;
      }
      if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw DataError("feature count", "match " + m.match_id + ": missing features for player " + s.player_id);
      m.slots[k] = std::move(s);
    }
    if (blue != kTeamSize) throw DataError("team size", "match " + m.match_id + ": " + std::to_string(blue) + " blue slots");
  } catch (const json::exception& e) {
    throw DataError("schema", "match " + m.match_id + ": " + e.what());
  }
  validate_match(m, vocab);
  return m;
}

inline json match_to_json(const MatchRecord& m, const Vocab& vocab) {
  json bans = json::array();
  for (int b : m.bans) bans.push_back(vocab.champion_name(b));
  json slots = json::array();
  for (const auto& s : m.slots) {
    json f = json::object();
    for (std::size_t i = 0; i < s.features.size(); ++i) f[vocab.features()[i]] = s.features[i];
    slots.push_back({{"player_id", s.player_id},
                     {"turn", s.turn},
                     {"team", team_name(s.team)},
                     {"role", s.role == kUnk ? json(nullptr) : json(vocab.role_name(s.role))},
                     {"champion", vocab.champion_name(s.champion)},
                     {"outcome", s.win ? "win" : "lose"},
                     {"features", f}});
  }
  return {{"match_id", m.match_id}, {"timestamp", m.timestamp}, {"bans", bans}, {"slots", slots}};
}

struct HistoryEntry {
  int champion = kPad;
  int role = kPad;
  std::vector<float> features;  // raw
};

struct SlotRef {
  std::uint32_t match = 0;
  std::uint8_t slot = 0;
};

struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t total = 0;
};

enum class SplitPart { Train, Val, Test, All };

inline SplitPart parse_split(const std::string& s) {
  if (s == "train") return SplitPart::Train;
  if (s == "val") return SplitPart::Val;
  if (s == "test") return SplitPart::Test;
  if (s == "all") return SplitPart::All;
  throw Error("unknown split '" + s + "' (train|val|test|all)");
}

// Contiguous 85/5/10 prefix/middle/suffix split over time-sorted matches.
inline SplitBounds split_chronological(std::size_t m) {
  if (m < 20) throw DataError("split size", "split: need at least 20 matches, got " + std::to_string(m));
  SplitBounds b;
  b.train_end = m * 85 / 100;
  b.val_end = b.train_end + m * 5 / 100;
  b.total = m;
  return b;
}

// Matches sorted by (timestamp, match_id) plus a per-player chronological index.
class Corpus {
 public:
  Corpus() = default;
  Corpus(Vocab vocab, std::vector<MatchRecord> matches) : vocab_(std::move(vocab)), matches_(std::move(matches)) {
    std::stable_sort(matches_.begin(), matches_.end(), [](const MatchRecord& a, const MatchRecord& b) {
      return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.match_id < b.match_id;
    });
    std::set<std::string> ids;
    for (std::size_t i = 0; i < matches_.size(); ++i) {
      if (!ids.insert(matches_[i].match_id).second)
        throw DataError("unique match id", "duplicate match_id " + matches_[i].match_id);
      for (std::size_t k = 0; k < kNumTurns; ++k)
        by_player_[matches_[i].slots[k].player_id].push_back({static_cast<std::uint32_t>(i), static_cast<std::uint8_t>(k)});
    }
  }

  const Vocab& vocab() const { return vocab_; }
  const std::vector<MatchRecord>& matches() const { return matches_; }
  std::size_t size() const { return matches_.size(); }
  const MatchRecord& operator[](std::size_t i) const { return matches_[i]; }
  const std::unordered_map<std::string, std::vector<SlotRef>>& player_index() const { return by_player_; }

  // Up to L most recent entries of the player strictly before `before_ts`,
  // oldest first.
  std::vector<HistoryEntry> history(const std::string& player, std::int64_t before_ts, std::size_t L) const {
    std::vector<HistoryEntry> out;
    auto it = by_player_.find(player);
    if (it == by_player_.end() || L == 0) return out;
    const auto& refs = it->second;
    auto end = std::lower_bound(refs.begin(), refs.end(), before_ts,
                                [&](const SlotRef& r, std::int64_t ts) { return matches_[r.match].timestamp < ts; });
    auto begin = end - std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(L), end - refs.begin());
    for (auto r = begin; r != end; ++r) {
      const Slot& s = matches_[r->match].slots[r->slot];
      out.push_back({s.champion, s.role, s.features});
    }
    return out;
  }

  // Most recent entries over the whole corpus (live sessions).
  std::vector<HistoryEntry> latest_history(const std::string& player, std::size_t L) const {
    return history(player, std::numeric_limits<std::int64_t>::max(), L);
  }

  std::pair<std::size_t, std::size_t> range(SplitPart part) const {
    if (part == SplitPart::All) return {0, matches_.size()};
    const auto b = split_chronological(matches_.size());
    switch (part) {
      case SplitPart::Train: return {0, b.train_end};
      case SplitPart::Val: return {b.train_end, b.val_end};
      default: return {b.val_end, b.total};
    }
  }

 private:
  Vocab vocab_;
  std::vector<MatchRecord> matches_;
  std::unordered_map<std::string, std::vector<SlotRef>> by_player_;
};

// Optional adapter applied to each raw JSON line before schema parsing, for
// dumps whose field names differ from the canonical ones.
using FieldMapper = std::function<json(const json&)>;

inline Corpus load_corpus(const std::string& path, const Vocab& vocab, const FieldMapper& mapper = {}) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open corpus " + path);
  std::vector<MatchRecord> matches;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("malformed line", path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    if (mapper) j = mapper(j);
    try {
      matches.push_back(match_from_json(j, vocab));
    } catch (const DataError& e) {
      throw DataError(e.rule(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return Corpus(vocab, std::move(matches));
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write corpus " + path);
  for (const auto& m : corpus.matches()) f << match_to_json(m, corpus.vocab()).dump() << "\n";
}

// Per-feature standardization with clipping, fitted on training slots only.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  double clip = 5.0;

  std::size_t size() const { return mean.size(); }

  void apply_inplace(std::span<float> x) const {
    if (x.size() != mean.size())
      throw ShapeError("normalizer: " + std::to_string(x.size()) + " features, fitted on " + std::to_string(mean.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = (x[i] - mean[i]) / stddev[i];
      x[i] = static_cast<float>(std::clamp(z, -clip, clip));
    }
  }
  std::vector<float> apply(std::vector<float> x) const {
    apply_inplace(x);
    return x;
  }

  json to_json() const { return {{"mean", mean}, {"std", stddev}, {"clip", clip}}; }
  static Normalizer from_json(const json& j) {
    Normalizer n;
    n.mean = j.at("mean").get<std::vector<double>>();
    n.stddev = j.at("std").get<std::vector<double>>();
    n.clip = j.value("clip", 5.0);
    if (n.mean.size() != n.stddev.size()) throw DataError("normalizer schema", "normalizer: mean/std length mismatch");
    return n;
  }
  bool operator==(const Normalizer&) const = default;
};

inline Normalizer fit_normalizer(std::span<const MatchRecord> train, std::size_t num_features, double clip = 5.0) {
  if (train.empty()) throw DataError("empty train", "normalizer: empty training split");
  Normalizer n;
  n.clip = clip;
  n.mean.assign(num_features, 0.0);
  n.stddev.assign(num_features, 0.0);
  double count = 0;
  for (const auto& m : train)
    for (const auto& s : m.slots) {
      if (s.features.size() != num_features) throw ShapeError("normalizer: feature length mismatch in " + m.match_id);
      for (std::size_t i = 0; i < num_features; ++i) n.mean[i] += s.features[i];
      count += 1;
    }
  for (auto& v : n.mean) v /= count;
  for (const auto& m : train)
    for (const auto& s : m.slots)
      for (std::size_t i = 0; i < num_features; ++i) n.stddev[i] += (s.features[i] - n.mean[i]) * (s.features[i] - n.mean[i]);
  for (auto& v : n.stddev) {
    v = std::sqrt(v / count);
    if (!(v > 1e-12)) v = 1.0;
  }
  return n;
}

inline Normalizer fit_normalizer(const Corpus& corpus) {
  const auto [b, e] = corpus.range(SplitPart::Train);
  return fit_normalizer(std::span(corpus.matches()).subspan(b, e - b), corpus.vocab().num_features());
}

}  // namespace draftrec
