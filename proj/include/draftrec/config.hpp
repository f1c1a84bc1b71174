#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "draftrec/error.hpp"

namespace draftrec {

enum class ChampionLoss { Categorical, BceOneHot };

inline const char* to_string(ChampionLoss l) { return l == ChampionLoss::Categorical ? "categorical" : "bce-onehot"; }

struct ModelConfig {
  std::size_t d = 128;
  std::size_t layers = 2;  // N, per network
  std::size_t heads = 2;
  std::size_t head_dim = 64;
  std::size_t history_len = 50;  // L
  double dropout = 0.1;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 512;  // (match, turn) instances per step
  double initial_lr = 1e-3;
  double final_lr = 0.0;
  double weight_decay = 1e-5;  // c
  double lambda = 0.1;
  double grad_clip = 5.0;
  std::uint64_t seed = 42;
  ChampionLoss champion_loss = ChampionLoss::Categorical;
};

struct Config {
  std::string profile = "lol";
  ModelConfig model;
  TrainConfig train;
  double tau = 0.02;

  void validate() const {
    if (model.d == 0 || model.heads == 0 || model.head_dim == 0 || model.history_len == 0)
      throw Error("config: d, heads, head_dim and L must be positive");
    if (model.dropout < 0 || model.dropout >= 1) throw Error("config: dropout must be in [0, 1)");
    if (train.lambda < 0 || train.lambda > 1) throw Error("config: lambda must be in [0, 1]");
    if (train.batch_size == 0) throw Error("config: batch_size must be positive");
    if (train.grad_clip <= 0) throw Error("config: grad_clip must be positive");
    if (train.initial_lr < 0 || train.final_lr < 0) throw Error("config: learning rates must be non-negative");
    if (train.weight_decay < 0) throw Error("config: weight_decay must be non-negative");
  }

  // Canonical key=value text; also the input of the config hash.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "profile=" << profile << "\n"
       << "d=" << model.d << "\n"
       << "N=" << model.layers << "\n"
       << "heads=" << model.heads << "\n"
       << "head_dim=" << model.head_dim << "\n"
       << "L=" << model.history_len << "\n"
       << "dropout=" << model.dropout << "\n"
       << "epochs=" << train.epochs << "\n"
       << "batch_size=" << train.batch_size << "\n"
       << "initial_lr=" << train.initial_lr << "\n"
       << "final_lr=" << train.final_lr << "\n"
       << "weight_decay=" << train.weight_decay << "\n"
       << "lambda=" << train.lambda << "\n"
       << "grad_clip=" << train.grad_clip << "\n"
       << "seed=" << train.seed << "\n"
       << "loss.champion=" << to_string(train.champion_loss) << "\n"
       << "tau=" << tau << "\n";
    return os.str();
  }
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const Config& c) { return fnv1a(c.to_text()); }

// Named defaults. "lol" and "dota2" follow the published hyperparameter table;
// "synthetic" is a small model for the generated corpora.
inline Config profile_config(const std::string& name) {
  Config c;
  c.profile = name;
  if (name == "lol") return c;
  if (name == "dota2") {
    c.model.d = 64;
    c.model.layers = 1;
    c.model.heads = 1;
    c.model.history_len = 20;
    c.model.dropout = 0.2;
    c.train.epochs = 20;
    c.train.weight_decay = 1e-4;
    return c;
  }
  if (name == "synthetic") {
    c.model.d = 64;
    c.model.layers = 1;
    c.model.heads = 2;
    c.model.head_dim = 32;
    c.model.history_len = 10;
    c.model.dropout = 0.1;
    c.train.epochs = 10;
    c.train.batch_size = 320;
    c.train.initial_lr = 3e-3;
    c.train.weight_decay = 1e-6;
    c.train.lambda = 0.5;
    return c;
  }
  throw Error("config: unknown profile '" + name + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw Error("config: bad value '" + v + "' for key '" + key + "'");
  return out;
}

}  // namespace detail

inline void apply_setting(Config& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  if (key == "profile") {
    auto base = profile_config(v);
    c = base;
  } else if (key == "d") {
    c.model.d = parse_number<std::size_t>(key, v);
  } else if (key == "N" || key == "layers") {
    c.model.layers = parse_number<std::size_t>(key, v);
  } else if (key == "heads") {
    c.model.heads = parse_number<std::size_t>(key, v);
  } else if (key == "head_dim") {
    c.model.head_dim = parse_number<std::size_t>(key, v);
  } else if (key == "L" || key == "history_len") {
    c.model.history_len = parse_number<std::size_t>(key, v);
  } else if (key == "dropout") {
    c.model.dropout = parse_number<double>(key, v);
  } else if (key == "epochs") {
    c.train.epochs = parse_number<std::size_t>(key, v);
  } else if (key == "batch_size") {
    c.train.batch_size = parse_number<std::size_t>(key, v);
  } else if (key == "initial_lr" || key == "lr") {
    c.train.initial_lr = parse_number<double>(key, v);
  } else if (key == "final_lr") {
    c.train.final_lr = parse_number<double>(key, v);
  } else if (key == "weight_decay" || key == "c") {
    c.train.weight_decay = parse_number<double>(key, v);
  } else if (key == "lambda") {
    c.train.lambda = parse_number<double>(key, v);
  } else if (key == "grad_clip") {
    c.train.grad_clip = parse_number<double>(key, v);
  } else if (key == "seed") {
    c.train.seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "loss.champion") {
    if (v == "categorical")
      c.train.champion_loss = ChampionLoss::Categorical;
    else if (v == "bce-onehot")
      c.train.champion_loss = ChampionLoss::BceOneHot;
    else
      throw Error("config: loss.champion must be categorical or bce-onehot, got '" + v + "'");
  } else if (key == "tau") {
    c.tau = parse_number<double>(key, v);
  } else {
    throw Error("config: unknown key '" + key + "'");
  }
}

// Flat key=value, '#' comments. A "profile" line resets to that profile's
// defaults, so it should come first.
inline Config parse_config(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key=value");
    apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace draftrec
