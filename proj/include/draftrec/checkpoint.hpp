#pragma once

// Binary checkpoint layout (little-endian):
//   "DRFTRCK1"  u32 version  u64 header_len  header (JSON, UTF-8)
//   u32 tensor_count, then per tensor: u32 name_len, name, u32 rank, u64 dims[rank], f32 data[]
//   u64 adam_step, u32 moment_count, then m and v for each learnable tensor (same tensor encoding)
// The header holds config text, config_hash, vocab, normalizer, seed, step and free-form meta.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "draftrec/config.hpp"
#include "draftrec/model.hpp"
#include "draftrec/optim.hpp"

namespace draftrec {

inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'F', 'T', 'R', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Config config;
  Vocab vocab;
  Normalizer normalizer;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  json meta = json::object();
  DraftRecModel<float> model;
  AdamState<float> adam;
};

namespace detail {

template <class V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V get(std::istream& is, const std::string& what) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("checkpoint truncated", "checkpoint: truncated while reading " + what);
  return v;
}

inline void put_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

inline std::pair<std::string, Tensor<float>> get_tensor(std::istream& is) {
  const auto n = get<std::uint32_t>(is, "tensor name length");
  if (n > 4096) throw DataError("checkpoint corrupt", "checkpoint: implausible tensor name length");
  std::string name(n, '\0');
  is.read(name.data(), n);
  const auto rank = get<std::uint32_t>(is, "tensor rank");
  if (rank > 8) throw DataError("checkpoint corrupt", "checkpoint: implausible rank for " + name);
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get<std::uint64_t>(is, "tensor dims"));
  Tensor<float> t(shape);
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!is) throw DataError("checkpoint truncated", "checkpoint: truncated tensor " + name);
  return {std::move(name), std::move(t)};
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::ostringstream os(std::ios::binary);
  json header = {{"config", c.config.to_text()},
                 {"config_hash", config_hash(c.config)},
                 {"vocab", c.vocab.to_json()},
                 {"normalizer", c.normalizer.to_json()},
                 {"seed", c.seed},
                 {"step", c.step},
                 {"meta", c.meta}};
  const std::string h = header.dump();
  os.write(kCheckpointMagic, 8);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint64_t>(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  const auto& store = c.model.params();
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store.entries) detail::put_tensor(os, e.name, e.value);
  detail::put<std::uint64_t>(os, c.adam.step);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.adam.m.size()));
  std::size_t li = 0;
  for (const auto& e : store.entries) {
    if (!e.learnable) continue;
    if (li < c.adam.m.size()) {
      detail::put_tensor(os, e.name + ".m", c.adam.m[li]);
      detail::put_tensor(os, e.name + ".v", c.adam.v[li]);
    }
    ++li;
  }
  return os.str();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("checkpoint magic", "checkpoint: not a DraftRec checkpoint");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version", "checkpoint: unsupported version " + std::to_string(version));
  const auto hlen = detail::get<std::uint64_t>(is, "header length");
  if (hlen > bytes.size()) throw DataError("checkpoint corrupt", "checkpoint: header length exceeds file");
  std::string h(hlen, '\0');
  is.read(h.data(), static_cast<std::streamsize>(hlen));
  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    throw DataError("checkpoint corrupt", std::string("checkpoint: bad header: ") + e.what());
  }

  Checkpoint c;
  c.config = parse_config(header.at("config").get<std::string>());
  if (config_hash(c.config) != header.at("config_hash").get<std::uint64_t>())
    throw DataError("checkpoint hash", "checkpoint: config hash mismatch");
  c.vocab = Vocab::from_json(header.at("vocab"));
  c.normalizer = Normalizer::from_json(header.at("normalizer"));
  c.seed = header.at("seed").get<std::uint64_t>();
  c.step = header.at("step").get<std::uint64_t>();
  c.meta = header.value("meta", json::object());
  c.model = DraftRecModel<float>(c.config.model, c.vocab, c.seed);

  auto& store = c.model.params();
  const auto n = detail::get<std::uint32_t>(is, "tensor count");
  if (n != store.size())
    throw DataError("checkpoint params", "checkpoint: " + std::to_string(n) + " tensors, model expects " +
                                             std::to_string(store.size()));
  for (std::uint32_t i = 0; i < n; ++i) {
    auto [name, t] = detail::get_tensor(is);
    auto& slot = store[store.index_of(name)];
    if (slot.shape() != t.shape())
      throw DataError("checkpoint params", "checkpoint: " + name + " has shape " + shape_str(t.shape()) +
                                               ", model expects " + shape_str(slot.shape()));
    slot = std::move(t);
  }
  c.adam = AdamState<float>::for_params(store.learnable());
  c.adam.step = detail::get<std::uint64_t>(is, "adam step");
  const auto moments = detail::get<std::uint32_t>(is, "moment count");
  if (moments != 0 && moments != c.adam.m.size())
    throw DataError("checkpoint params", "checkpoint: moment count mismatch");
  for (std::uint32_t i = 0; i < moments; ++i) {
    auto m = detail::get_tensor(is).second;
    auto v = detail::get_tensor(is).second;
    if (m.shape() != c.adam.m[i].shape() || v.shape() != c.adam.v[i].shape())
      throw DataError("checkpoint params", "checkpoint: moment shape mismatch");
    c.adam.m[i] = std::move(m);
    c.adam.v[i] = std::move(v);
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write checkpoint " + path);
  const auto bytes = serialize_checkpoint(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

// Content hash of a checkpoint's parameters.
inline std::uint64_t checkpoint_hash(const Checkpoint& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : c.model.params().entries) {
    const auto* p = reinterpret_cast<const unsigned char*>(e.value.data());
    for (std::size_t i = 0; i < e.value.size() * sizeof(float); ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace draftrec
