#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "draftrec/autodiff.hpp"
#include "draftrec/rng.hpp"

namespace draftrec {

// Named parameter tensors. Fixed tensors (sinusoidal tables) live here too so
// checkpoints carry them, but they never receive updates or weight decay.
template <class T>
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool learnable = true;
  };
  std::vector<Entry> entries;

  std::size_t add(std::string name, Tensor<T> value, bool learnable = true) {
    for (const auto& e : entries)
      if (e.name == name) throw Error("param store: duplicate parameter " + name);
    entries.push_back({std::move(name), std::move(value), learnable});
    return entries.size() - 1;
  }
  std::size_t size() const { return entries.size(); }
  Tensor<T>& operator[](std::size_t i) { return entries[i].value; }
  const Tensor<T>& operator[](std::size_t i) const { return entries[i].value; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return i;
    throw Error("param store: no parameter " + name);
  }
  std::size_t num_learnable_values() const {
    std::size_t n = 0;
    for (const auto& e : entries)
      if (e.learnable) n += e.value.size();
    return n;
  }
  std::vector<Tensor<T>*> learnable() {
    std::vector<Tensor<T>*> out;
    for (auto& e : entries)
      if (e.learnable) out.push_back(&e.value);
    return out;
  }
};

// Graph handles for one forward pass. Learnable entries are leaves that
// accumulate gradients when `train` is set; everything else is a constant view.
template <class T>
struct ParamVars {
  std::vector<ad::Var<T>> vars;
  const ad::Var<T>& operator[](std::size_t i) const { return vars[i]; }

  static ParamVars bind(const ParamStore<T>& store, bool train) {
    ParamVars pv;
    for (const auto& e : store.entries) pv.vars.push_back(ad::Var<T>::borrow(e.value, train && e.learnable));
    return pv;
  }
};

namespace init {

template <class T>
Tensor<T> normal(std::size_t rows, std::size_t cols, Rng& rng, double sd) {
  Tensor<T> t = Tensor<T>::matrix(rows, cols);
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

template <class T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t = Tensor<T>::matrix(fan_in, fan_out);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-a, a));
  return t;
}

// pos[p][2i] = sin(p / 10000^(2i/d)), pos[p][2i+1] = cos(same angle)
template <class T>
Tensor<T> sinusoidal(std::size_t positions, std::size_t d) {
  Tensor<T> t = Tensor<T>::matrix(positions, d);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      t(p, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) t(p, i + 1) = static_cast<T>(std::cos(angle));
    }
  return t;
}

}  // namespace init

struct BlockShape {
  std::size_t d = 0;
  std::size_t heads = 1;
  std::size_t head_dim = 64;
  double dropout = 0.0;
};

// Post-norm encoder block: x1 = LN(x + Drop(MHA(x))), out = LN(x1 + Drop(FFN(x1))).
template <class T>
struct EncoderBlock {
  BlockShape shape;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;

  static EncoderBlock create(ParamStore<T>& store, const std::string& prefix, BlockShape s, Rng& rng) {
    EncoderBlock b;
    b.shape = s;
    const std::size_t inner = s.heads * s.head_dim, ff = 4 * s.d;
    auto zeros = [](std::size_t n) { return Tensor<T>(Shape{n}); };
    auto ones = [](std::size_t n) { return Tensor<T>(Shape{n}, T(1)); };
    b.wq = store.add(prefix + ".attn.wq", init::xavier<T>(s.d, inner, rng));
    b.bq = store.add(prefix + ".attn.bq", zeros(inner));
    b.wk = store.add(prefix + ".attn.wk", init::xavier<T>(s.d, inner, rng));
    b.bk = store.add(prefix + ".attn.bk", zeros(inner));
    b.wv = store.add(prefix + ".attn.wv", init::xavier<T>(s.d, inner, rng));
    b.bv = store.add(prefix + ".attn.bv", zeros(inner));
    b.wo = store.add(prefix + ".attn.wo", init::xavier<T>(inner, s.d, rng));
    b.bo = store.add(prefix + ".attn.bo", zeros(s.d));
    b.ln1_g = store.add(prefix + ".ln1.gain", ones(s.d));
    b.ln1_b = store.add(prefix + ".ln1.bias", zeros(s.d));
    b.w1 = store.add(prefix + ".ffn.w1", init::xavier<T>(s.d, ff, rng));
    b.b1 = store.add(prefix + ".ffn.b1", zeros(ff));
    b.w2 = store.add(prefix + ".ffn.w2", init::xavier<T>(ff, s.d, rng));
    b.b2 = store.add(prefix + ".ffn.b2", zeros(s.d));
    b.ln2_g = store.add(prefix + ".ln2.gain", ones(s.d));
    b.ln2_b = store.add(prefix + ".ln2.bias", zeros(s.d));
    return b;
  }

  // x: (segments * segment_len) x d. key_mask: segments x segment_len additive, or null.
  ad::Var<T> forward(const ParamVars<T>& p, const ad::Var<T>& x, std::size_t segment_len, const Tensor<T>* key_mask,
                     Rng* rng, Tensor<T>* attention_out = nullptr) const {
    using namespace ad;
    auto lin = [&](const Var<T>& in, std::size_t w, std::size_t b) { return add_bias(matmul(in, p[w]), p[b]); };
    auto q = lin(x, wq, bq), k = lin(x, wk, bk), v = lin(x, wv, bv);
    auto att = multihead_attention(q, k, v, AttentionSpec{segment_len, shape.heads, shape.dropout}, key_mask, rng,
                                   attention_out);
    auto x1 = layer_norm(add(x, dropout(lin(att, wo, bo), shape.dropout, rng)), p[ln1_g], p[ln1_b]);
    auto f = lin(gelu(lin(x1, w1, b1)), w2, b2);
    return layer_norm(add(x1, dropout(f, shape.dropout, rng)), p[ln2_g], p[ln2_b]);
  }
};

}  // namespace draftrec
