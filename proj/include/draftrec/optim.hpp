#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "draftrec/error.hpp"
#include "draftrec/tensor.hpp"

namespace draftrec {

template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  // Zeroed moments matching each parameter's shape.
  static AdamState for_params(const std::vector<Tensor<T>*>& params, double b1 = 0.9, double b2 = 0.999,
                              double eps = 1e-8) {
    AdamState s;
    s.beta1 = b1;
    s.beta2 = b2;
    s.epsilon = eps;
    for (const auto* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

// One bias-corrected Adam update of every parameter in place.
template <class T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               double lr) {
  if (lr < 0) throw Error("adam_step: negative learning rate");
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, " + std::to_string(state.m.size()) + " moment buffers");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape() || state.m[i].shape() != params[i]->shape())
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " has shape " + shape_str(params[i]->shape()) +
                       " but gradient " + shape_str(grads[i].shape()));
    if (has_nan<T>(grads[i].span())) throw NumericError("adam_step: NaN gradient in parameter " + std::to_string(i));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, t));
  const T eps = static_cast<T>(state.epsilon), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      p[j] -= step * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <class T>
double global_norm(const std::vector<Tensor<T>>& grads) {
  double s = 0;
  for (const auto& g : grads)
    for (T x : g.values()) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

// Rescales all gradients by max_norm / norm when their joint l2 norm exceeds
// max_norm. Returns the norm before clipping.
template <class T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm = 5.0) {
  if (!(max_norm > 0)) throw Error("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& g : grads)
      for (auto& x : g.values()) x *= f;
  }
  return norm;
}

struct LrSchedule {
  double initial_lr = 1e-3;
  double final_lr = 0.0;
  std::uint64_t total_steps = 1;
};

// Cosine annealing from initial_lr at step 0 to final_lr at total_steps; later
// steps stay at final_lr.
inline double cosine_lr(std::uint64_t step, const LrSchedule& s) {
  if (s.total_steps == 0 || step >= s.total_steps) return s.final_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
  return s.final_lr + (s.initial_lr - s.final_lr) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

}  // namespace draftrec
