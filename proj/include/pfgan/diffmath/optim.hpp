#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pfgan/diffmath/tensor.hpp"

namespace pfgan {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState for_params(const ParamSet& params, double beta1 = 0.9, double beta2 = 0.999,
                              double epsilon = 1e-8) {
    AdamState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.value.shape(), std::vector<double>(p.value.size(), 0.0));
      s.second_moment.emplace_back(p.value.shape(), std::vector<double>(p.value.size(), 0.0));
    }
    return s;
  }
};

// One bias-corrected Adam update; gradients are zeroed afterwards.
inline void adam_step(ParamSet& params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ConfigError("adam_step: optimizer state does not match parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!state.first_moment[i].same_shape(params[i].grad) ||
        !state.second_moment[i].same_shape(params[i].grad)) {
      throw ConfigError("adam_step: moment shape mismatch for " + params[i].name);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.values();
    auto& g = params[i].grad.values();
    auto& m = state.first_moment[i].values();
    auto& v = state.second_moment[i].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
      g[k] = 0.0;
    }
  }
}

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (auto& g : p.grad.values()) g *= s;
  }
  return norm;
}

// Exponential decay pinned to both endpoints, flat afterwards.
struct LrSchedule {
  double lr0 = 1e-3;
  double lr_final = 1e-5;
  std::uint64_t decay_steps = 50'000;

  void validate() const {
    if (!(lr0 > 0.0) || !(lr_final > 0.0)) throw ConfigError("learning rates must be positive");
    if (lr_final > lr0) throw ConfigError("lr_final must not exceed lr0");
    if (decay_steps == 0) throw ConfigError("lr decay_steps must be positive");
  }
};

inline double lr_at(const LrSchedule& s, std::uint64_t step) {
  if (step == 0) return s.lr0;
  if (step >= s.decay_steps) return s.lr_final;
  const double frac = static_cast<double>(step) / static_cast<double>(s.decay_steps);
  return s.lr0 * std::pow(s.lr_final / s.lr0, frac);
}

}  // namespace pfgan
