#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "pfgan/diffmath.hpp"

namespace pfgan::train {

// Mean squared error over all T*F entries.
inline Var reconstruction_loss(Var predicted, Var target) { return ops::mse(predicted, target); }

inline double reconstruction_loss(const Tensor& predicted, const Tensor& target) {
  if (!predicted.same_shape(target)) {
    throw InputError("reconstruction_loss: shape mismatch " + predicted.shape_string() + " vs " +
                     target.shape_string());
  }
  double s = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const double d = predicted[k] - target[k];
    s += d * d;
  }
  return s / static_cast<double>(predicted.size());
}

// Hinge discriminator loss for one pair of raw scores:
//   -min(0, -1 + score_t) - min(0, -1 - score_f)
inline double disc_loss(double score_t, double score_f) {
  return -std::min(0.0, -1.0 + score_t) - std::min(0.0, -1.0 - score_f);
}

// Batch form: each hinge term averaged over its class.
inline double disc_loss(std::span<const double> score_t, std::span<const double> score_f) {
  if (score_t.empty() || score_f.empty()) throw InputError("disc_loss: empty batch");
  double lt = 0.0, lf = 0.0;
  for (double s : score_t) lt += -std::min(0.0, -1.0 + s);
  for (double s : score_f) lf += -std::min(0.0, -1.0 - s);
  return lt / static_cast<double>(score_t.size()) + lf / static_cast<double>(score_f.size());
}

inline Var disc_loss(std::span<const Var> score_t, std::span<const Var> score_f) {
  using namespace ops;
  if (score_t.empty() || score_f.empty()) throw InputError("disc_loss: empty batch");
  std::vector<Var> lt, lf;
  for (const Var& s : score_t) lt.push_back(relu(affine(s, -1.0, 1.0)));  // -min(0, s - 1)
  for (const Var& s : score_f) lf.push_back(relu(affine(s, 1.0, 1.0)));   // -min(0, -1 - s)
  return add(scale(add_scalars(lt), 1.0 / static_cast<double>(lt.size())),
             scale(add_scalars(lf), 1.0 / static_cast<double>(lf.size())));
}

// L_G = L_T - alpha * (score_f - score_t)
inline double gen_loss(double l_t, double score_t, double score_f, double alpha) {
  return l_t - alpha * (score_f - score_t);
}

inline Var gen_loss(Var l_t, Var score_t, Var score_f, double alpha) {
  using namespace ops;
  return sub(l_t, scale(sub(score_f, score_t), alpha));
}

inline Var mean_of(std::span<const Var> xs) {
  return ops::scale(ops::add_scalars(xs), 1.0 / static_cast<double>(xs.size()));
}

struct GateState {
  bool s_g = false;  // generator receives the adversarial gradient
  bool s_d = true;   // discriminator is updated

  friend bool operator==(const GateState&, const GateState&) = default;
};

// Strict comparisons: accuracy > low enables the adversarial generator
// gradient, accuracy < high keeps the discriminator training.
inline GateState update_gates(double accuracy, double low, double high) {
  return GateState{accuracy > low, accuracy < high};
}

}  // namespace pfgan::train
