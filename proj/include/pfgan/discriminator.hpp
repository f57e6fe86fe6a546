#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "pfgan/diffmath.hpp"

// Sequence classifier over behavior sequences: spectrally normalized linear
// layers with leaky ReLU around a causally masked self-attention block,
// mean-pooled over time into one raw (unsquashed) score.
namespace pfgan::disc {

struct DiscriminatorConfig {
  std::size_t input_dim = 128;
  std::size_t hidden_dim = 64;
  std::size_t output_dim = 1;
  std::size_t heads = 1;
  double leaky_slope = 0.2;
  std::size_t power_iterations = 1;

  void validate() const {
    if (output_dim != 1) throw ConfigError("discriminator: output_dim must be 1");
    if (input_dim == 0 || hidden_dim == 0) throw ConfigError("discriminator: dims must be >= 1");
    if (heads == 0 || hidden_dim % heads != 0)
      throw ConfigError("discriminator: hidden_dim must be divisible by heads");
    if (power_iterations == 0) throw ConfigError("discriminator: power_iterations must be >= 1");
  }
};

namespace detail {

inline double normalize(std::vector<double>& x) {
  double n = 0.0;
  for (double v : x) n += v * v;
  n = std::sqrt(n);
  const double d = std::max(n, 1e-12);
  for (auto& v : x) v /= d;
  return n;
}

inline double frobenius(const Tensor& w) {
  double s = 0.0;
  for (double v : w.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace detail

struct PowerIterationState {
  std::vector<double> u;  // left singular estimate, length rows(W)
  std::vector<double> v;  // right singular estimate, length cols(W)
};

struct SpectralNormResult {
  Tensor weight;  // W / sigma
  PowerIterationState next;
  double sigma = 0.0;
};

// Runs `iters` power-iteration rounds v <- normalize(W^T u), u <- normalize(W v)
// starting from `u`, then sigma = u^T W v.
inline PowerIterationState power_iterate(const Tensor& w, std::vector<double> u, std::size_t iters) {
  if (detail::frobenius(w) < 1e-12) throw DegenerateWeightError("spectral_normalize: weight is ~0");
  if (u.size() != w.rows()) throw ConfigError("spectral_normalize: u has wrong length");
  if (iters == 0) throw ConfigError("spectral_normalize: need at least one iteration");
  const auto W = w.map();
  std::vector<double> v(w.cols());
  for (std::size_t it = 0; it < iters; ++it) {
    Eigen::Map<Eigen::VectorXd> uv(u.data(), static_cast<Eigen::Index>(u.size()));
    Eigen::Map<Eigen::VectorXd> vv(v.data(), static_cast<Eigen::Index>(v.size()));
    vv.noalias() = W.transpose() * uv;
    detail::normalize(v);
    uv.noalias() = W * vv;
    detail::normalize(u);
  }
  return {std::move(u), std::move(v)};
}

inline double sigma_estimate(const Tensor& w, const PowerIterationState& s) {
  Eigen::Map<const Eigen::VectorXd> uv(s.u.data(), static_cast<Eigen::Index>(s.u.size()));
  Eigen::Map<const Eigen::VectorXd> vv(s.v.data(), static_cast<Eigen::Index>(s.v.size()));
  return uv.dot(w.map() * vv);
}

inline SpectralNormResult spectral_normalize(const Tensor& w, std::vector<double> u, std::size_t iters) {
  SpectralNormResult r;
  r.next = power_iterate(w, std::move(u), iters);
  r.sigma = sigma_estimate(w, r.next);
  if (!(std::abs(r.sigma) > 1e-12)) throw DegenerateWeightError("spectral_normalize: sigma ~ 0");
  r.weight = w;
  for (auto& x : r.weight.values()) x /= r.sigma;
  return r;
}

// Graph form: W / (u^T W v) with u, v held constant, so the gradient sees
// sigma as a function of W only.
inline Var spectral_normalize(Var w, const PowerIterationState& s) {
  Tensor outer(s.u.size(), s.v.size());
  for (std::size_t i = 0; i < s.u.size(); ++i)
    for (std::size_t j = 0; j < s.v.size(); ++j) outer(i, j) = s.u[i] * s.v[j];
  Var sigma = ops::sum(ops::mul(w, w.graph()->constant(std::move(outer), "sn_uv")));
  if (!(std::abs(sigma.item()) > 1e-12)) throw DegenerateWeightError("spectral_normalize: sigma ~ 0");
  return ops::div_scalar(w, sigma);
}

// Exact largest singular value, via the symmetric eigenproblem of W^T W.
inline double top_singular_value(const Tensor& w) {
  const Eigen::MatrixXd m = w.map();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

// Fraction of correctly classified sequences: teacher-forced ones need a
// positive score, free-running ones a negative score; zero is wrong for both.
inline double accuracy(std::span<const double> tf_scores, std::span<const double> fr_scores) {
  if (tf_scores.empty() || fr_scores.empty()) throw InputError("accuracy: each class needs a sequence");
  std::size_t correct = 0;
  for (double s : tf_scores) correct += s > 0.0;
  for (double s : fr_scores) correct += s < 0.0;
  return static_cast<double>(correct) / static_cast<double>(tf_scores.size() + fr_scores.size());
}

class Discriminator {
 public:
  static constexpr const char* kSnLayers[] = {"disc.in", "disc.attn.query", "disc.attn.key",
                                              "disc.attn.value", "disc.mid"};

  explicit Discriminator(DiscriminatorConfig cfg, std::uint64_t seed = 2) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, {0xD15C}));
    auto xavier = [&](std::size_t in, std::size_t out) {
      Tensor t(in, out);
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      for (auto& v : t.values()) v = uniform(rng, -a, a);
      return t;
    };
    const std::size_t H = cfg_.hidden_dim;
    for (const char* name : kSnLayers) {
      const std::size_t in = std::string(name) == "disc.in" ? cfg_.input_dim : H;
      params_.add(std::string(name) + ".w", xavier(in, H));
      params_.add(std::string(name) + ".b", Tensor(1, H));
      std::vector<double> u(in);
      for (auto& x : u) x = uniform(rng, -1.0, 1.0);
      detail::normalize(u);
      sn_.push_back(power_iterate(params_.at(std::string(name) + ".w").value, std::move(u), 1));
    }
    params_.add("disc.out.w", xavier(H, 1));
    params_.add("disc.out.b", Tensor(1, 1));
  }

  const DiscriminatorConfig& config() const noexcept { return cfg_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  const std::vector<PowerIterationState>& power_state() const noexcept { return sn_; }

  // Persistent power-iteration rounds on the current weights.
  void power_iterate_all(std::size_t rounds) {
    for (std::size_t i = 0; i < sn_.size(); ++i) {
      sn_[i] = power_iterate(params_.at(std::string(kSnLayers[i]) + ".w").value, std::move(sn_[i].u), rounds);
    }
  }

  // Current sigma estimate of SN layer i.
  double sigma(std::size_t i) const {
    return sigma_estimate(params_.at(std::string(kSnLayers[i]) + ".w").value, sn_[i]);
  }

  struct Bound {
    struct Linear {
      Var w, b;
    };
    Linear in, query, key, value, mid, out;
  };

  // Binds the weights into a graph. With `update_u` the persistent u/v
  // estimates advance by config().power_iterations rounds first. With
  // `trainable` false the weights enter as constants, so nothing flows into
  // the discriminator's gradients.
  Bound bind(Graph& g, bool update_u, bool trainable) {
    if (update_u) power_iterate_all(cfg_.power_iterations);
    auto leaf = [&](const std::string& name) {
      Param& p = params_.at(name);
      return trainable ? g.param(p) : g.constant(p.value, "disc_frozen");
    };
    Bound b;
    Bound::Linear* layers[] = {&b.in, &b.query, &b.key, &b.value, &b.mid};
    for (std::size_t i = 0; i < sn_.size(); ++i) {
      const std::string base = kSnLayers[i];
      layers[i]->w = spectral_normalize(leaf(base + ".w"), sn_[i]);
      layers[i]->b = leaf(base + ".b");
    }
    b.out = {leaf("disc.out.w"), leaf("disc.out.b")};
    return b;
  }

  // Causal scaled dot-product self-attention plus residual. Row t of the
  // result depends on rows 0..t of h only.
  Var masked_self_attention(const Bound& b, Var h, std::vector<Tensor>* weights = nullptr) const {
    using namespace ops;
    const std::size_t T = h.rows();
    if (T == 0) throw InputError("masked_self_attention: empty sequence");
    Var q = add(matmul(h, b.query.w), b.query.b);
    Var k = add(matmul(h, b.key.w), b.key.b);
    Var v = add(matmul(h, b.value.w), b.value.b);
    const std::size_t dh = cfg_.hidden_dim / cfg_.heads;
    const auto mask = causal_mask(T);
    std::vector<Var> heads;
    for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
      Var qh = cfg_.heads == 1 ? q : slice_cols(q, hd * dh, dh);
      Var kh = cfg_.heads == 1 ? k : slice_cols(k, hd * dh, dh);
      Var vh = cfg_.heads == 1 ? v : slice_cols(v, hd * dh, dh);
      Var scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
      Var a = softmax_rows(scores, &mask);
      if (weights) weights->push_back(a.value());
      heads.push_back(matmul(a, vh));
    }
    Var attended = cfg_.heads == 1 ? heads.front() : concat_cols(heads);
    return add(attended, h);
  }

  // Per-step features before the temporal pool (T x hidden).
  Var features(const Bound& b, Var behavior) const {
    using namespace ops;
    if (behavior.cols() != cfg_.input_dim) {
      throw ConfigError("discriminator: behavior dim " + std::to_string(behavior.cols()) +
                        " does not match input_dim " + std::to_string(cfg_.input_dim));
    }
    if (behavior.rows() == 0) throw InputError("discriminator: empty behavior sequence");
    Var x = leaky_relu(add(matmul(behavior, b.in.w), b.in.b), cfg_.leaky_slope);
    x = masked_self_attention(b, x);
    return leaky_relu(add(matmul(x, b.mid.w), b.mid.b), cfg_.leaky_slope);
  }

  Var score(const Bound& b, Var behavior) const {
    using namespace ops;
    return add(matmul(mean_rows(features(b, behavior)), b.out.w), b.out.b);
  }

  // Frozen-u, no-gradient score of one behavior sequence.
  double score(const Tensor& behavior) {
    Graph g(false);
    Bound b = bind(g, false, false);
    return score(b, g.constant(behavior)).item();
  }

 private:
  DiscriminatorConfig cfg_;
  ParamSet params_;
  std::vector<PowerIterationState> sn_;
};

}  // namespace pfgan::disc
