#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfgan/diffmath/gradcheck.hpp"
#include "pfgan/discriminator.hpp"
#include "pfgan/gantrain/losses.hpp"
#include "pfgan/generator.hpp"

// Finite-difference checks of the three training losses on small models.
namespace pfgan::train {

struct GradCheckCase {
  std::string loss;  // "L_T", "L_D" or "L_G"
  std::uint64_t seed = 0;
  GradCheckReport report;
};

struct GradCheckSuiteConfig {
  std::size_t seeds = 10;
  double eps = 1e-5;
  double floor = 1e-6;  // denominator floor; central-difference roundoff is ~1e-11 here
  double tolerance = 1e-4;
  double alpha = 1.0;  // large enough that the adversarial term shows up in theta_g
};

inline gen::GeneratorConfig small_generator_config() {
  gen::GeneratorConfig c;
  c.vocab_size = 6;
  c.frame_dim = 3;
  c.embed_dim = 4;
  c.encoder_hidden = 4;
  c.prenet_dims = {5, 4};
  c.attn_rnn_hidden = 6;
  c.dec_rnn_hidden = 6;
  c.attention_dim = 5;
  return c;
}

inline disc::DiscriminatorConfig small_discriminator_config(const gen::GeneratorConfig& g) {
  disc::DiscriminatorConfig c;
  c.input_dim = g.behavior_dim();
  c.hidden_dim = 6;
  c.heads = 2;
  return c;
}

// A small random problem: two utterances (lengths 6 and 8) with random
// targets in [0,1] and jittered parameters.
struct GradCheckProblem {
  gen::Generator generator;
  disc::Discriminator discriminator;
  std::vector<synth::SymbolSequence> symbols;
  std::vector<Tensor> targets;
  std::vector<gen::DecodeRequest> tf, fr;

  explicit GradCheckProblem(std::uint64_t seed, gen::CellType cell = gen::CellType::Gru)
      : generator(with_cell(small_generator_config(), cell), derive_seed(seed, {11})),
        discriminator(small_discriminator_config(small_generator_config()), derive_seed(seed, {12})) {
    Rng rng(derive_seed(seed, {13}));
    const std::size_t lengths[] = {6, 8};
    const std::size_t F = generator.config().frame_dim;
    for (std::size_t L : lengths) {
      synth::SymbolSequence s(L / 3 + 1);
      for (auto& x : s) x = static_cast<std::uint32_t>(uniform_int(rng, 0, 5));
      symbols.push_back(std::move(s));
      Tensor t(L, F);
      for (auto& v : t.values()) v = uniform01(rng);
      targets.push_back(std::move(t));
    }
    for (std::size_t k = 0; k < symbols.size(); ++k) {
      tf.push_back({&symbols[k], &targets[k], targets[k].rows(), {derive_seed(seed, {14, k}), 0u}});
      fr.push_back({&symbols[k], nullptr, targets[k].rows(), {derive_seed(seed, {15, k}), 0u}});
    }
    // Move off the zero-bias initialization so no ReLU sits exactly on its kink.
    for (auto* ps : {&generator.params(), &discriminator.params()})
      for (auto& q : *ps)
        for (auto& v : q.value.values()) v += uniform(rng, -0.1, 0.1);
    discriminator.power_iterate_all(3);
  }

  Var l_t(Graph& g) {
    auto res = generator.run_batch(g, tf, gen::DecodeMode::teacher_forcing());
    std::vector<Var> ls;
    for (std::size_t k = 0; k < res.size(); ++k)
      ls.push_back(reconstruction_loss(res[k].predicted, g.constant(targets[k], "target")));
    return mean_of(ls);
  }

  // Behavior sequences enter as constants; u stays fixed between evaluations.
  Var l_d(Graph& g) {
    std::vector<Tensor> bt, bf;
    {
      Graph frozen(false);
      for (auto& r : generator.run_batch(frozen, tf, gen::DecodeMode::teacher_forcing()))
        bt.push_back(r.behavior.value());
      for (auto& r : generator.run_batch(frozen, fr, gen::DecodeMode::free_running()))
        bf.push_back(r.behavior.value());
    }
    auto b = discriminator.bind(g, false, true);
    std::vector<Var> st, sf;
    for (std::size_t k = 0; k < bt.size(); ++k) {
      st.push_back(discriminator.score(b, g.constant(bt[k])));
      sf.push_back(discriminator.score(b, g.constant(bf[k])));
    }
    return disc_loss(st, sf);
  }

  // Full L_G: gradients flow through the free-running feedback loop and the
  // spectrally normalized discriminator.
  Var l_g(Graph& g, double alpha) {
    auto rt = generator.run_batch(g, tf, gen::DecodeMode::teacher_forcing());
    auto rf = generator.run_batch(g, fr, gen::DecodeMode::free_running());
    auto b = discriminator.bind(g, false, true);
    std::vector<Var> ls, st, sf;
    for (std::size_t k = 0; k < rt.size(); ++k) {
      ls.push_back(reconstruction_loss(rt[k].predicted, g.constant(targets[k], "target")));
      st.push_back(discriminator.score(b, rt[k].behavior));
      sf.push_back(discriminator.score(b, rf[k].behavior));
    }
    return gen_loss(mean_of(ls), mean_of(st), mean_of(sf), alpha);
  }

 private:
  static gen::GeneratorConfig with_cell(gen::GeneratorConfig c, gen::CellType cell) {
    c.cell = cell;
    return c;
  }
};

inline std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteConfig& cfg = {}) {
  std::vector<GradCheckCase> out;
  for (std::uint64_t s = 0; s < cfg.seeds; ++s) {
    GradCheckProblem p(s);
    out.push_back({"L_T", s, grad_check_report([&](Graph& g) { return p.l_t(g); }, p.generator.params(), cfg.eps, cfg.floor)});
    out.push_back(
        {"L_D", s, grad_check_report([&](Graph& g) { return p.l_d(g); }, p.discriminator.params(), cfg.eps, cfg.floor)});
    std::vector<Param*> all;
    for (auto& q : p.generator.params()) all.push_back(&q);
    for (auto& q : p.discriminator.params()) all.push_back(&q);
    out.push_back({"L_G", s, grad_check_report([&](Graph& g) { return p.l_g(g, cfg.alpha); }, all, cfg.eps, cfg.floor)});
  }
  return out;
}

}  // namespace pfgan::train
