#include <gtest/gtest.h>

#include <cmath>

#include "pfgan/gantrain/gradcheck_suite.hpp"
#include "pfgan/generator.hpp"
#include "pfgan/synthtask.hpp"

using namespace pfgan;
using namespace pfgan::gen;

namespace {

GeneratorConfig small_config(double dropout = 0.5) {
  GeneratorConfig c;
  c.frame_dim = 6;
  c.embed_dim = 8;
  c.encoder_hidden = 6;
  c.prenet_dims = {8, 8};
  c.prenet_dropout = dropout;
  c.attn_rnn_hidden = 10;
  c.dec_rnn_hidden = 9;
  c.attention_dim = 7;
  return c;
}

struct Example {
  synth::SymbolSequence symbols;
  Tensor targets;
};

Example make_example(std::uint64_t seed, std::size_t n_symbols, std::size_t frame_dim) {
  synth::CorpusConfig cc;
  cc.frame_dim = static_cast<std::uint32_t>(frame_dim);
  cc.seed = seed;
  Rng rng(seed);
  Example e;
  for (std::size_t i = 0; i < n_symbols; ++i) e.symbols.push_back(static_cast<std::uint32_t>(uniform_int(rng, 0, 11)));
  e.targets = synth::render_target(e.symbols, cc);
  return e;
}

void expect_same_result(const DecodeResult& a, const DecodeResult& b) {
  EXPECT_EQ(a.predicted.value(), b.predicted.value());
  EXPECT_EQ(a.behavior.value(), b.behavior.value());
  EXPECT_EQ(a.alignment, b.alignment);
}

}  // namespace

TEST(GeneratorConfig, BehaviorDimAndValidation) {
  GeneratorConfig c;
  EXPECT_EQ(c.behavior_dim(), c.attn_rnn_hidden + c.dec_rnn_hidden);
  c.behavior_includes_output = true;
  EXPECT_EQ(c.behavior_dim(), c.attn_rnn_hidden + c.dec_rnn_hidden + c.frame_dim);
  c.attention_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.prenet_dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encode, SingleSymbolShapeWithDefaults) {
  Generator g(GeneratorConfig{});
  const Tensor m = g.encode({3});
  EXPECT_EQ(m.rows(), 1u);
  EXPECT_EQ(m.cols(), 64u);
}

TEST(Encode, DeterministicAndOrderSensitive) {
  Generator g(GeneratorConfig{}, 4);
  EXPECT_EQ(g.encode({1, 2, 3}), g.encode({1, 2, 3}));
  EXPECT_FALSE(g.encode({1, 2, 3}) == g.encode({2, 1, 3}));
}

TEST(Encode, OutOfVocabularyIsInputError) {
  Generator g(GeneratorConfig{});
  EXPECT_THROW(g.encode({1, 12}), InputError);
  EXPECT_THROW(g.encode({}), InputError);
}

TEST(Encode, BatchedMatchesSingle) {
  Generator g(small_config(), 3);
  const synth::SymbolSequence a{1, 2, 3, 4, 5}, b{6, 7}, c{8, 9, 10};
  Graph graph(false);
  auto bound = g.bind(graph);
  std::vector<const synth::SymbolSequence*> batch{&a, &b, &c};
  auto mem = g.encode(graph, bound, batch);
  for (std::size_t k = 0; k < batch.size(); ++k)
    EXPECT_LE(max_abs_diff(mem[k].values.value(), g.encode(*batch[k])), 1e-12);
}

TEST(DecodeStep, AlignmentRowsSumToOne) {
  Generator g(small_config(), 5);
  const auto ex = make_example(5, 6, 6);
  Graph graph(false);
  auto r = g.run(graph, ex.symbols, &ex.targets, DecodeMode::teacher_forcing(), ex.targets.rows(), {1, 2});
  ASSERT_EQ(r.alignment.rows(), ex.targets.rows());
  ASSERT_EQ(r.alignment.cols(), ex.symbols.size());
  for (std::size_t t = 0; t < r.alignment.rows(); ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < r.alignment.cols(); ++j) {
      EXPECT_GE(r.alignment(t, j), 0.0);
      s += r.alignment(t, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(DecodeStep, SingleKeyAttendsWithWeightOne) {
  Generator g(small_config(), 5);
  Graph graph(false);
  auto r = g.run(graph, {4}, nullptr, DecodeMode::free_running(), 5, {1, 2});
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(r.alignment(t, 0), 1.0);
}

TEST(DecodeStep, DimensionMismatchIsConfigError) {
  Generator g(small_config(0.0), 5);
  Graph graph(false);
  auto b = g.bind(graph);
  const synth::SymbolSequence s{1, 2};
  const synth::SymbolSequence* ptr = &s;
  auto mem = g.encode(graph, b, std::span<const synth::SymbolSequence* const>(&ptr, 1));
  DecoderState st{g.zero_state(graph, 1, 10), g.zero_state(graph, 1, 9), graph.constant(Tensor(1, 12))};
  EXPECT_THROW(g.decode_step(b, graph.constant(Tensor(1, 5)), st, mem, {}), ConfigError);
}

TEST(DecodeStep, BehaviorRowsAreConcatenatedHiddens) {
  // Without dropout the step can be replayed by hand.
  Generator g(small_config(0.0), 6);
  const auto ex = make_example(6, 4, 6);
  Graph graph(false);
  auto r = g.run(graph, ex.symbols, &ex.targets, DecodeMode::teacher_forcing(), ex.targets.rows(), {});
  const std::size_t A = 10, D = 9, T = ex.targets.rows();
  ASSERT_EQ(r.behavior.rows(), T);
  ASSERT_EQ(r.behavior.cols(), A + D);

  auto b = g.bind(graph);
  const synth::SymbolSequence* ptr = &ex.symbols;
  auto mem = g.encode(graph, b, std::span<const synth::SymbolSequence* const>(&ptr, 1));
  DecoderState st{g.zero_state(graph, 1, A), g.zero_state(graph, 1, D), graph.constant(Tensor(1, 12))};
  Var prev = graph.constant(Tensor(1, 6));
  for (std::size_t t = 0; t < T; ++t) {
    auto step = g.decode_step(b, prev, st, mem, {});
    for (std::size_t c = 0; c < A; ++c) EXPECT_EQ(r.behavior.value()(t, c), step.attn_hidden.value()[c]);
    for (std::size_t c = 0; c < D; ++c) EXPECT_EQ(r.behavior.value()(t, A + c), step.dec_hidden.value()[c]);
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(r.predicted.value()(t, c), step.frame.value()[c]);
    st = step.state;
    prev = graph.constant(ex.targets.row(t));
  }
}

TEST(Run, SameMasksSameOutputs) {
  Generator g(small_config(), 7);
  const auto ex = make_example(7, 5, 6);
  Graph graph(false);
  auto a = g.run(graph, ex.symbols, nullptr, DecodeMode::free_running(), 20, {11, 12});
  auto b = g.run(graph, ex.symbols, nullptr, DecodeMode::free_running(), 20, {11, 12});
  expect_same_result(a, b);
  auto c = g.run(graph, ex.symbols, nullptr, DecodeMode::free_running(), 20, {13, 12});
  EXPECT_FALSE(a.predicted.value() == c.predicted.value());
}

class ScheduledSamplingDegeneracy : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(ScheduledSamplingDegeneracy, PEqualsOneIsTeacherForcing) {
  Generator g(small_config(), GetParam());
  const auto ex = make_example(GetParam(), 5, 6);
  const DecodeNoise noise{GetParam() * 3 + 1, GetParam() * 7 + 2};
  Graph graph(false);
  auto tf = g.run(graph, ex.symbols, &ex.targets, DecodeMode::teacher_forcing(), ex.targets.rows(), noise);
  auto ss = g.run(graph, ex.symbols, &ex.targets, DecodeMode::scheduled_sampling(1.0), ex.targets.rows(), noise);
  expect_same_result(tf, ss);
  for (bool real : ss.fed_real) EXPECT_TRUE(real);
}

TEST_P(ScheduledSamplingDegeneracy, PEqualsZeroIsFreeRunning) {
  Generator g(small_config(), GetParam());
  const auto ex = make_example(GetParam(), 5, 6);
  const DecodeNoise noise{GetParam() * 3 + 1, GetParam() * 7 + 2};
  Graph graph(false);
  auto fr = g.run(graph, ex.symbols, nullptr, DecodeMode::free_running(), ex.targets.rows(), noise);
  auto ss = g.run(graph, ex.symbols, &ex.targets, DecodeMode::scheduled_sampling(0.0), ex.targets.rows(), noise);
  expect_same_result(fr, ss);
  for (std::size_t t = 1; t < ss.fed_real.size(); ++t) EXPECT_FALSE(ss.fed_real[t]);
}

INSTANTIATE_TEST_SUITE_P(Seeds, ScheduledSamplingDegeneracy, ::testing::Range<std::uint64_t>(1, 6));

TEST(Run, ScheduledSamplingMixesPerStep) {
  Generator g(small_config(), 8);
  const auto ex = make_example(8, 8, 6);
  Graph graph(false);
  auto ss = g.run(graph, ex.symbols, &ex.targets, DecodeMode::scheduled_sampling(0.5), ex.targets.rows(), {1, 99});
  std::size_t real = 0;
  for (std::size_t t = 1; t < ss.fed_real.size(); ++t) real += ss.fed_real[t];
  EXPECT_GT(real, 0u);
  EXPECT_LT(real, ss.fed_real.size() - 1);
}

TEST(Run, TeacherForcingOnOwnPredictionMatchesFreeRunning) {
  Generator g(small_config(), 9);
  const auto ex = make_example(9, 5, 6);
  const DecodeNoise noise{21, 22};
  Graph graph(false);
  auto fr = g.run(graph, ex.symbols, nullptr, DecodeMode::free_running(), ex.targets.rows(), noise);
  const Tensor own = fr.predicted.value();
  auto tf = g.run(graph, ex.symbols, &own, DecodeMode::teacher_forcing(), own.rows(), noise);
  EXPECT_EQ(tf.behavior.value(), fr.behavior.value());
  EXPECT_EQ(tf.predicted.value(), fr.predicted.value());
}

TEST(Run, InputErrors) {
  Generator g(small_config(), 1);
  Graph graph(false);
  const synth::SymbolSequence s{1, 2};
  EXPECT_THROW(g.run(graph, s, nullptr, DecodeMode::teacher_forcing(), 4, {}), InputError);
  EXPECT_THROW(g.run(graph, s, nullptr, DecodeMode::scheduled_sampling(0.5), 4, {}), InputError);
  EXPECT_THROW(g.run(graph, s, nullptr, DecodeMode::free_running(), 0, {}), InputError);
  const Tensor wrong(3, 6);
  EXPECT_THROW(g.run(graph, s, &wrong, DecodeMode::teacher_forcing(), 4, {}), InputError);
}

TEST(Run, BatchedMatchesSingle) {
  Generator g(small_config(), 10);
  std::vector<Example> ex{make_example(1, 3, 6), make_example(2, 7, 6), make_example(3, 5, 6)};
  std::vector<DecodeRequest> reqs;
  for (std::size_t k = 0; k < ex.size(); ++k)
    reqs.push_back({&ex[k].symbols, &ex[k].targets, ex[k].targets.rows(), {k + 1, k + 100}});
  for (auto mode : {DecodeMode::teacher_forcing(), DecodeMode::free_running(), DecodeMode::scheduled_sampling(0.5)}) {
    Graph graph(false);
    auto batch = g.run_batch(graph, reqs, mode);
    for (std::size_t k = 0; k < ex.size(); ++k) {
      auto single = g.run(graph, ex[k].symbols, &ex[k].targets, mode, ex[k].targets.rows(), reqs[k].noise);
      EXPECT_LE(max_abs_diff(batch[k].predicted.value(), single.predicted.value()), 1e-12);
      EXPECT_LE(max_abs_diff(batch[k].behavior.value(), single.behavior.value()), 1e-12);
      EXPECT_EQ(batch[k].fed_real, single.fed_real);
    }
  }
}

TEST(Run, TeacherForcingLocality) {
  // The prediction at step t only sees targets before t.
  Generator g(small_config(), 11);
  const auto ex = make_example(11, 6, 6);
  const std::size_t T = ex.targets.rows();
  Graph graph(false);
  auto base = g.run(graph, ex.symbols, &ex.targets, DecodeMode::teacher_forcing(), T, {5, 6});
  std::size_t moved = 0;
  for (std::size_t j = 0; j < T; ++j) {
    Tensor y = ex.targets;
    for (std::size_t f = 0; f < 6; ++f) y(j, f) += 0.37;
    auto r = g.run(graph, ex.symbols, &y, DecodeMode::teacher_forcing(), T, {5, 6});
    for (std::size_t t = 0; t <= j; ++t)
      for (std::size_t f = 0; f < 6; ++f) ASSERT_EQ(r.predicted.value()(t, f), base.predicted.value()(t, f));
    if (j + 1 < T) {
      double d = 0.0;
      for (std::size_t f = 0; f < 6; ++f) d += std::abs(r.predicted.value()(j + 1, f) - base.predicted.value()(j + 1, f));
      moved += d > 0.0;
    }
  }
  // A dropped or inactive prenet unit can hide a single perturbation.
  EXPECT_GE(moved, (T - 1) * 3 / 4);
}

TEST(Run, FreeRunningPerturbationPropagatesAndCompounds) {
  // Perturbing the output projection moves every free-running frame; the
  // feedback loop makes the deviation grow along the sequence.
  int growing = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Generator g(small_config(), seed);
    const auto ex = make_example(seed, 6, 6);
    const std::size_t T = ex.targets.rows();
    Graph graph(false);
    auto base = g.run(graph, ex.symbols, nullptr, DecodeMode::free_running(), T, {seed, 1});
    for (auto& v : g.params().at("gen.proj.w").value.values()) v *= 1.01;
    Graph fresh(false);
    auto moved = g.run(fresh, ex.symbols, nullptr, DecodeMode::free_running(), T, {seed, 1});
    std::vector<double> dev(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < 6; ++f) dev[t] += std::pow(moved.predicted.value()(t, f) - base.predicted.value()(t, f), 2);
      dev[t] = std::sqrt(dev[t]);
      EXPECT_GT(dev[t], 0.0) << "seed " << seed << " t " << t;
    }
    double mt = 0.0, md = 0.0, cov = 0.0, var = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      mt += static_cast<double>(t) / T;
      md += dev[t] / T;
    }
    for (std::size_t t = 0; t < T; ++t) {
      cov += (t - mt) * (dev[t] - md);
      var += (t - mt) * (t - mt);
    }
    growing += cov / var >= 0.0;
  }
  EXPECT_GE(growing, 7);
}

TEST(Run, GradientsFlowThroughFreeRunningFeedback) {
  Generator g(small_config(), 12);
  const auto ex = make_example(12, 4, 6);
  auto grads = [&](bool detach) {
    g.params().zero_grad();
    Graph graph;
    auto r = g.run(graph, ex.symbols, nullptr, DecodeMode::free_running(), ex.targets.rows(), {3, 4}, {detach});
    Var l = ops::mse(r.predicted, graph.constant(ex.targets));
    graph.backward(l);
    Tensor out = g.params().at("gen.proj.w").grad;
    g.params().zero_grad();
    return out;
  };
  const Tensor full = grads(false), cut = grads(true);
  EXPECT_GT(max_abs_diff(full, cut), 1e-9);
}

TEST(SsProbability, LinearDecay) {
  SsSchedule s{1.0, 0.5, 50'000};
  EXPECT_EQ(ss_probability(s, 0), 1.0);
  EXPECT_EQ(ss_probability(s, 50'000), 0.5);
  EXPECT_EQ(ss_probability(s, 80'000), 0.5);
  EXPECT_DOUBLE_EQ(ss_probability(s, 25'000), 0.75);
  EXPECT_THROW((SsSchedule{0.4, 0.5, 10}.validate()), ConfigError);
}

TEST(Gradients, LstmCellTeacherForcedLoss) {
  train::GradCheckProblem p(3, CellType::Lstm);
  auto rep = grad_check_report([&](Graph& g) { return p.l_t(g); }, p.generator.params(), 1e-5, 1e-6);
  EXPECT_LE(rep.max_relative_error, 1e-4) << rep.worst_param << "[" << rep.worst_index << "]";
}
