#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace pfgan;
using namespace pfgan::eval;
using pfgan::testing::scratch_dir;
using pfgan::testing::slurp;

namespace {

Tensor one_hot_rows(const std::vector<std::size_t>& focus_at, std::size_t S) {
  Tensor a(focus_at.size(), S);
  for (std::size_t t = 0; t < focus_at.size(); ++t) a(t, focus_at[t]) = 1.0;
  return a;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kTinyModel{"--embed-dim", "4", "--encoder-hidden", "4", "--prenet", "5,4",
                                          "--attn-rnn-hidden", "6", "--dec-rnn-hidden", "6", "--attention-dim", "5"};

std::vector<std::string> with_model(std::vector<std::string> args) {
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  return args;
}

}  // namespace

TEST(AlignmentDiagnostics, DiagonalIsClean) {
  const auto d = alignment_diagnostics(one_hot_rows({0, 1, 2, 3, 4}, 5));
  EXPECT_EQ(d.violations, 0u);
  EXPECT_EQ(d.entropy_mean, 0.0);
  EXPECT_EQ(d.final_focus, 4u);
  EXPECT_FALSE(d.garbled);
}

TEST(AlignmentDiagnostics, UniformRowsHaveLogEntropy) {
  Tensor a(6, 4, 0.25);
  const auto d = alignment_diagnostics(a);
  EXPECT_NEAR(d.entropy_mean, std::log(4.0), 1e-12);
  EXPECT_NEAR(d.entropy_mean, 1.3863, 1e-4);
  EXPECT_EQ(d.final_focus, 0u);
}

TEST(AlignmentDiagnostics, StuckAtStartIsGarbled) {
  const auto d = alignment_diagnostics(one_hot_rows(std::vector<std::size_t>(12, 0), 10));
  EXPECT_EQ(d.final_focus, 0u);
  EXPECT_EQ(d.violations, 0u);
  EXPECT_TRUE(d.garbled);
}

TEST(AlignmentDiagnostics, RegressionsBeyondWindowCount) {
  // 5 -> 3 stays inside the window of 2; 6 -> 1 and 7 -> 2 do not.
  const auto d = alignment_diagnostics(one_hot_rows({0, 5, 3, 6, 1, 7, 2, 9}, 10));
  EXPECT_EQ(d.violations, 2u);
  EXPECT_TRUE(d.garbled);  // 2 > 0.1 * 8
  EXPECT_FALSE(alignment_diagnostics(one_hot_rows({0, 5, 3, 6, 9}, 10)).garbled);
}

TEST(AlignmentDiagnostics, TiesGoToSmallestIndex) {
  Tensor a(1, 3);
  a(0, 1) = a(0, 2) = 0.5;
  EXPECT_EQ(focus(a, 0), 1u);
}

TEST(AlignmentDiagnostics, GarbleIsMonotoneInViolations) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = static_cast<std::size_t>(uniform_int(rng, 5, 30)), S = 10;
    std::vector<std::size_t> f(T);
    for (std::size_t t = 0; t < T; ++t) f[t] = std::min(S - 1, t * S / T);
    bool was = alignment_diagnostics(one_hot_rows(f, S)).garbled;
    std::size_t prev_v = 0;
    for (int k = 0; k < 6; ++k) {
      // Insert a backwards jump to 0 somewhere before the final step.
      const std::size_t pos = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(T) - 2));
      if (f[pos - 1] < 3) continue;
      f[pos] = 0;
      const auto d = alignment_diagnostics(one_hot_rows(f, S));
      EXPECT_GE(d.violations, prev_v);
      if (was) {
        EXPECT_TRUE(d.garbled);
      }
      was = d.garbled;
      prev_v = d.violations;
    }
    for (std::size_t v = 0; v < T; ++v)
      if (is_garbled(v, T, S - 1, S)) {
        EXPECT_TRUE(is_garbled(v + 1, T, S - 1, S));
      }
  }
}

TEST(AlignmentDiagnostics, EmptyIsInputError) {
  EXPECT_THROW(alignment_diagnostics(Tensor()), InputError);
}

TEST(EvalModel, OracleScoresPerfectly) {
  const auto c = synth::build_corpus(synth::CorpusConfig{}, 4, 2, 9, 2);
  OracleModel m(16);
  const auto rep = eval_model(m, c.eval);
  EXPECT_EQ(rep.mean_tf_mse, 0.0);
  EXPECT_EQ(rep.mean_fr_mse, 0.0);
  EXPECT_EQ(rep.garble_rate, 0.0);
  std::size_t max_T = 0;
  for (const auto& u : c.eval) max_T = std::max(max_T, u.length());
  EXPECT_EQ(rep.curve.size(), max_T);
  EXPECT_EQ(rep.curve_count.front(), c.eval.size());
  for (std::size_t i = 1; i < rep.utterances.size(); ++i) EXPECT_LT(rep.utterances[i - 1].id, rep.utterances[i].id);
}

TEST(EvalModel, FrameDimMismatchIsConfigError) {
  const auto c = synth::build_corpus(synth::CorpusConfig{}, 2, 1, 1, 2);
  OracleModel m(3);
  EXPECT_THROW(eval_model(m, c.eval), ConfigError);
}

TEST(EvalModel, GarbleRateCountsFlags) {
  EvalReport rep;
  OracleModel m(3);
  const auto c = synth::build_corpus(pfgan::testing::tiny_corpus_config(), 2, 1, 5, 2);
  EvalConfig cfg;
  cfg.progress_fraction = 1.0;  // the oracle's last focus is S-1 < S, so every utterance is flagged
  rep = eval_model(m, c.eval, cfg);
  EXPECT_EQ(rep.garble_rate, 1.0);
}

TEST(EvalModel, GeneratorReportIsDeterministicAndConsistent) {
  const auto c = synth::build_corpus(pfgan::testing::tiny_corpus_config(), 2, 1, 6, 2);
  gen::Generator g(train::small_generator_config(), 3);
  auto csvs = [&] {
    GeneratorModel m(g, 7);
    EvalConfig cfg;
    cfg.batch_size = 4;
    const auto rep = eval_model(m, c.eval, cfg);
    std::ostringstream a, b;
    write_utterance_csv(a, rep);
    write_curve_csv(b, rep);
    return std::pair{a.str(), b.str()};
  };
  const auto first = csvs();
  EXPECT_EQ(first, csvs());
  EXPECT_EQ(first.first.substr(0, first.first.find('\n')),
            "id,n_symbols,T,tf_mse,fr_mse,monotonicity_violations,attention_entropy,garbled");
  EXPECT_EQ(first.second.substr(0, first.second.find('\n')), "position,mean_fr_abs_error,count");

  GeneratorModel m(g, 7);
  const auto rep = eval_model(m, c.eval);
  double mean = 0.0;
  std::size_t garbled = 0;
  for (const auto& e : rep.utterances) {
    mean += e.fr_mse;
    garbled += e.alignment.garbled;
    EXPECT_GE(e.fr_mse, 0.0);
    EXPECT_GE(e.alignment.entropy_mean, 0.0);
  }
  EXPECT_NEAR(rep.mean_fr_mse, mean / static_cast<double>(rep.utterances.size()), 1e-15);
  EXPECT_EQ(rep.garble_rate, static_cast<double>(garbled) / static_cast<double>(rep.utterances.size()));
}

TEST(EvalModel, BatchSizeDoesNotChangeResults) {
  const auto c = synth::build_corpus(pfgan::testing::tiny_corpus_config(), 2, 1, 7, 2);
  gen::Generator g(train::small_generator_config(), 4);
  auto csv = [&](std::size_t bs) {
    GeneratorModel m(g, 7);
    EvalConfig cfg;
    cfg.batch_size = bs;
    std::ostringstream os;
    write_utterance_csv(os, eval_model(m, c.eval, cfg));
    return os.str();
  };
  EXPECT_EQ(csv(1), csv(16));
}

TEST(Pgm, PixelValues) {
  EXPECT_EQ(to_pixel(1.0), 255);
  EXPECT_EQ(to_pixel(0.5), 128);
  EXPECT_EQ(to_pixel(-0.3), 0);
  EXPECT_EQ(to_pixel(7.0), 255);
  const auto dir = scratch_dir("pgm");
  emit_spectrogram_pgm(Tensor(1, 1, 1.0), dir / "one.pgm");
  const auto img = read_pgm(dir / "one.pgm");
  ASSERT_EQ(img.pixels.size(), 1u);
  EXPECT_EQ(img.pixels[0], 255);
}

TEST(Pgm, FileSizeAndOrientation) {
  const auto dir = scratch_dir("pgm_size");
  Tensor frames(7, 5);
  frames(2, 0) = 1.0;
  emit_spectrogram_pgm(frames, dir / "f.pgm");
  const std::string header = "P5\n7 5\n255\n";
  const auto bytes = slurp(dir / "f.pgm");
  EXPECT_EQ(bytes.size(), header.size() + 7 * 5);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  const auto img = read_pgm(dir / "f.pgm");
  EXPECT_EQ(img.at(2, 4), 255);  // channel 0 on the bottom row
  EXPECT_EQ(img.at(2, 0), 0);
}

TEST(Pgm, RoundTripRecoversQuantizedValues) {
  Rng rng(8);
  Tensor a(11, 6);
  for (auto& v : a.values()) v = uniform(rng, -0.2, 1.2);
  const auto dir = scratch_dir("pgm_rt");
  emit_alignment_pgm(a, dir / "a.pgm");
  const auto img = read_pgm(dir / "a.pgm");
  ASSERT_EQ(img.width, 11u);
  ASSERT_EQ(img.height, 6u);
  for (std::size_t t = 0; t < 11; ++t)
    for (std::size_t s = 0; s < 6; ++s) EXPECT_EQ(img.at(t, 5 - s), to_pixel(a(t, s)));
}

TEST(Pgm, UnwritablePathIsIoError) {
  const auto dir = scratch_dir("pgm_bad");
  std::ofstream(dir / "blocker") << "x";
  EXPECT_THROW(emit_spectrogram_pgm(Tensor(2, 2), dir / "blocker" / "x.pgm"), IoError);
}

TEST(ConfigFile, Parsing) {
  std::istringstream is("# comment\n alpha = 0.002  # trailing\n\n--steps=40\nmode=tf\n");
  const auto m = cli::parse_config(is);
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.at("alpha"), "0.002");
  EXPECT_EQ(m.at("steps"), "40");
  EXPECT_EQ(m.at("mode"), "tf");
  std::istringstream bad("alpha 0.1\n");
  EXPECT_THROW(cli::parse_config(bad), ConfigError);
  EXPECT_THROW(cli::load_config("/nonexistent/pfgan.cfg"), IoError);
}

TEST(Cli, GradcheckSucceeds) {
  const auto r = run_cli({"gradcheck", "--seeds", "1"});
  EXPECT_EQ(r.code, 0) << r.err;
  for (const char* loss : {"L_T", "L_D", "L_G"}) EXPECT_NE(r.out.find(loss), std::string::npos);
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  const auto bad_mode = run_cli({"train", "--mode", "gan", "--data", "d", "--init", "i", "--out", "o"});
  EXPECT_EQ(bad_mode.code, 1);
  EXPECT_NE(bad_mode.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, MissingFilesAreIoErrors) {
  const auto r = run_cli({"pretrain", "--data", "/nonexistent/train.pfd", "--out", "/tmp/x.ckpt"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("/nonexistent/train.pfd"), std::string::npos);
}

TEST(Cli, EndToEndAndMismatchedCheckpoint) {
  const auto dir = scratch_dir("cli_e2e");
  const auto data = (dir / "data").string();
  ASSERT_EQ(run_cli({"gen-data", "--out", data, "--vocab-size", "6", "--frame-dim", "3", "--n-train", "8",
                     "--n-dev", "2", "--n-eval", "3", "--max-length", "4"})
                .code,
            0);
  const auto ckpt = (dir / "p.ckpt").string();
  auto r = run_cli(with_model({"pretrain", "--data", data, "--out", ckpt, "--steps", "2", "--batch-size", "4",
                               "--metrics-csv", (dir / "p.csv").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "p.csv").substr(0, 4), "step");

  r = run_cli(with_model({"train", "--mode", "tf-gan", "--data", data, "--init", ckpt, "--out",
                          (dir / "g.ckpt").string(), "--steps", "2", "--batch-size", "4", "--probe-batches", "1",
                          "--disc-hidden", "6"}));
  ASSERT_EQ(r.code, 0) << r.err;

  r = run_cli(with_model({"eval", "--ckpt", (dir / "g.ckpt").string(), "--data", data, "--out-csv",
                          (dir / "e.csv").string(), "--curve-csv", (dir / "c.csv").string(), "--pgm-dir",
                          (dir / "pgm").string(), "--pgm-limit", "1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "pgm" / "eval-000000_align.pgm"));
  const auto first = slurp(dir / "e.csv");
  ASSERT_EQ(run_cli(with_model({"eval", "--ckpt", (dir / "g.ckpt").string(), "--data", data, "--out-csv",
                                (dir / "e2.csv").string()}))
                .code,
            0);
  EXPECT_EQ(first, slurp(dir / "e2.csv"));

  auto mismatched = with_model({"eval", "--ckpt", ckpt, "--data", data, "--out-csv", (dir / "m.csv").string()});
  *(std::find(mismatched.begin(), mismatched.end(), "--dec-rnn-hidden") + 1) = "7";
  r = run_cli(mismatched);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gen."), std::string::npos) << r.err;
}

TEST(Cli, ConfigFilePrecedence) {
  const auto dir = scratch_dir("cli_cfg");
  const auto data = (dir / "data").string();
  {
    std::ofstream cfg(dir / "gen.cfg");
    cfg << "n-train = 5\nn-dev = 1\nn-eval = 4\nvocab-size = 6\n";
  }
  ASSERT_EQ(run_cli({"gen-data", "--out", data, "--config", (dir / "gen.cfg").string(), "--n-eval", "2"}).code, 0);
  EXPECT_EQ(synth::read_split_file(dir / "data" / "train.pfd").utterances.size(), 5u);
  EXPECT_EQ(synth::read_split_file(dir / "data" / "eval.pfd").utterances.size(), 2u);
  EXPECT_EQ(synth::read_split_file(dir / "data" / "train.pfd").vocab_size, 6u);

  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "no-such-flag = 1\n";
  }
  EXPECT_EQ(run_cli({"gen-data", "--out", data, "--config", (dir / "bad.cfg").string()}).code, 1);
  EXPECT_EQ(run_cli({"gen-data", "--out", data, "--config", (dir / "missing.cfg").string()}).code, 3);
}
