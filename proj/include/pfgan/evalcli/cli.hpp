#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pfgan/evalcli/config_file.hpp"
#include "pfgan/evalcli/eval.hpp"
#include "pfgan/evalcli/pgm.hpp"
#include "pfgan/gantrain/gradcheck_suite.hpp"
#include "pfgan/gantrain/trainer.hpp"

namespace pfgan::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

namespace fs = std::filesystem;

struct ModelFlags {
  gen::GeneratorConfig gen;
  std::string cell = "gru";

  void add(CLI::App& app) {
    app.add_option("--embed-dim", gen.embed_dim, "symbol embedding width");
    app.add_option("--encoder-hidden", gen.encoder_hidden, "encoder units per direction");
    app.add_option("--prenet", gen.prenet_dims, "prenet layer widths")->delimiter(',');
    app.add_option("--prenet-dropout", gen.prenet_dropout, "prenet dropout rate (always on)");
    app.add_option("--attn-rnn-hidden", gen.attn_rnn_hidden, "attention RNN units");
    app.add_option("--dec-rnn-hidden", gen.dec_rnn_hidden, "decoder RNN units");
    app.add_option("--attention-dim", gen.attention_dim, "additive attention width");
    app.add_option("--cell", cell, "recurrent cell")->check(CLI::IsMember({"gru", "lstm"}));
  }

  gen::GeneratorConfig resolve(const synth::Split& data) const {
    gen::GeneratorConfig c = gen;
    c.vocab_size = data.vocab_size;
    c.frame_dim = data.frame_dim;
    c.cell = cell == "lstm" ? gen::CellType::Lstm : gen::CellType::Gru;
    c.validate();
    return c;
  }
};

inline synth::Split load_data(const fs::path& p, const char* default_split) {
  return synth::read_split_file(fs::is_directory(p) ? p / default_split : p);
}

// Fills options not given on the command line from the config file.
inline void apply_config(CLI::App& app, const ConfigMap& cfg) {
  for (const auto& [key, value] : cfg) {
    CLI::Option* opt = nullptr;
    try {
      opt = app.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw ConfigError("config: unknown key '" + key + "' for " + app.get_name());
    }
    if (opt->count() > 0 || key == "config") continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

inline int run_gen_data(const synth::CorpusConfig& cc, std::size_t n_train, std::size_t n_dev, std::size_t n_eval,
                        std::uint32_t mult, const fs::path& out, std::ostream& os) {
  auto c = synth::make_corpus(cc, n_train, n_dev, n_eval, mult, out);
  os << "wrote " << c.train.size() << " train, " << c.dev.size() << " dev, " << c.eval.size()
     << " eval utterances to " << out.string() << '\n';
  return kOk;
}

inline int run_gradcheck(std::size_t seeds, std::ostream& os) {
  train::GradCheckSuiteConfig cfg;
  cfg.seeds = seeds;
  auto cases = train::run_gradcheck_suite(cfg);
  double worst = 0.0;
  for (const char* loss : {"L_T", "L_D", "L_G"}) {
    double m = 0.0;
    for (const auto& c : cases)
      if (c.loss == loss) m = std::max(m, c.report.max_relative_error);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-4s max relative error %.3e over %zu seeds\n", loss, m, seeds);
    os << buf;
    worst = std::max(worst, m);
  }
  if (worst > cfg.tolerance) {
    os << "gradient check FAILED (tolerance " << cfg.tolerance << ")\n";
    return kNumeric;
  }
  os << "gradient check passed\n";
  return kOk;
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Adversarially regularized seq2seq training on a synthetic symbol-to-frame task"};
  app.require_subcommand(1);
  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key=value file; flags override it");
  };

  // gen-data
  synth::CorpusConfig corpus;
  std::size_t n_train = 2000, n_dev = 200, n_eval = 200;
  std::uint32_t mult = 2;
  std::string data_out;
  auto* gen_data = app.add_subcommand("gen-data", "write train/dev/eval splits");
  gen_data->add_option("--out", data_out, "output directory")->required();
  gen_data->add_option("--seed", corpus.seed);
  gen_data->add_option("--vocab-size", corpus.vocab_size);
  gen_data->add_option("--frame-dim", corpus.frame_dim);
  gen_data->add_option("--min-duration", corpus.min_duration);
  gen_data->add_option("--max-duration", corpus.max_duration);
  gen_data->add_option("--smoothing", corpus.smoothing);
  gen_data->add_option("--noise", corpus.noise);
  gen_data->add_option("--min-length", corpus.min_length);
  gen_data->add_option("--max-length", corpus.max_length);
  gen_data->add_option("--n-train", n_train);
  gen_data->add_option("--n-dev", n_dev);
  gen_data->add_option("--n-eval", n_eval);
  gen_data->add_option("--eval-length-multiplier", mult);
  add_config(gen_data);

  // pretrain / train
  train::TrainConfig tc = train::TrainConfig::desk_scale();
  ModelFlags model;
  std::string data_path, init_path, ckpt_out, metrics_out, mode = "tf-gan";
  std::uint64_t steps = tc.pretrain_steps;
  double lr_final = tc.lr_g.lr_final;
  std::uint64_t lr_decay = tc.lr_g.decay_steps;

  auto* pretrain = app.add_subcommand("pretrain", "teacher-forced pre-training");
  pretrain->add_option("--data", data_path, "split file or corpus directory")->required();
  pretrain->add_option("--out", ckpt_out, "checkpoint path")->required();
  pretrain->add_option("--steps", steps);
  pretrain->add_option("--seed", tc.seed);
  pretrain->add_option("--batch-size", tc.batch_size);
  pretrain->add_option("--lr-g", tc.lr_g.lr0);
  pretrain->add_option("--lr-final", lr_final);
  pretrain->add_option("--lr-decay-steps", lr_decay);
  pretrain->add_option("--grad-clip", tc.grad_clip);
  pretrain->add_option("--metrics-csv", metrics_out);
  model.add(*pretrain);
  add_config(pretrain);

  auto* train_cmd = app.add_subcommand("train", "second-phase training (tf, ss, tf-gan, ss-gan)");
  train_cmd->add_option("--mode", mode)->check(CLI::IsMember({"tf", "ss", "tf-gan", "ss-gan"}));
  train_cmd->add_option("--data", data_path, "split file or corpus directory")->required();
  train_cmd->add_option("--init", init_path, "pre-trained checkpoint")->required();
  train_cmd->add_option("--out", ckpt_out, "checkpoint path")->required();
  train_cmd->add_option("--steps", steps);
  train_cmd->add_option("--seed", tc.seed);
  train_cmd->add_option("--alpha", tc.alpha);
  train_cmd->add_option("--probe-period", tc.probe_period);
  train_cmd->add_option("--probe-batches", tc.probe_batches);
  train_cmd->add_option("--acc-low", tc.acc_low);
  train_cmd->add_option("--acc-high", tc.acc_high);
  train_cmd->add_option("--batch-size", tc.batch_size);
  train_cmd->add_option("--lr-g", tc.lr_g.lr0);
  train_cmd->add_option("--lr-d", tc.lr_d.lr0);
  train_cmd->add_option("--lr-final", lr_final);
  train_cmd->add_option("--lr-decay-steps", lr_decay);
  train_cmd->add_option("--ss-start", tc.ss.p_start);
  train_cmd->add_option("--ss-end", tc.ss.p_end);
  train_cmd->add_option("--ss-decay-steps", tc.ss.decay_steps);
  train_cmd->add_option("--disc-hidden", tc.disc.hidden_dim);
  train_cmd->add_option("--disc-heads", tc.disc.heads);
  train_cmd->add_option("--power-iterations", tc.disc.power_iterations);
  train_cmd->add_option("--grad-clip", tc.grad_clip);
  train_cmd->add_option("--metrics-csv", metrics_out);
  model.add(*train_cmd);
  add_config(train_cmd);

  // eval
  eval::EvalConfig ec;
  std::string eval_ckpt, eval_csv, curve_csv, pgm_dir;
  std::size_t pgm_limit = 8;
  auto* eval_cmd = app.add_subcommand("eval", "objective evaluation of a checkpoint");
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--data", data_path, "split file or corpus directory (eval.pfd)")->required();
  eval_cmd->add_option("--out-csv", eval_csv)->required();
  eval_cmd->add_option("--curve-csv", curve_csv);
  eval_cmd->add_option("--pgm-dir", pgm_dir);
  eval_cmd->add_option("--pgm-limit", pgm_limit, "utterances rendered to PGM");
  eval_cmd->add_option("--eval-seed", ec.eval_seed);
  eval_cmd->add_option("--regression-window", ec.regression_window);
  eval_cmd->add_option("--violation-fraction", ec.violation_fraction);
  eval_cmd->add_option("--progress-fraction", ec.progress_fraction);
  model.add(*eval_cmd);
  add_config(eval_cmd);

  std::size_t gc_seeds = 10;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of L_T, L_D and L_G");
  gradcheck->add_option("--seeds", gc_seeds);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    if (rc == 0) return kOk;
    err << app.help();
    return kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) apply_config(*sub, load_config(config_path));

    if (sub == gen_data) return run_gen_data(corpus, n_train, n_dev, n_eval, mult, data_out, out);
    if (sub == gradcheck) return run_gradcheck(gc_seeds, out);

    if (sub == pretrain || sub == train_cmd) {
      tc.lr_g.lr_final = tc.lr_d.lr_final = lr_final;
      tc.lr_g.decay_steps = tc.lr_d.decay_steps = lr_decay;
      tc.pretrain_steps = tc.gan_steps = steps;
      tc.mode = *train::parse_mode(mode);
      auto data = load_data(data_path, "train.pfd");
      gen::Generator g(model.resolve(data), tc.seed);
      train::RunArtifacts art{ckpt_out, metrics_out};
      train::Metrics m;
      if (sub == pretrain) {
        m = train::pretrain(tc, g, data.utterances, art);
      } else {
        auto init = train::load_checkpoint(init_path);
        m = train::train_gan(tc, g, data.utterances, init, art);
      }
      const auto& last = m.rows().empty() ? train::MetricsRow{} : m.rows().back();
      char buf[96];
      std::snprintf(buf, sizeof buf, "%zu steps, final L_T %.6g\n", m.rows().size(), last.l_t.value_or(0.0));
      out << buf;
      return kOk;
    }

    if (sub == eval_cmd) {
      auto data = load_data(data_path, "eval.pfd");
      gen::Generator g(model.resolve(data));
      train::assign_params(g.params(), train::load_checkpoint(eval_ckpt).params);
      eval::GeneratorModel gm(g, ec.eval_seed);
      auto rep = eval::eval_model(gm, data.utterances, ec);
      eval::save_csv(eval_csv, eval::write_utterance_csv, rep);
      if (!curve_csv.empty()) eval::save_csv(curve_csv, eval::write_curve_csv, rep);
      if (!pgm_dir.empty()) {
        std::vector<const synth::Utterance*> sorted;
        for (const auto& u : data.utterances) sorted.push_back(&u);
        std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
        sorted.resize(std::min(sorted.size(), pgm_limit));
        for (std::size_t b0 = 0; b0 < sorted.size(); b0 += ec.batch_size) {
          const std::size_t n = std::min(ec.batch_size, sorted.size() - b0);
          auto dec = gm.decode(std::span<const synth::Utterance* const>(sorted.data() + b0, n));
          for (std::size_t k = 0; k < n; ++k) {
            const fs::path base = fs::path(pgm_dir) / sorted[b0 + k]->id;
            eval::emit_spectrogram_pgm(sorted[b0 + k]->frames, base.string() + "_target.pgm");
            eval::emit_spectrogram_pgm(dec[k].fr, base.string() + "_fr.pgm");
            eval::emit_alignment_pgm(dec[k].alignment, base.string() + "_align.pgm");
          }
        }
      }
      char buf[160];
      std::snprintf(buf, sizeof buf, "%zu utterances: tf_mse %.6g fr_mse %.6g garble_rate %.4f\n",
                    rep.utterances.size(), rep.mean_tf_mse, rep.mean_fr_mse, rep.garble_rate);
      out << buf;
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

inline int cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args);
}

}  // namespace pfgan::cli
