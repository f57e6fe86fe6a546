#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "pfgan/pfgan.hpp"

namespace pfgan::testing {

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pfgan_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Short utterances over the small generator's vocabulary and frame size.
inline synth::CorpusConfig tiny_corpus_config() {
  synth::CorpusConfig c;
  c.vocab_size = 6;
  c.frame_dim = 3;
  c.min_duration = 2;
  c.max_duration = 3;
  c.min_length = 2;
  c.max_length = 3;
  return c;
}

inline train::TrainConfig tiny_train_config() {
  train::TrainConfig c;
  c.pretrain_steps = 3;
  c.gan_steps = 6;
  c.batch_size = 4;
  c.probe_period = 2;
  c.probe_batches = 1;
  c.lr_g = {1e-3, 1e-5, 10};
  c.lr_d = {1e-3, 1e-5, 10};
  c.ss = {1.0, 0.5, 10};
  c.disc = train::small_discriminator_config(train::small_generator_config());
  return c;
}

}  // namespace pfgan::testing
