#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pfgan/diffmath/random.hpp"
#include "pfgan/diffmath/tensor.hpp"

// Deterministic symbol -> frame-sequence corpus. Each symbol owns a spectral
// envelope and a fixed duration; frames relax towards the active envelope
// through a first-order recurrence, so every frame depends on its
// predecessor and feeding back wrong frames compounds.
namespace pfgan::synth {

using SymbolSequence = std::vector<std::uint32_t>;

struct CorpusConfig {
  std::uint32_t vocab_size = 12;
  std::uint32_t frame_dim = 16;
  std::uint32_t min_duration = 3;
  std::uint32_t max_duration = 6;
  double smoothing = 0.6;
  double noise = 0.01;
  std::uint32_t min_length = 4;
  std::uint32_t max_length = 12;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("corpus: vocab_size must be >= 2");
    if (frame_dim < 2) throw ConfigError("corpus: frame_dim must be >= 2");
    if (min_duration < 1 || max_duration < min_duration)
      throw ConfigError("corpus: need 1 <= min_duration <= max_duration");
    if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("corpus: smoothing must be in [0,1)");
    if (!(noise >= 0.0)) throw ConfigError("corpus: noise must be >= 0");
    if (min_length < 1 || max_length < min_length)
      throw ConfigError("corpus: need 1 <= min_length <= max_length");
  }
};

struct Utterance {
  std::string id;
  SymbolSequence symbols;
  Tensor frames;  // T x F, values in [0, 1]

  std::size_t length() const noexcept { return frames.rows(); }
};

// Per-symbol envelope: a Gaussian bump over channels with seeded center and
// width, peak 1.
inline std::vector<double> envelope(std::uint32_t symbol, const CorpusConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, {1, symbol}));
  const double center = uniform(rng, 0.0, static_cast<double>(cfg.frame_dim - 1));
  const double width = uniform(rng, 1.0, std::max(1.5, cfg.frame_dim / 4.0));
  std::vector<double> e(cfg.frame_dim);
  for (std::uint32_t f = 0; f < cfg.frame_dim; ++f) {
    const double d = (static_cast<double>(f) - center) / width;
    e[f] = std::exp(-0.5 * d * d);
  }
  return e;
}

inline std::uint32_t duration(std::uint32_t symbol, const CorpusConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, {2, symbol}));
  return static_cast<std::uint32_t>(uniform_int(rng, cfg.min_duration, cfg.max_duration));
}

inline std::size_t target_length(const SymbolSequence& symbols, const CorpusConfig& cfg) {
  std::size_t t = 0;
  for (auto s : symbols) t += duration(s, cfg);
  return t;
}

inline void check_symbols(const SymbolSequence& symbols, std::uint32_t vocab_size) {
  for (auto s : symbols) {
    if (s >= vocab_size) {
      throw InputError("symbol " + std::to_string(s) + " outside vocabulary of size " +
                       std::to_string(vocab_size));
    }
  }
}

// One frame of the recurrence, clamped to [0, 1].
inline void render_step(const double* prev, const std::vector<double>& env, double smoothing,
                        const double* noise, double* out) {
  for (std::size_t f = 0; f < env.size(); ++f) {
    double v = smoothing * prev[f] + (1.0 - smoothing) * env[f];
    if (noise) v += noise[f];
    out[f] = std::clamp(v, 0.0, 1.0);
  }
}

inline Tensor render_target(const SymbolSequence& symbols, const CorpusConfig& cfg) {
  check_symbols(symbols, cfg.vocab_size);
  if (symbols.empty()) throw InputError("render_target: empty symbol sequence");
  std::uint64_t h = symbols.size();
  for (auto s : symbols) h = mix64(h ^ s);
  Rng rng(derive_seed(cfg.seed, {3, h}));

  const std::size_t F = cfg.frame_dim;
  Tensor frames(target_length(symbols, cfg), F);
  std::vector<double> prev(F, 0.0), noise(F, 0.0);
  std::size_t t = 0;
  for (auto s : symbols) {
    const auto env = envelope(s, cfg);
    const auto d = duration(s, cfg);
    for (std::uint32_t k = 0; k < d; ++k, ++t) {
      for (auto& n : noise) n = cfg.noise > 0.0 ? uniform(rng, -cfg.noise, cfg.noise) : 0.0;
      render_step(prev.data(), env, cfg.smoothing, noise.data(), frames.row_ptr(t));
      std::copy(frames.row_ptr(t), frames.row_ptr(t) + F, prev.begin());
    }
  }
  return frames;
}

// Rounds to the 9 significant digits the corpus file stores.
inline double quantize(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

struct Corpus {
  CorpusConfig config;
  std::vector<Utterance> train;
  std::vector<Utterance> dev;   // training-length utterances ("common" split)
  std::vector<Utterance> eval;  // long utterances with held-out bigrams ("pathological" split)
};

// Symbol pairs never produced inside train/dev utterances.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> held_out_bigrams(const CorpusConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, {5}));
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  const std::size_t want = std::max<std::size_t>(1, cfg.vocab_size / 2);
  while (out.size() < want) {
    const auto a = static_cast<std::uint32_t>(uniform_int(rng, 0, cfg.vocab_size - 1));
    const auto b = static_cast<std::uint32_t>(uniform_int(rng, 0, cfg.vocab_size - 1));
    if (a == b) continue;
    if (std::find(out.begin(), out.end(), std::pair{a, b}) == out.end()) out.emplace_back(a, b);
  }
  return out;
}

namespace detail {

inline Utterance make_utterance(std::string id, const CorpusConfig& cfg, std::uint32_t min_len,
                                std::uint32_t max_len, bool pathological) {
  Rng rng(derive_seed(cfg.seed, {4, hash_string(id)}));
  const auto held = held_out_bigrams(cfg);
  auto is_held = [&](std::uint32_t a, std::uint32_t b) {
    return std::find(held.begin(), held.end(), std::pair{a, b}) != held.end();
  };
  const auto len = static_cast<std::size_t>(uniform_int(rng, min_len, max_len));
  SymbolSequence sym;
  sym.reserve(len);
  while (sym.size() < len) {
    const auto s = static_cast<std::uint32_t>(uniform_int(rng, 0, cfg.vocab_size - 1));
    if (!pathological && !sym.empty() && is_held(sym.back(), s)) continue;
    sym.push_back(s);
  }
  if (pathological && len >= 2) {
    const auto& [a, b] = held[static_cast<std::size_t>(uniform_int(rng, 0, held.size() - 1))];
    const auto pos = static_cast<std::size_t>(uniform_int(rng, 0, len - 2));
    sym[pos] = a;
    sym[pos + 1] = b;
  }
  Utterance u{std::move(id), std::move(sym), {}};
  u.frames = render_target(u.symbols, cfg);
  for (auto& v : u.frames.values()) v = quantize(v);
  return u;
}

inline std::string make_id(const char* split, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%06zu", split, i);
  return buf;
}

}  // namespace detail

// Builds the three splits in memory. Frame values are already quantized to
// the file precision, so the result equals what read_split() returns.
inline Corpus build_corpus(const CorpusConfig& cfg, std::size_t n_train, std::size_t n_dev,
                           std::size_t n_eval, std::uint32_t eval_length_multiplier) {
  cfg.validate();
  if (n_train < 1 || n_dev < 1 || n_eval < 1) throw ConfigError("corpus: split sizes must be >= 1");
  if (eval_length_multiplier < 1) throw ConfigError("corpus: eval_length_multiplier must be >= 1");
  Corpus c{cfg, {}, {}, {}};
  for (std::size_t i = 0; i < n_train; ++i)
    c.train.push_back(detail::make_utterance(detail::make_id("train", i), cfg, cfg.min_length,
                                             cfg.max_length, false));
  for (std::size_t i = 0; i < n_dev; ++i)
    c.dev.push_back(detail::make_utterance(detail::make_id("dev", i), cfg, cfg.min_length,
                                           cfg.max_length, false));
  for (std::size_t i = 0; i < n_eval; ++i)
    c.eval.push_back(detail::make_utterance(detail::make_id("eval", i), cfg,
                                            cfg.min_length * eval_length_multiplier,
                                            cfg.max_length * eval_length_multiplier, true));
  return c;
}

// ---- corpus file format -------------------------------------------------
//
//   PFDATA 1
//   <K> <F>
//   then per utterance: <id> / <symbols...> / <T> / T lines of F reals (%.9g)

inline void write_split(std::ostream& os, const std::vector<Utterance>& utts, std::uint32_t vocab_size,
                        std::uint32_t frame_dim) {
  os << "PFDATA 1\n" << vocab_size << ' ' << frame_dim << '\n';
  char buf[32];
  for (const auto& u : utts) {
    if (u.frames.cols() != frame_dim) throw InputError("utterance " + u.id + ": frame_dim mismatch");
    os << u.id << '\n';
    for (std::size_t i = 0; i < u.symbols.size(); ++i) os << (i ? " " : "") << u.symbols[i];
    os << '\n' << u.frames.rows() << '\n';
    for (std::size_t t = 0; t < u.frames.rows(); ++t) {
      for (std::size_t f = 0; f < frame_dim; ++f) {
        std::snprintf(buf, sizeof buf, "%.9g", u.frames(t, f));
        if (f) os << ' ';
        os << buf;
      }
      os << '\n';
    }
  }
}

struct Split {
  std::uint32_t vocab_size = 0;
  std::uint32_t frame_dim = 0;
  std::vector<Utterance> utterances;
};

inline Split read_split(std::istream& is, const std::string& source = "<stream>") {
  auto fail = [&](const std::string& why) { throw IoError(source + ": " + why); };
  std::string line;
  if (!std::getline(is, line) || line != "PFDATA 1") fail("missing 'PFDATA 1' header");
  Split s;
  if (!std::getline(is, line)) fail("missing vocabulary/frame-dim line");
  {
    std::istringstream hs(line);
    if (!(hs >> s.vocab_size >> s.frame_dim) || s.frame_dim == 0) fail("bad header line: " + line);
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Utterance u;
    u.id = line;
    if (!std::getline(is, line)) fail("utterance " + u.id + ": missing symbols");
    {
      std::istringstream ss(line);
      std::uint32_t v;
      while (ss >> v) u.symbols.push_back(v);
      if (u.symbols.empty()) fail("utterance " + u.id + ": empty symbol list");
    }
    check_symbols(u.symbols, s.vocab_size);
    std::size_t T = 0;
    if (!std::getline(is, line)) fail("utterance " + u.id + ": missing frame count");
    try {
      T = std::stoul(line);
    } catch (const std::exception&) {
      fail("utterance " + u.id + ": bad frame count");
    }
    if (T == 0) fail("utterance " + u.id + ": zero frames");
    u.frames = Tensor(T, s.frame_dim);
    for (std::size_t t = 0; t < T; ++t) {
      if (!std::getline(is, line)) fail("utterance " + u.id + ": truncated frames");
      const char* p = line.c_str();
      for (std::size_t f = 0; f < s.frame_dim; ++f) {
        char* end = nullptr;
        const double v = std::strtod(p, &end);
        if (end == p) fail("utterance " + u.id + ": bad frame value at t=" + std::to_string(t));
        u.frames(t, f) = v;
        p = end;
      }
    }
    s.utterances.push_back(std::move(u));
  }
  return s;
}

inline void write_split_file(const std::filesystem::path& path, const std::vector<Utterance>& utts,
                             std::uint32_t vocab_size, std::uint32_t frame_dim) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_split(os, utts, vocab_size, frame_dim);
  if (!os) throw IoError("write failed: " + path.string());
}

inline Split read_split_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_split(is, path.string());
}

// Builds the corpus and writes train.pfd, dev.pfd and eval.pfd into out_dir.
inline Corpus make_corpus(const CorpusConfig& cfg, std::size_t n_train, std::size_t n_dev,
                          std::size_t n_eval, std::uint32_t eval_length_multiplier,
                          const std::filesystem::path& out_dir) {
  Corpus c = build_corpus(cfg, n_train, n_dev, n_eval, eval_length_multiplier);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_split_file(out_dir / "train.pfd", c.train, cfg.vocab_size, cfg.frame_dim);
  write_split_file(out_dir / "dev.pfd", c.dev, cfg.vocab_size, cfg.frame_dim);
  write_split_file(out_dir / "eval.pfd", c.eval, cfg.vocab_size, cfg.frame_dim);
  return c;
}

}  // namespace pfgan::synth
