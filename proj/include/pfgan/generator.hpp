#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfgan/diffmath.hpp"
#include "pfgan/synthtask.hpp"

// Attention-based autoregressive encoder-decoder. The decoder has an
// attention RNN and a decoder RNN; their per-step hidden states, concatenated,
// form the behavior sequence the discriminator classifies.
namespace pfgan::gen {

using synth::SymbolSequence;

enum class CellType { Gru, Lstm };

struct GeneratorConfig {
  std::size_t vocab_size = 12;
  std::size_t frame_dim = 16;
  std::size_t embed_dim = 32;
  std::size_t encoder_hidden = 32;  // per direction
  std::vector<std::size_t> prenet_dims{32, 32};
  double prenet_dropout = 0.5;
  std::size_t attn_rnn_hidden = 64;
  std::size_t dec_rnn_hidden = 64;
  std::size_t attention_dim = 32;
  CellType cell = CellType::Gru;
  // Append the predicted frame to each behavior row.
  bool behavior_includes_output = false;

  std::size_t memory_dim() const noexcept { return 2 * encoder_hidden; }
  std::size_t behavior_dim() const noexcept {
    return attn_rnn_hidden + dec_rnn_hidden + (behavior_includes_output ? frame_dim : 0);
  }

  void validate() const {
    auto pos = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("generator: ") + name + " must be >= 1");
    };
    pos(vocab_size, "vocab_size");
    pos(frame_dim, "frame_dim");
    pos(embed_dim, "embed_dim");
    pos(encoder_hidden, "encoder_hidden");
    pos(attn_rnn_hidden, "attn_rnn_hidden");
    pos(dec_rnn_hidden, "dec_rnn_hidden");
    pos(attention_dim, "attention_dim");
    if (prenet_dims.empty()) throw ConfigError("generator: prenet needs at least one layer");
    for (auto d : prenet_dims) pos(d, "prenet layer width");
    if (!(prenet_dropout >= 0.0 && prenet_dropout < 1.0))
      throw ConfigError("generator: prenet_dropout must be in [0,1)");
  }
};

class DecodeMode {
 public:
  enum class Kind { TeacherForcing, FreeRunning, ScheduledSampling };

  static DecodeMode teacher_forcing() { return DecodeMode(Kind::TeacherForcing, 1.0); }
  static DecodeMode free_running() { return DecodeMode(Kind::FreeRunning, 0.0); }
  static DecodeMode scheduled_sampling(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("scheduled sampling probability must be in [0,1]");
    return DecodeMode(Kind::ScheduledSampling, p);
  }

  Kind kind() const noexcept { return kind_; }
  // Probability of feeding the real previous frame (scheduled sampling only).
  double p() const noexcept { return p_; }
  bool needs_targets() const noexcept { return kind_ != Kind::FreeRunning; }

 private:
  DecodeMode(Kind k, double p) : kind_(k), p_(p) {}
  Kind kind_;
  double p_;
};

// Seeds of the two random streams a decode consumes: prenet dropout masks and
// the scheduled-sampling coin. Kept separate so that changing the mode never
// shifts the dropout masks.
struct DecodeNoise {
  std::uint64_t dropout_seed = 0;
  std::uint64_t sampling_seed = 0;
};

struct DecodeRequest {
  const SymbolSequence* symbols = nullptr;
  const Tensor* targets = nullptr;  // T x F; required by teacher forcing and scheduled sampling
  std::size_t length = 0;           // frames to decode
  DecodeNoise noise;
};

struct DecodeResult {
  Var predicted;  // T x F
  Var behavior;   // T x behavior_dim
  Tensor alignment;  // T x S
  std::vector<bool> fed_real;  // step t consumed a real frame (the go-frame counts as real)
};

struct RunOptions {
  // Feed predictions back as constants; used to show that gradients
  // normally flow through the free-running loop.
  bool detach_feedback = false;
};

inline double ss_probability(double p_start, double p_end, std::uint64_t decay_steps,
                             std::uint64_t step) {
  if (decay_steps == 0) return p_end;
  const double p = p_start - (p_start - p_end) * static_cast<double>(step) /
                                 static_cast<double>(decay_steps);
  return std::max(p_end, p);
}

struct SsSchedule {
  double p_start = 1.0;
  double p_end = 0.5;
  std::uint64_t decay_steps = 50'000;

  void validate() const {
    if (!(0.0 <= p_end && p_end <= p_start && p_start <= 1.0))
      throw ConfigError("scheduled sampling: need 0 <= p_end <= p_start <= 1");
  }
};

inline double ss_probability(const SsSchedule& s, std::uint64_t step) {
  return ss_probability(s.p_start, s.p_end, s.decay_steps, step);
}

struct RecurrentState {
  Var h;
  Var c;  // LSTM cell state, unused for GRU
};

struct DecoderState {
  RecurrentState attn;
  RecurrentState dec;
  Var context;
};

// Encoder output for one sequence.
struct Memory {
  Var values;  // S x memory_dim
  Var keys;    // S x attention_dim, memory projected for additive attention
  std::size_t length = 0;
};

struct StepOutput {
  Var frame;
  Var attn_hidden;
  Var dec_hidden;
  std::vector<Tensor> align_rows;  // one 1 x S_b row per active sequence
  DecoderState state;
};

class Generator {
 public:
  explicit Generator(GeneratorConfig cfg, std::uint64_t seed = 1) : cfg_(std::move(cfg)) {
    cfg_.validate();
    init(seed);
  }

  const GeneratorConfig& config() const noexcept { return cfg_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  // Graph handles to every parameter; bind once per graph.
  struct Bound {
    struct Cell {
      Var wx, wh, bx, bh;
    };
    Var embedding;
    Cell enc_fwd, enc_bwd, attn_rnn, dec_rnn;
    std::vector<Var> prenet_w, prenet_b;
    Var att_query, att_memory, att_v;
    Var proj_w, proj_b;
  };

  Bound bind(Graph& g) {
    Bound b;
    auto cell = [&](const std::string& prefix) {
      Bound::Cell c;
      c.wx = g.param(params_.at(prefix + ".wx"));
      c.wh = g.param(params_.at(prefix + ".wh"));
      c.bx = g.param(params_.at(prefix + ".bx"));
      if (cfg_.cell == CellType::Gru) c.bh = g.param(params_.at(prefix + ".bh"));
      return c;
    };
    b.embedding = g.param(params_.at("gen.embedding"));
    b.enc_fwd = cell("gen.enc_fwd");
    b.enc_bwd = cell("gen.enc_bwd");
    for (std::size_t l = 0; l < cfg_.prenet_dims.size(); ++l) {
      b.prenet_w.push_back(g.param(params_.at("gen.prenet" + std::to_string(l) + ".w")));
      b.prenet_b.push_back(g.param(params_.at("gen.prenet" + std::to_string(l) + ".b")));
    }
    b.attn_rnn = cell("gen.attn_rnn");
    b.att_query = g.param(params_.at("gen.attention.query"));
    b.att_memory = g.param(params_.at("gen.attention.memory"));
    b.att_v = g.param(params_.at("gen.attention.v"));
    b.dec_rnn = cell("gen.dec_rnn");
    b.proj_w = g.param(params_.at("gen.proj.w"));
    b.proj_b = g.param(params_.at("gen.proj.b"));
    return b;
  }

  // One recurrent cell step on a batch of rows.
  RecurrentState cell_step(const Bound::Cell& c, Var x, const RecurrentState& s) const {
    using namespace ops;
    const std::size_t H = s.h.cols();
    if (cfg_.cell == CellType::Gru) {
      Var gx = add(matmul(x, c.wx), c.bx);
      Var gh = add(matmul(s.h, c.wh), c.bh);
      Var z = sigmoid(add(slice_cols(gx, 0, H), slice_cols(gh, 0, H)));
      Var r = sigmoid(add(slice_cols(gx, H, H), slice_cols(gh, H, H)));
      Var n = ops::tanh(add(slice_cols(gx, 2 * H, H), mul(r, slice_cols(gh, 2 * H, H))));
      return {add(n, mul(z, sub(s.h, n))), {}};
    }
    Var gates = add(add(matmul(x, c.wx), matmul(s.h, c.wh)), c.bx);
    Var i = sigmoid(slice_cols(gates, 0, H));
    Var f = sigmoid(slice_cols(gates, H, H));
    Var gg = ops::tanh(slice_cols(gates, 2 * H, H));
    Var o = sigmoid(slice_cols(gates, 3 * H, H));
    Var c_next = add(mul(f, s.c), mul(i, gg));
    return {mul(o, ops::tanh(c_next)), c_next};
  }

  RecurrentState zero_state(Graph& g, std::size_t rows, std::size_t hidden) const {
    RecurrentState s{g.constant(Tensor(rows, hidden), "zero_state"), {}};
    if (cfg_.cell == CellType::Lstm) s.c = g.constant(Tensor(rows, hidden), "zero_cell");
    return s;
  }

  // Embedding followed by one bidirectional recurrent pass. Sequences of
  // different lengths share a padded unroll; the backward direction keeps a
  // zero state until it reaches each sequence's last symbol.
  std::vector<Memory> encode(Graph& g, const Bound& b,
                             std::span<const SymbolSequence* const> batch) const {
    using namespace ops;
    const std::size_t B = batch.size();
    if (B == 0) throw InputError("encode: empty batch");
    std::size_t s_max = 0;
    for (const auto* s : batch) {
      if (s == nullptr || s->empty()) throw InputError("encode: empty symbol sequence");
      synth::check_symbols(*s, static_cast<std::uint32_t>(cfg_.vocab_size));
      s_max = std::max(s_max, s->size());
    }
    const std::size_t H = cfg_.encoder_hidden;
    std::vector<Var> inputs(s_max);
    for (std::size_t j = 0; j < s_max; ++j) {
      std::vector<std::size_t> idx(B, 0);
      for (std::size_t k = 0; k < B; ++k)
        if (j < batch[k]->size()) idx[k] = (*batch[k])[j];
      inputs[j] = gather_rows(b.embedding, std::move(idx));
    }
    std::vector<Var> fwd(s_max), bwd(s_max);
    RecurrentState s = zero_state(g, B, H);
    for (std::size_t j = 0; j < s_max; ++j) {
      s = cell_step(b.enc_fwd, inputs[j], s);
      fwd[j] = s.h;
    }
    s = zero_state(g, B, H);
    for (std::size_t j = s_max; j-- > 0;) {
      RecurrentState next = cell_step(b.enc_bwd, inputs[j], s);
      std::vector<bool> valid(B);
      bool all_valid = true;
      for (std::size_t k = 0; k < B; ++k) {
        valid[k] = j < batch[k]->size();
        all_valid = all_valid && valid[k];
      }
      if (!all_valid) {
        next.h = select_rows(valid, next.h, s.h);
        if (cfg_.cell == CellType::Lstm) next.c = select_rows(valid, next.c, s.c);
      }
      s = next;
      bwd[j] = s.h;
    }
    std::vector<Memory> out;
    out.reserve(B);
    for (std::size_t k = 0; k < B; ++k) {
      const std::size_t S = batch[k]->size();
      Var mem = concat_cols({gather_row(std::span<const Var>(fwd.data(), S), k),
                             gather_row(std::span<const Var>(bwd.data(), S), k)});
      out.push_back({mem, matmul(mem, b.att_memory), S});
    }
    return out;
  }

  // Convenience: encoder memory (S x memory_dim) for a single sequence.
  Tensor encode(const SymbolSequence& symbols) {
    Graph g(false);
    Bound b = bind(g);
    const SymbolSequence* ptr = &symbols;
    return encode(g, b, std::span<const SymbolSequence* const>(&ptr, 1)).front().values.value();
  }

  // One decoder step for the first `rows` sequences of the batch (rows are
  // sorted so the active ones form a prefix). `prenet_masks` holds one mask
  // per prenet layer, rows x width; empty when dropout is off.
  StepOutput decode_step(const Bound& b, Var prev_frame, const DecoderState& state,
                         std::span<const Memory> memory,
                         const std::vector<Tensor>& prenet_masks) const {
    using namespace ops;
    const std::size_t n = prev_frame.rows();
    if (prev_frame.cols() != cfg_.frame_dim) {
      throw ConfigError("decode_step: previous frame has dim " + std::to_string(prev_frame.cols()) +
                        ", expected " + std::to_string(cfg_.frame_dim));
    }
    if (memory.size() < n || state.context.rows() != n || state.attn.h.rows() != n ||
        state.dec.h.rows() != n) {
      throw ConfigError("decode_step: state rows do not match the number of active sequences");
    }
    Var x = prev_frame;
    for (std::size_t l = 0; l < b.prenet_w.size(); ++l) {
      x = relu(add(matmul(x, b.prenet_w[l]), b.prenet_b[l]));
      if (!prenet_masks.empty()) x = dropout(x, prenet_masks[l]);
    }
    StepOutput out;
    out.state.attn = cell_step(b.attn_rnn, concat_cols({x, state.context}), state.attn);
    Var attn_h = out.state.attn.h;
    Var query = matmul(attn_h, b.att_query);
    std::vector<Var> contexts;
    contexts.reserve(n);
    out.align_rows.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      Var energy = ops::tanh(add(memory[k].keys, row(query, k)));
      Var weights = softmax_rows(transpose(matmul(energy, b.att_v)));
      out.align_rows.push_back(weights.value());
      contexts.push_back(matmul(weights, memory[k].values));
    }
    out.state.context = concat_rows(contexts);
    out.state.dec = cell_step(b.dec_rnn, concat_cols({attn_h, out.state.context}), state.dec);
    out.frame = add(matmul(concat_cols({out.state.dec.h, out.state.context}), b.proj_w), b.proj_b);
    out.attn_hidden = attn_h;
    out.dec_hidden = out.state.dec.h;
    return out;
  }

  // Decodes a batch in the given mode. The graph keeps every fed-back
  // prediction, so a loss on the results backpropagates through the whole
  // free-running unroll. Results are returned in request order.
  std::vector<DecodeResult> run_batch(Graph& g, std::span<const DecodeRequest> requests,
                                      DecodeMode mode, const RunOptions& opts = {}) {
    using namespace ops;
    const std::size_t B = requests.size();
    if (B == 0) throw InputError("run: empty batch");
    for (const auto& r : requests) {
      if (r.symbols == nullptr) throw InputError("run: missing symbol sequence");
      if (r.length == 0) throw InputError("run: decode length must be positive");
      if (mode.needs_targets()) {
        if (r.targets == nullptr) throw InputError("run: teacher forcing / scheduled sampling need targets");
        if (r.targets->rows() != r.length || r.targets->cols() != cfg_.frame_dim) {
          throw InputError("run: targets must be " + std::to_string(r.length) + "x" +
                           std::to_string(cfg_.frame_dim) + ", got " + r.targets->shape_string());
        }
      }
    }
    // Longest first, so the sequences still running at any step are a prefix.
    std::vector<std::size_t> order(B);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
      return requests[a].length > requests[c].length;
    });
    std::vector<const SymbolSequence*> symbols(B);
    for (std::size_t k = 0; k < B; ++k) symbols[k] = requests[order[k]].symbols;

    Bound b = bind(g);
    std::vector<Memory> memory = encode(g, b, symbols);

    const std::size_t t_max = requests[order[0]].length;
    std::vector<Rng> dropout_rng, sampling_rng;
    for (std::size_t k = 0; k < B; ++k) {
      dropout_rng.emplace_back(requests[order[k]].noise.dropout_seed);
      sampling_rng.emplace_back(requests[order[k]].noise.sampling_seed);
    }
    std::vector<std::vector<Tensor>> aligns(B);
    std::vector<std::vector<bool>> fed_real(B);
    std::vector<Var> frames(t_max), behaviors(t_max);

    std::size_t rows = B;
    DecoderState state{zero_state(g, B, cfg_.attn_rnn_hidden), zero_state(g, B, cfg_.dec_rnn_hidden),
                       g.constant(Tensor(B, cfg_.memory_dim()), "zero_context")};
    const double keep = 1.0 - cfg_.prenet_dropout;
    for (std::size_t t = 0; t < t_max; ++t) {
      std::size_t active = 0;
      while (active < B && requests[order[active]].length > t) ++active;
      if (active < rows) {
        auto shrink = [&](RecurrentState& s) {
          s.h = slice_rows(s.h, 0, active);
          if (s.c.valid()) s.c = slice_rows(s.c, 0, active);
        };
        shrink(state.attn);
        shrink(state.dec);
        state.context = slice_rows(state.context, 0, active);
        rows = active;
      }

      Var prev;
      if (t == 0) {
        prev = g.constant(Tensor(rows, cfg_.frame_dim), "go_frame");
        for (std::size_t k = 0; k < rows; ++k) fed_real[k].push_back(true);
      } else {
        Var predicted;
        if (mode.kind() != DecodeMode::Kind::TeacherForcing) {
          predicted = frames[t - 1].rows() == rows ? frames[t - 1] : slice_rows(frames[t - 1], 0, rows);
          if (opts.detach_feedback) predicted = g.detach(predicted);
        }
        Var real;
        if (mode.needs_targets()) {
          Tensor tf(rows, cfg_.frame_dim);
          for (std::size_t k = 0; k < rows; ++k) {
            const Tensor& y = *requests[order[k]].targets;
            std::copy(y.row_ptr(t - 1), y.row_ptr(t - 1) + cfg_.frame_dim, tf.row_ptr(k));
          }
          real = g.constant(std::move(tf), "target_frame");
        }
        switch (mode.kind()) {
          case DecodeMode::Kind::TeacherForcing:
            prev = real;
            for (std::size_t k = 0; k < rows; ++k) fed_real[k].push_back(true);
            break;
          case DecodeMode::Kind::FreeRunning:
            prev = predicted;
            for (std::size_t k = 0; k < rows; ++k) fed_real[k].push_back(false);
            break;
          case DecodeMode::Kind::ScheduledSampling: {
            std::vector<bool> coin(rows);
            for (std::size_t k = 0; k < rows; ++k) {
              coin[k] = uniform01(sampling_rng[k]) < mode.p();
              fed_real[k].push_back(coin[k]);
            }
            prev = select_rows(coin, real, predicted);
            break;
          }
        }
      }

      std::vector<Tensor> masks;
      if (cfg_.prenet_dropout > 0.0) {
        for (std::size_t width : cfg_.prenet_dims) {
          Tensor m(rows, width);
          for (std::size_t k = 0; k < rows; ++k)
            for (std::size_t c = 0; c < width; ++c)
              m(k, c) = uniform01(dropout_rng[k]) < keep ? 1.0 / keep : 0.0;
          masks.push_back(std::move(m));
        }
      }

      StepOutput step = decode_step(b, prev, state, memory, masks);
      for (std::size_t k = 0; k < rows; ++k) aligns[k].push_back(std::move(step.align_rows[k]));
      frames[t] = step.frame;
      behaviors[t] = cfg_.behavior_includes_output
                         ? concat_cols({step.attn_hidden, step.dec_hidden, step.frame})
                         : concat_cols({step.attn_hidden, step.dec_hidden});
      state = step.state;
    }

    std::vector<DecodeResult> results(B);
    for (std::size_t k = 0; k < B; ++k) {
      const std::size_t T = requests[order[k]].length;
      DecodeResult& r = results[order[k]];
      r.predicted = gather_row(std::span<const Var>(frames.data(), T), k);
      r.behavior = gather_row(std::span<const Var>(behaviors.data(), T), k);
      r.alignment = Tensor(T, memory[k].length);
      for (std::size_t t = 0; t < T; ++t)
        std::copy(aligns[k][t].data(), aligns[k][t].data() + memory[k].length, r.alignment.row_ptr(t));
      r.fed_real = std::move(fed_real[k]);
    }
    return results;
  }

  DecodeResult run(Graph& g, const SymbolSequence& symbols, const Tensor* targets, DecodeMode mode,
                   std::size_t length, DecodeNoise noise, const RunOptions& opts = {}) {
    DecodeRequest req{&symbols, targets, length, noise};
    return std::move(run_batch(g, std::span<const DecodeRequest>(&req, 1), mode, opts).front());
  }

 private:
  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x6E6}));
    auto uniform_tensor = [&](std::size_t r, std::size_t c, double a) {
      Tensor t(r, c);
      for (auto& v : t.values()) v = uniform(rng, -a, a);
      return t;
    };
    auto xavier = [&](std::size_t in, std::size_t out) {
      return uniform_tensor(in, out, std::sqrt(6.0 / static_cast<double>(in + out)));
    };
    const std::size_t gates = cfg_.cell == CellType::Gru ? 3 : 4;
    auto cell = [&](const std::string& prefix, std::size_t in, std::size_t hidden) {
      const double a = 1.0 / std::sqrt(static_cast<double>(hidden));
      params_.add(prefix + ".wx", uniform_tensor(in, gates * hidden, a));
      params_.add(prefix + ".wh", uniform_tensor(hidden, gates * hidden, a));
      params_.add(prefix + ".bx", Tensor(1, gates * hidden));
      if (cfg_.cell == CellType::Gru) params_.add(prefix + ".bh", Tensor(1, gates * hidden));
    };
    params_.add("gen.embedding", uniform_tensor(cfg_.vocab_size, cfg_.embed_dim, 1.0));
    cell("gen.enc_fwd", cfg_.embed_dim, cfg_.encoder_hidden);
    cell("gen.enc_bwd", cfg_.embed_dim, cfg_.encoder_hidden);
    std::size_t in = cfg_.frame_dim;
    for (std::size_t l = 0; l < cfg_.prenet_dims.size(); ++l) {
      params_.add("gen.prenet" + std::to_string(l) + ".w", xavier(in, cfg_.prenet_dims[l]));
      params_.add("gen.prenet" + std::to_string(l) + ".b", Tensor(1, cfg_.prenet_dims[l]));
      in = cfg_.prenet_dims[l];
    }
    cell("gen.attn_rnn", in + cfg_.memory_dim(), cfg_.attn_rnn_hidden);
    params_.add("gen.attention.query", xavier(cfg_.attn_rnn_hidden, cfg_.attention_dim));
    params_.add("gen.attention.memory", xavier(cfg_.memory_dim(), cfg_.attention_dim));
    params_.add("gen.attention.v", xavier(cfg_.attention_dim, 1));
    cell("gen.dec_rnn", cfg_.attn_rnn_hidden + cfg_.memory_dim(), cfg_.dec_rnn_hidden);
    params_.add("gen.proj.w", xavier(cfg_.dec_rnn_hidden + cfg_.memory_dim(), cfg_.frame_dim));
    params_.add("gen.proj.b", Tensor(1, cfg_.frame_dim));
  }

  GeneratorConfig cfg_;
  ParamSet params_;
};

}  // namespace pfgan::gen
