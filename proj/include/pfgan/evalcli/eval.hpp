#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pfgan/generator.hpp"
#include "pfgan/synthtask.hpp"

namespace pfgan::eval {

struct EvalConfig {
  std::uint64_t eval_seed = 7;
  std::size_t regression_window = 2;
  double violation_fraction = 0.1;  // garbled when violations > fraction * T
  double progress_fraction = 0.6;   // garbled when the final focus < fraction * S
  std::size_t batch_size = 16;

  void validate() const {
    if (!(violation_fraction >= 0.0)) throw ConfigError("eval: violation_fraction must be >= 0");
    if (!(progress_fraction >= 0.0 && progress_fraction <= 1.0))
      throw ConfigError("eval: progress_fraction must be in [0,1]");
    if (batch_size == 0) throw ConfigError("eval: batch_size must be >= 1");
  }
};

struct AlignmentDiagnostics {
  std::size_t violations = 0;
  double entropy_mean = 0.0;
  std::size_t final_focus = 0;
  bool garbled = false;
};

// Row argmax; ties go to the smallest index.
inline std::size_t focus(const Tensor& alignment, std::size_t t) {
  const double* r = alignment.row_ptr(t);
  std::size_t best = 0;
  for (std::size_t j = 1; j < alignment.cols(); ++j)
    if (r[j] > r[best]) best = j;
  return best;
}

inline bool is_garbled(std::size_t violations, std::size_t T, std::size_t final_focus, std::size_t S,
                       const EvalConfig& cfg = {}) {
  return static_cast<double>(violations) > cfg.violation_fraction * static_cast<double>(T) ||
         static_cast<double>(final_focus) < cfg.progress_fraction * static_cast<double>(S);
}

inline AlignmentDiagnostics alignment_diagnostics(const Tensor& alignment, const EvalConfig& cfg = {}) {
  const std::size_t T = alignment.rows(), S = alignment.cols();
  if (alignment.rank() != 2 || T == 0 || S == 0) throw InputError("alignment_diagnostics: empty alignment");
  AlignmentDiagnostics d;
  std::size_t prev = focus(alignment, 0);
  double entropy = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t f = focus(alignment, t);
    if (t > 0 && f + cfg.regression_window < prev) ++d.violations;
    prev = f;
    const double* r = alignment.row_ptr(t);
    for (std::size_t j = 0; j < S; ++j)
      if (r[j] > 0.0) entropy -= r[j] * std::log(r[j]);
  }
  d.entropy_mean = entropy / static_cast<double>(T);
  d.final_focus = prev;
  d.garbled = is_garbled(d.violations, T, d.final_focus, S, cfg);
  return d;
}

// What a model produces for one utterance under evaluation.
struct Decodes {
  Tensor tf;         // teacher-forced prediction, T x F
  Tensor fr;         // free-running prediction, T x F
  Tensor alignment;  // free-running alignment, T x S
};

// Evaluation adapter around a generator: dropout stays on, with masks seeded
// from the evaluation seed and the utterance id.
class GeneratorModel {
 public:
  GeneratorModel(gen::Generator& g, std::uint64_t eval_seed) : gen_(g), seed_(eval_seed) {}

  std::size_t frame_dim() const { return gen_.config().frame_dim; }

  std::vector<Decodes> decode(std::span<const synth::Utterance* const> batch) {
    std::vector<gen::DecodeRequest> tf, fr;
    for (const auto* u : batch) {
      const std::uint64_t h = hash_string(u->id);
      tf.push_back({&u->symbols, &u->frames, u->length(),
                    {derive_seed(seed_, {h, 1}), derive_seed(seed_, {h, 2})}});
      fr.push_back({&u->symbols, nullptr, u->length(),
                    {derive_seed(seed_, {h, 3}), derive_seed(seed_, {h, 4})}});
    }
    Graph g(false);
    auto rt = gen_.run_batch(g, tf, gen::DecodeMode::teacher_forcing());
    auto rf = gen_.run_batch(g, fr, gen::DecodeMode::free_running());
    std::vector<Decodes> out(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      out[k].tf = rt[k].predicted.value();
      out[k].fr = rf[k].predicted.value();
      out[k].alignment = std::move(rf[k].alignment);
    }
    return out;
  }

 private:
  gen::Generator& gen_;
  std::uint64_t seed_;
};

// Emits the target frames in both modes with a diagonal alignment.
class OracleModel {
 public:
  explicit OracleModel(std::size_t frame_dim) : frame_dim_(frame_dim) {}
  std::size_t frame_dim() const { return frame_dim_; }

  std::vector<Decodes> decode(std::span<const synth::Utterance* const> batch) const {
    std::vector<Decodes> out;
    for (const auto* u : batch) {
      const std::size_t T = u->length(), S = u->symbols.size();
      Tensor a(T, S);
      for (std::size_t t = 0; t < T; ++t) a(t, std::min(S - 1, t * S / T)) = 1.0;
      out.push_back({u->frames, u->frames, std::move(a)});
    }
    return out;
  }

 private:
  std::size_t frame_dim_;
};

struct UtteranceEval {
  std::string id;
  std::size_t n_symbols = 0;
  std::size_t length = 0;
  double tf_mse = 0.0;
  double fr_mse = 0.0;
  AlignmentDiagnostics alignment;
};

struct EvalReport {
  std::vector<UtteranceEval> utterances;  // sorted by id
  double mean_tf_mse = 0.0;
  double mean_fr_mse = 0.0;
  double garble_rate = 0.0;
  std::vector<double> curve;             // mean |FR error| per position
  std::vector<std::size_t> curve_count;  // utterances reaching each position

  // Mean of the curve over positions [begin, end), weighted by count.
  double curve_mean(std::size_t begin, std::size_t end) const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t t = begin; t < std::min(end, curve.size()); ++t) {
      s += curve[t] * static_cast<double>(curve_count[t]);
      n += curve_count[t];
    }
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

namespace detail {

inline double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace detail

template <typename Model>
EvalReport eval_model(Model& model, std::span<const synth::Utterance> split, const EvalConfig& cfg = {}) {
  cfg.validate();
  if (split.empty()) throw InputError("eval: empty split");
  std::vector<const synth::Utterance*> order;
  for (const auto& u : split) {
    if (u.frames.cols() != model.frame_dim()) {
      throw ConfigError("eval: utterance " + u.id + " has frame dim " + std::to_string(u.frames.cols()) +
                        ", model expects " + std::to_string(model.frame_dim()));
    }
    order.push_back(&u);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });

  EvalReport rep;
  std::vector<double> curve_sum;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, order.size() - b0);
    auto batch = std::span<const synth::Utterance* const>(order.data() + b0, n);
    auto decodes = model.decode(batch);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& u = *batch[k];
      const auto& d = decodes[k];
      UtteranceEval e;
      e.id = u.id;
      e.n_symbols = u.symbols.size();
      e.length = u.length();
      e.tf_mse = detail::mse(d.tf, u.frames);
      e.fr_mse = detail::mse(d.fr, u.frames);
      e.alignment = alignment_diagnostics(d.alignment, cfg);
      if (curve_sum.size() < e.length) {
        curve_sum.resize(e.length, 0.0);
        rep.curve_count.resize(e.length, 0);
      }
      for (std::size_t t = 0; t < e.length; ++t) {
        double s = 0.0;
        for (std::size_t f = 0; f < u.frames.cols(); ++f) s += std::abs(d.fr(t, f) - u.frames(t, f));
        curve_sum[t] += s / static_cast<double>(u.frames.cols());
        ++rep.curve_count[t];
      }
      rep.utterances.push_back(std::move(e));
    }
  }
  std::size_t garbled = 0;
  for (const auto& e : rep.utterances) {
    rep.mean_tf_mse += e.tf_mse;
    rep.mean_fr_mse += e.fr_mse;
    garbled += e.alignment.garbled;
  }
  const double N = static_cast<double>(rep.utterances.size());
  rep.mean_tf_mse /= N;
  rep.mean_fr_mse /= N;
  rep.garble_rate = static_cast<double>(garbled) / N;
  rep.curve.resize(curve_sum.size());
  for (std::size_t t = 0; t < curve_sum.size(); ++t)
    rep.curve[t] = curve_sum[t] / static_cast<double>(rep.curve_count[t]);
  return rep;
}

inline void write_utterance_csv(std::ostream& os, const EvalReport& rep) {
  os << "id,n_symbols,T,tf_mse,fr_mse,monotonicity_violations,attention_entropy,garbled\n";
  char buf[128];
  for (const auto& e : rep.utterances) {
    std::snprintf(buf, sizeof buf, ",%zu,%zu,%.10g,%.10g,%zu,%.10g,%d\n", e.n_symbols, e.length, e.tf_mse,
                  e.fr_mse, e.alignment.violations, e.alignment.entropy_mean, e.alignment.garbled ? 1 : 0);
    os << e.id << buf;
  }
}

inline void write_curve_csv(std::ostream& os, const EvalReport& rep) {
  os << "position,mean_fr_abs_error,count\n";
  char buf[96];
  for (std::size_t t = 0; t < rep.curve.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%zu\n", t, rep.curve[t], rep.curve_count[t]);
    os << buf;
  }
}

inline void save_csv(const std::filesystem::path& path, void (*writer)(std::ostream&, const EvalReport&),
                     const EvalReport& rep) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  writer(os, rep);
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace pfgan::eval
