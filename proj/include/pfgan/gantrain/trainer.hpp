#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pfgan/discriminator.hpp"
#include "pfgan/gantrain/checkpoint.hpp"
#include "pfgan/gantrain/losses.hpp"
#include "pfgan/generator.hpp"

namespace pfgan::train {

enum class TrainMode { Tf, Ss, TfGan, SsGan };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Tf: return "tf";
    case TrainMode::Ss: return "ss";
    case TrainMode::TfGan: return "tf-gan";
    case TrainMode::SsGan: return "ss-gan";
  }
  return "?";
}

inline std::optional<TrainMode> parse_mode(std::string_view s) {
  if (s == "tf") return TrainMode::Tf;
  if (s == "ss") return TrainMode::Ss;
  if (s == "tf-gan") return TrainMode::TfGan;
  if (s == "ss-gan") return TrainMode::SsGan;
  return std::nullopt;
}

inline bool is_adversarial(TrainMode m) { return m == TrainMode::TfGan || m == TrainMode::SsGan; }
inline bool uses_scheduled_sampling(TrainMode m) { return m == TrainMode::Ss || m == TrainMode::SsGan; }

struct TrainConfig {
  double alpha = 1e-3;
  std::uint64_t pretrain_steps = 1500;
  std::uint64_t gan_steps = 1500;
  std::uint64_t probe_period = 50;
  double acc_low = 0.75;
  double acc_high = 0.97;
  std::size_t batch_size = 16;
  std::size_t probe_batches = 4;
  LrSchedule lr_g{1e-3, 1e-5, 1500};
  LrSchedule lr_d{1e-3, 1e-5, 1500};
  TrainMode mode = TrainMode::TfGan;
  gen::SsSchedule ss{1.0, 0.5, 1500};
  disc::DiscriminatorConfig disc;  // input_dim is taken from the generator
  double grad_clip = 0.0;          // global-norm clip; 0 disables
  std::uint64_t seed = 1;

  // Values reported for the full-size speech model.
  static TrainConfig full_scale() {
    TrainConfig c;
    c.pretrain_steps = 50'000;
    c.gan_steps = 50'000;
    c.batch_size = 128;
    c.probe_period = 100;
    c.lr_g = {1e-3, 1e-5, 50'000};
    c.lr_d = {1e-3, 1e-5, 50'000};
    c.ss = {1.0, 0.5, 50'000};
    c.disc.input_dim = 1536;
    c.disc.hidden_dim = 512;
    return c;
  }

  // Defaults sized for the synthetic task on one CPU core.
  static TrainConfig desk_scale() { return TrainConfig{}; }

  void validate() const {
    if (!(0.0 <= acc_low && acc_low < acc_high && acc_high <= 1.0))
      throw ConfigError("train: need 0 <= acc_low < acc_high <= 1");
    if (probe_period < 1) throw ConfigError("train: probe_period must be >= 1");
    if (!(alpha >= 0.0)) throw ConfigError("train: alpha must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (probe_batches < 1) throw ConfigError("train: probe_batches must be >= 1");
    if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
    lr_g.validate();
    lr_d.validate();
    ss.validate();
  }
};

// One metrics CSV row; unset optionals serialize as empty fields.
struct MetricsRow {
  std::uint64_t step = 0;
  std::string phase;
  std::string mode;
  std::optional<double> l_t, l_d, l_g, score_t, score_f, accuracy;
  std::optional<bool> s_g, s_d;
  double lr_g = 0.0;
  std::optional<double> lr_d;
};

class Metrics {
 public:
  static constexpr std::string_view kHeader =
      "step,phase,mode,L_T,L_D,L_G,score_t,score_f,accuracy,s_g,s_d,lr_g,lr_d";

  void add(MetricsRow r) { rows_.push_back(std::move(r)); }
  const std::vector<MetricsRow>& rows() const noexcept { return rows_; }
  void append(const Metrics& o) { rows_.insert(rows_.end(), o.rows_.begin(), o.rows_.end()); }

  void write_csv(std::ostream& os, bool header = true) const {
    if (header) os << kHeader << '\n';
    auto num = [&](const std::optional<double>& v) {
      if (!v) return;
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.10g", *v);
      os << buf;
    };
    auto flag = [&](const std::optional<bool>& v) {
      if (v) os << (*v ? '1' : '0');
    };
    for (const auto& r : rows_) {
      os << r.step << ',' << r.phase << ',' << r.mode << ',';
      num(r.l_t);
      os << ',';
      num(r.l_d);
      os << ',';
      num(r.l_g);
      os << ',';
      num(r.score_t);
      os << ',';
      num(r.score_f);
      os << ',';
      num(r.accuracy);
      os << ',';
      flag(r.s_g);
      os << ',';
      flag(r.s_d);
      os << ',';
      num(r.lr_g);
      os << ',';
      num(r.lr_d);
      os << '\n';
    }
  }

  std::string csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_csv(os);
    if (!os) throw IoError("write failed: " + path.string());
  }

 private:
  std::vector<MetricsRow> rows_;
};

// What happened in one adversarial-phase step, for tests and logging.
struct StepInfo {
  std::uint64_t step = 0;
  GateState gates;                 // gates in effect for this step's updates
  bool generator_adversarial = false;  // theta_g moved by L_G (else by L_T)
  bool discriminator_updated = false;  // theta_d moved by L_D
  std::optional<double> accuracy;      // probe result, when probed
};

struct TrainHooks {
  // Replaces the probe measurement when it returns a value.
  std::function<std::optional<double>(std::uint64_t step)> forced_accuracy;
  std::function<void(const StepInfo&)> after_step;
};

// Alternating generator / discriminator training with accuracy gates.
class Trainer {
 public:
  Trainer(TrainConfig cfg, gen::Generator& generator, std::span<const synth::Utterance> train_set,
          TrainHooks hooks = {})
      : cfg_(std::move(cfg)),
        gen_(generator),
        data_(train_set),
        hooks_(std::move(hooks)),
        gen_opt_(AdamState::for_params(generator.params())) {
    cfg_.validate();
    if (data_.empty()) throw ConfigError("train: empty training set");
    for (const auto& u : data_) {
      if (u.frames.cols() != gen_.config().frame_dim)
        throw ConfigError("train: utterance " + u.id + " frame dim does not match the generator");
    }
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  AdamState& generator_optimizer() noexcept { return gen_opt_; }
  void set_generator_optimizer(AdamState s) { gen_opt_ = std::move(s); }
  const std::optional<disc::Discriminator>& discriminator() const noexcept { return disc_; }
  const GateState& gates() const noexcept { return gates_; }
  const Metrics& metrics() const noexcept { return metrics_; }

  // Teacher-forced reconstruction training for config().pretrain_steps.
  void pretrain() {
    for (std::uint64_t i = 0; i < cfg_.pretrain_steps; ++i) {
      const auto batch = next_batch();
      const auto reqs = requests(batch, kPretrainTag, i, kRealStream);
      const double lr = lr_at(cfg_.lr_g, i);
      Graph g(true);
      auto res = gen_.run_batch(g, reqs, gen::DecodeMode::teacher_forcing());
      Var l_t = reconstruction(g, res, batch);
      g.backward(l_t);
      step_generator(lr);
      MetricsRow row;
      row.step = i;
      row.phase = "pretrain";
      row.mode = "tf";
      row.l_t = l_t.item();
      row.lr_g = lr;
      metrics_.add(std::move(row));
    }
  }

  // config().gan_steps steps in config().mode. Non-adversarial modes never
  // construct the discriminator.
  void train() {
    const bool adversarial = is_adversarial(cfg_.mode);
    if (adversarial && !disc_) {
      auto dc = cfg_.disc;
      dc.input_dim = gen_.config().behavior_dim();
      disc_.emplace(dc, derive_seed(cfg_.seed, {0xD1}));
      disc_opt_ = AdamState::for_params(disc_->params());
      build_probe_set();
    }
    gates_ = GateState{};
    for (std::uint64_t i = 0; i < cfg_.gan_steps; ++i) {
      const auto batch = next_batch();
      const double lr_g = lr_at(cfg_.lr_g, i);
      const double lr_d = lr_at(cfg_.lr_d, i);
      const gen::DecodeMode real_mode = uses_scheduled_sampling(cfg_.mode)
                                            ? gen::DecodeMode::scheduled_sampling(gen::ss_probability(cfg_.ss, i))
                                            : gen::DecodeMode::teacher_forcing();
      const auto real_reqs = requests(batch, kTrainTag, i, kRealStream);
      const auto fr_reqs = requests(batch, kTrainTag, i, kFreeStream);

      MetricsRow row;
      row.step = i;
      row.phase = "train";
      row.mode = std::string(to_string(cfg_.mode));
      row.lr_g = lr_g;
      StepInfo info;
      info.step = i;
      info.gates = gates_;

      // Generator update: L_T, or L_G when the gate allows it.
      {
        Graph g(true);
        auto real = gen_.run_batch(g, real_reqs, real_mode);
        Var l_t = reconstruction(g, real, batch);
        row.l_t = l_t.item();
        if (adversarial && gates_.s_g) {
          auto fr = gen_.run_batch(g, fr_reqs, gen::DecodeMode::free_running());
          auto bound = disc_->bind(g, false, false);
          std::vector<Var> st, sf;
          for (std::size_t k = 0; k < batch.size(); ++k) {
            st.push_back(disc_->score(bound, real[k].behavior));
            sf.push_back(disc_->score(bound, fr[k].behavior));
          }
          Var mst = mean_of(st), msf = mean_of(sf);
          Var l_g = gen_loss(l_t, mst, msf, cfg_.alpha);
          row.l_g = l_g.item();
          row.score_t = mst.item();
          row.score_f = msf.item();
          g.backward(l_g);
          info.generator_adversarial = true;
        } else {
          g.backward(l_t);
        }
        step_generator(lr_g);
      }

      // Discriminator update on fresh behavior sequences from the same batch.
      if (adversarial) {
        row.lr_d = lr_d;
        if (gates_.s_d) {
          Graph frozen(false);
          auto real = gen_.run_batch(frozen, real_reqs, real_mode);
          auto fr = gen_.run_batch(frozen, fr_reqs, gen::DecodeMode::free_running());
          Graph g(true);
          auto bound = disc_->bind(g, true, true);
          std::vector<Var> st, sf;
          for (std::size_t k = 0; k < batch.size(); ++k) {
            st.push_back(disc_->score(bound, g.constant(real[k].behavior.value(), "b_t")));
            sf.push_back(disc_->score(bound, g.constant(fr[k].behavior.value(), "b_f")));
          }
          Var l_d = disc_loss(st, sf);
          g.backward(l_d);
          if (cfg_.grad_clip > 0.0) clip_grad_norm(disc_->params(), cfg_.grad_clip);
          adam_step(disc_->params(), *disc_opt_, lr_d);
          row.l_d = l_d.item();
          if (!row.score_t) {
            row.score_t = mean_of(st).item();
            row.score_f = mean_of(sf).item();
          }
          info.discriminator_updated = true;
        }
        row.s_g = gates_.s_g;
        row.s_d = gates_.s_d;

        if (i % cfg_.probe_period == 0) {
          std::optional<double> acc;
          if (hooks_.forced_accuracy) acc = hooks_.forced_accuracy(i);
          if (!acc) acc = probe_accuracy();
          row.accuracy = *acc;
          info.accuracy = *acc;
          gates_ = update_gates(*acc, cfg_.acc_low, cfg_.acc_high);
        }
      }
      metrics_.add(std::move(row));
      if (hooks_.after_step) hooks_.after_step(info);
    }
  }

  // Discriminator accuracy on the fixed probe set (teacher-forced vs
  // free-running decodes of the same utterances, frozen u).
  double probe_accuracy() {
    if (!disc_) throw ConfigError("probe_accuracy: no discriminator in this mode");
    std::vector<double> st, sf;
    for (std::size_t b0 = 0; b0 < probe_.size(); b0 += cfg_.batch_size) {
      const std::size_t n = std::min(cfg_.batch_size, probe_.size() - b0);
      std::vector<gen::DecodeRequest> real, fr;
      for (std::size_t k = b0; k < b0 + n; ++k) {
        const auto& u = data_[probe_[k]];
        real.push_back({&u.symbols, &u.frames, u.length(),
                        {derive_seed(cfg_.seed, {kProbeTag, k, 1}), derive_seed(cfg_.seed, {kProbeTag, k, 2})}});
        fr.push_back({&u.symbols, &u.frames, u.length(),
                      {derive_seed(cfg_.seed, {kProbeTag, k, 3}), derive_seed(cfg_.seed, {kProbeTag, k, 4})}});
      }
      Graph g(false);
      auto rr = gen_.run_batch(g, real, gen::DecodeMode::teacher_forcing());
      auto rf = gen_.run_batch(g, fr, gen::DecodeMode::free_running());
      auto bound = disc_->bind(g, false, false);
      for (std::size_t k = 0; k < n; ++k) {
        st.push_back(disc_->score(bound, rr[k].behavior).item());
        sf.push_back(disc_->score(bound, rf[k].behavior).item());
      }
    }
    return disc::accuracy(st, sf);
  }

 private:
  static constexpr std::uint64_t kPretrainTag = 0x5072;
  static constexpr std::uint64_t kTrainTag = 0x4741;
  static constexpr std::uint64_t kProbeTag = 0x9B0B;
  static constexpr std::uint64_t kRealStream = 1;
  static constexpr std::uint64_t kFreeStream = 3;

  std::vector<const synth::Utterance*> next_batch() {
    std::vector<const synth::Utterance*> out;
    const std::size_t n = std::min(cfg_.batch_size, data_.size());
    while (out.size() < n) {
      if (cursor_ >= order_.size()) {
        order_.resize(data_.size());
        std::iota(order_.begin(), order_.end(), 0);
        Rng rng(derive_seed(cfg_.seed, {0xBA7C, epoch_++}));
        std::shuffle(order_.begin(), order_.end(), rng);
        cursor_ = 0;
      }
      out.push_back(&data_[order_[cursor_++]]);
    }
    return out;
  }

  std::vector<gen::DecodeRequest> requests(const std::vector<const synth::Utterance*>& batch,
                                           std::uint64_t phase, std::uint64_t step,
                                           std::uint64_t stream) const {
    std::vector<gen::DecodeRequest> reqs;
    reqs.reserve(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto* u = batch[k];
      reqs.push_back({&u->symbols, &u->frames, u->length(),
                      {derive_seed(cfg_.seed, {phase, step, k, stream}),
                       derive_seed(cfg_.seed, {phase, step, k, stream + 1})}});
    }
    return reqs;
  }

  Var reconstruction(Graph& g, const std::vector<gen::DecodeResult>& res,
                     const std::vector<const synth::Utterance*>& batch) const {
    std::vector<Var> losses;
    losses.reserve(res.size());
    for (std::size_t k = 0; k < res.size(); ++k)
      losses.push_back(reconstruction_loss(res[k].predicted, g.constant(batch[k]->frames, "target")));
    return mean_of(losses);
  }

  void step_generator(double lr) {
    if (cfg_.grad_clip > 0.0) clip_grad_norm(gen_.params(), cfg_.grad_clip);
    adam_step(gen_.params(), gen_opt_, lr);
  }

  void build_probe_set() {
    std::vector<std::size_t> idx(data_.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(cfg_.seed, {kProbeTag}));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), cfg_.probe_batches * cfg_.batch_size));
    probe_ = std::move(idx);
  }

  TrainConfig cfg_;
  gen::Generator& gen_;
  std::span<const synth::Utterance> data_;
  TrainHooks hooks_;
  AdamState gen_opt_;
  std::optional<disc::Discriminator> disc_;
  std::optional<AdamState> disc_opt_;
  GateState gates_;
  Metrics metrics_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> probe_;
};

struct RunArtifacts {
  std::filesystem::path checkpoint;   // empty: not written
  std::filesystem::path metrics_csv;  // empty: not written
};

namespace detail {

template <typename Body>
void run_with_artifacts(Trainer& t, gen::Generator& g, const RunArtifacts& out, Body&& body) {
  auto persist = [&] {
    if (!out.checkpoint.empty()) save_checkpoint(g.params(), &t.generator_optimizer(), out.checkpoint);
    if (!out.metrics_csv.empty()) t.metrics().save(out.metrics_csv);
  };
  try {
    body();
  } catch (const NumericError&) {
    // Parameters still hold the last finite step: the failing graph threw
    // before any update was applied.
    persist();
    throw;
  }
  persist();
}

}  // namespace detail

// Pre-training phase: returns the metrics; the generator is updated in place.
inline Metrics pretrain(const TrainConfig& cfg, gen::Generator& g,
                        std::span<const synth::Utterance> train_set, const RunArtifacts& out = {}) {
  Trainer t(cfg, g, train_set);
  detail::run_with_artifacts(t, g, out, [&] { t.pretrain(); });
  return t.metrics();
}

// Second phase from a pre-trained generator (optionally resuming its optimizer).
inline Metrics train_gan(const TrainConfig& cfg, gen::Generator& g,
                         std::span<const synth::Utterance> train_set, const Checkpoint& init,
                         const RunArtifacts& out = {}, TrainHooks hooks = {}) {
  assign_params(g.params(), init.params);
  Trainer t(cfg, g, train_set, std::move(hooks));
  if (init.optimizer) t.set_generator_optimizer(*init.optimizer);
  detail::run_with_artifacts(t, g, out, [&] { t.train(); });
  return t.metrics();
}

}  // namespace pfgan::train
