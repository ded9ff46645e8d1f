#include "itrl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

namespace itrl::train {

namespace {

constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// One sampled window, in the form the encoder and policy consume. Patch
// matrices live in a deque so EncoderInput pointers stay valid.
struct Batch {
  std::deque<MatrixF> patches;
  std::vector<model::EncoderInput<float>> inputs;
  std::vector<model::PolicyWindow<float>> windows;
  MatrixF targets;
};

class WindowSampler {
 public:
  WindowSampler(const model::Agent& agent, const bw::Dataset& data) : agent_(agent), data_(data) {
    if (data.episodes.empty()) throw Error("train_bc: dataset has no episodes");
    for (const auto& ep : data.episodes) {
      if (ep.steps.empty()) throw Error("train_bc: dataset contains an empty episode");
      tokens_.push_back(agent.tokens(ep.instruction));
    }
  }

  // A zero `jitter` disables augmentation.
  Batch sample(int batch, std::uint64_t seed, double jitter) const {
    std::mt19937_64 rng(seed);
    Batch b;
    b.targets.resize(batch, bw::kActionDim);
    const int C = agent_.spec().policy.context;
    const int P = agent_.spec().encoder.patch;
    for (int w = 0; w < batch; ++w) {
      const std::size_t e = static_cast<std::size_t>(rng() % data_.episodes.size());
      const auto& ep = data_.episodes[e];
      const int t = static_cast<int>(rng() % ep.steps.size());
      const int first = std::max(0, t - C + 1);
      const int n = t - first + 1;
      model::PolicyWindow<float> win;
      win.proprio.resize(n, bw::kProprioDim);
      win.past_actions.resize(n - 1, bw::kActionDim);
      for (int i = 0; i < n; ++i) {
        const auto& st = ep.steps[static_cast<std::size_t>(first + i)];
        for (int k = 0; k < bw::kCameras; ++k) {
          MatrixF img = model::image_to_float<float>(st.obs.images[static_cast<std::size_t>(k)]);
          if (jitter > 0) img = augment(img, jitter, bw::mix_seed(seed, static_cast<std::uint64_t>((w * 16 + i) * 4 + k)));
          b.patches.push_back(model::patchify(img, P));
          win.feature_rows.push_back(static_cast<int>(b.inputs.size()));
          b.inputs.push_back({&b.patches.back(), &tokens_[e]});
        }
        for (int j = 0; j < bw::kProprioDim; ++j) win.proprio(i, j) = st.obs.proprio[static_cast<std::size_t>(j)];
        if (i + 1 < n) win.past_actions.row(i) = model::action_target(st.action);
      }
      b.targets.row(w) = model::action_target(ep.steps[static_cast<std::size_t>(t)].action);
      b.windows.push_back(std::move(win));
    }
    return b;
  }

 private:
  const model::Agent& agent_;
  const bw::Dataset& data_;
  std::vector<text::TokenSeq> tokens_;
};

Tensor<float> bc_batch_loss(Tape<float>& tape, const model::Agent& agent, const Batch& b, bool train_encoder) {
  const auto& spec = agent.spec();
  auto feats = model::agent_features(tape, agent.params(), spec, std::span<const model::EncoderInput<float>>(b.inputs),
                                     train_encoder);
  auto pred = model::policy_forward(tape, agent.params(), spec.policy, feats,
                                    std::span<const model::PolicyWindow<float>>(b.windows));
  return model::bc_loss(pred, b.targets);
}

std::string step_name(std::int64_t step) {
  std::ostringstream os;
  os << "checkpoint_" << std::setw(6) << std::setfill('0') << step << ".itrl";
  return os.str();
}

void log_progress(std::ostream* log, const char* what, const MetricsRow& r, int total) {
  if (!log) return;
  *log << what << " step " << r.step << "/" << total << " loss " << r.loss << " grad_norm " << r.grad_norm << " ("
       << std::fixed << std::setprecision(1) << r.seconds << "s)" << std::defaultfloat << std::setprecision(6) << "\n";
  log->flush();
}

// Runs one optimizer step on `loss`; throws on non-finite values.
double optimizer_step(ParamStore<float>& params, Tape<float>& tape, const Tensor<float>& loss, AdamWState<float>& state,
                      const TrainConfig& cfg, std::int64_t step, std::span<const bool> mask) {
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) throw TrainingError(step, "non-finite loss");
  tape.backward(loss);
  const auto grads = tape.parameter_grads(params);
  const double norm = global_norm(std::span<const MatrixF>(grads));
  const auto report = adamw_step(params, std::span<const MatrixF>(grads), state, cfg.adamw(step), mask);
  if (!report.applied) throw TrainingError(step, report.reason);
  return norm;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(lr > 0)) fail("lr must be positive");
  if (batch <= 0) fail("batch must be positive");
  if (iterations <= 0) fail("iterations must be positive");
  if (!(jitter >= 0 && jitter <= 0.5)) fail("jitter must lie in [0, 0.5]");
  if (warmup < 0 || checkpoint_every < 0 || log_every <= 0) fail("warmup, checkpoint_every and log_every must be >= 0 (log_every > 0)");
  if (!(weight_decay >= 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("invalid optimizer settings");
}

AdamWConfig TrainConfig::adamw(std::int64_t step) const {
  AdamWConfig a;
  a.lr = warmup_lr(lr, step, warmup);
  a.weight_decay = weight_decay;
  a.beta1 = beta1;
  a.beta2 = beta2;
  return a;
}

void MetricsLog::append(const MetricsRow& row) {
  if (!rows_.empty() && row.step <= rows_.back().step)
    throw Error("metrics: step " + std::to_string(row.step) + " does not follow " + std::to_string(rows_.back().step));
  rows_.push_back(row);
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write metrics: " + path.string());
  os << "step,loss,grad_norm,seconds\n" << std::setprecision(9);
  for (const auto& r : rows_) os << r.step << ',' << r.loss << ',' << r.grad_norm << ',' << r.seconds << '\n';
  if (!os) throw IoError("failed writing metrics: " + path.string());
}

MatrixF augment(const MatrixF& image, double magnitude, std::uint64_t seed) {
  if (!(magnitude >= 0 && magnitude <= 0.5)) throw ConfigError("augment: magnitude must lie in [0, 0.5]");
  if (image.cols() % 3 != 0) throw ShapeError("augment: image width must hold RGB triples");
  if (magnitude == 0) return image;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-magnitude, magnitude);
  float offset[3];
  for (float& o : offset) o = static_cast<float>(u(rng));
  MatrixF out(image.rows(), image.cols());
  for (Index r = 0; r < image.rows(); ++r)
    for (Index c = 0; c < image.cols(); ++c) out(r, c) = std::clamp(image(r, c) + offset[c % 3], 0.f, 1.f);
  return out;
}

TrainResult train_bc(model::Agent& agent, const bw::Dataset& data, const TrainConfig& cfg,
                     const std::filesystem::path& out, std::ostream* log) {
  cfg.validate();
  const WindowSampler sampler(agent, data);
  const Batch probe = sampler.sample(std::min(cfg.batch, 64), bw::mix_seed(cfg.seed, kProbeStream), 0.0);
  auto probe_loss = [&] {
    Tape<float> tape;
    return static_cast<double>(bc_batch_loss(tape, agent, probe, false).value()(0, 0));
  };

  TrainResult result;
  result.initial_loss = probe_loss();
  auto state = AdamWState<float>::zeros_like(agent.params());
  const auto mask = agent.trainable_mask(cfg.freeze_encoder);
  const std::span<const bool> mask_span(mask.get(), agent.params().size());
  const auto start = Clock::now();
  if (!out.empty()) std::filesystem::create_directories(out);

  for (std::int64_t step = 0; step < cfg.iterations; ++step) {
    const Batch b = sampler.sample(cfg.batch, bw::mix_seed(cfg.seed, static_cast<std::uint64_t>(step)), cfg.jitter);
    Tape<float> tape;
    auto loss = bc_batch_loss(tape, agent, b, !cfg.freeze_encoder);
    const double norm = optimizer_step(agent.params(), tape, loss, state, cfg, step, mask_span);
    const std::int64_t done = step + 1;
    if (done % cfg.log_every == 0 || done == cfg.iterations || step == 0) {
      MetricsRow row{done, loss.value()(0, 0), norm, seconds_since(start)};
      result.metrics.append(row);
      log_progress(log, "train", row, cfg.iterations);
    }
    if (!out.empty() && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)
      agent.save(out / step_name(done), &state);
  }
  result.final_loss = probe_loss();
  if (!out.empty()) {
    agent.save(out / "agent.itrl", &state);
    result.metrics.write_csv(out / "metrics.csv");
  }
  return result;
}

Pretrainer::Pretrainer(model::EncoderConfig enc, model::MaeConfig m, text::Vocabulary v, std::uint64_t seed)
    : encoder(std::move(enc)), mae(m), vocab(std::move(v)) {
  if (encoder.fusion != model::Fusion::kJoint) throw ConfigError("pretraining uses the joint encoder");
  if (static_cast<int>(vocab.size()) != encoder.vocab_size)
    throw ConfigError("pretrainer: vocabulary size does not match the encoder config");
  model::init_encoder(params, encoder, bw::mix_seed(seed, 1));
  model::init_mae(params, encoder, mae, bw::mix_seed(seed, 3));
}

Header Pretrainer::header() const {
  Header h;
  h["kind"] = "encoder";
  encoder.to_header(h);
  h["mae.decoder_depth"] = std::to_string(mae.decoder_depth);
  model::vocab_to_header(vocab, h);
  return h;
}

void Pretrainer::save(const std::filesystem::path& path) const { save_checkpoint(path, header(), params); }

namespace {

struct MaeBatch {
  std::deque<MatrixF> patches;
  std::deque<text::TokenSeq> tokens;
  std::vector<model::MaeItem<float>> items;
};

MaeBatch mae_batch(const Pretrainer& m, const std::vector<bw::CaptionPair>& corpus, int batch, std::uint64_t seed,
                   double jitter, bool sequential) {
  std::mt19937_64 rng(seed);
  MaeBatch b;
  for (int i = 0; i < batch; ++i) {
    const std::size_t idx = sequential ? static_cast<std::size_t>(i) % corpus.size() : static_cast<std::size_t>(rng() % corpus.size());
    MatrixF img = model::image_to_float<float>(corpus[idx].image);
    if (jitter > 0) img = augment(img, jitter, bw::mix_seed(seed, static_cast<std::uint64_t>(i)));
    b.patches.push_back(model::patchify(img, m.encoder.patch));
    b.tokens.push_back(text::encode(corpus[idx].caption, m.vocab, m.encoder.n_max));
    b.items.push_back({&b.patches.back(), &b.tokens.back(),
                       model::make_mae_mask(m.encoder.patches(), b.tokens.back().true_length, rng(), m.mae)});
  }
  return b;
}

}  // namespace

TrainResult pretrain_encoder(Pretrainer& m, const std::vector<bw::CaptionPair>& corpus, const TrainConfig& cfg,
                             const std::filesystem::path& out, std::ostream* log) {
  cfg.validate();
  if (corpus.empty()) throw Error("pretrain_encoder: empty caption corpus");
  const MaeBatch probe = mae_batch(m, corpus, 64, bw::mix_seed(cfg.seed, kProbeStream), 0.0, true);
  auto probe_loss = [&] {
    Tape<float> tape;
    return static_cast<double>(model::mae_pretrain_loss(tape, m.params, m.encoder, m.mae,
                                                        std::span<const model::MaeItem<float>>(probe.items))
                                   .total.value()(0, 0));
  };
  TrainResult result;
  result.initial_loss = probe_loss();
  auto state = AdamWState<float>::zeros_like(m.params);
  const auto start = Clock::now();
  if (!out.empty()) std::filesystem::create_directories(out);
  for (std::int64_t step = 0; step < cfg.iterations; ++step) {
    const MaeBatch b = mae_batch(m, corpus, cfg.batch, bw::mix_seed(cfg.seed, static_cast<std::uint64_t>(step)), cfg.jitter, false);
    Tape<float> tape;
    auto loss = model::mae_pretrain_loss(tape, m.params, m.encoder, m.mae, std::span<const model::MaeItem<float>>(b.items));
    const double norm = optimizer_step(m.params, tape, loss.total, state, cfg, step, {});
    const std::int64_t done = step + 1;
    if (done % cfg.log_every == 0 || done == cfg.iterations || step == 0) {
      MetricsRow row{done, loss.total.value()(0, 0), norm, seconds_since(start)};
      result.metrics.append(row);
      log_progress(log, "pretrain", row, cfg.iterations);
    }
  }
  result.final_loss = probe_loss();
  if (!out.empty()) {
    m.save(out / "encoder.itrl");
    result.metrics.write_csv(out / "metrics.csv");
  }
  return result;
}

}  // namespace itrl::train
