#pragma once

// Behaviour-cloning and masked-autoencoder training loops.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "itrl/agent.hpp"
#include "itrl/dataset.hpp"
#include "itrl/optim.hpp"

namespace itrl::train {

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.95;
  int warmup = 100;
  int batch = 64;
  int iterations = 10000;
  double jitter = 0.05;
  std::uint64_t seed = 0;
  // Training runs on one optimizer thread with seed-derived batches, so it is
  // reproducible either way; the flag is recorded for provenance.
  bool deterministic = true;
  bool freeze_encoder = false;
  int checkpoint_every = 1000;  // 0 disables intermediate checkpoints
  int log_every = 50;

  void validate() const;
  AdamWConfig adamw(std::int64_t step) const;
};

struct MetricsRow {
  std::int64_t step = 0;
  double loss = 0;
  double grad_norm = 0;
  double seconds = 0;
};

class MetricsLog {
 public:
  // Rows must arrive with strictly increasing steps.
  void append(const MetricsRow& row);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  // Header "step,loss,grad_norm,seconds".
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<MetricsRow> rows_;
};

class TrainingError : public Error {
 public:
  TrainingError(std::int64_t step, const std::string& what)
      : Error("training aborted at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

// Per-channel additive colour jitter on an H x (W*3) image in [0, 1]; each
// channel's offset is uniform in [-magnitude, magnitude]; results are clamped.
MatrixF augment(const MatrixF& image, double magnitude, std::uint64_t seed);

struct TrainResult {
  MetricsLog metrics;
  // Loss on a fixed, unaugmented probe batch before the first and after the last step.
  double initial_loss = 0;
  double final_loss = 0;
};

// Trains `agent` in place. With a non-empty `out`, writes metrics.csv,
// checkpoint_<step>.itrl every checkpoint_every steps and agent.itrl at the end.
TrainResult train_bc(model::Agent& agent, const bw::Dataset& data, const TrainConfig& cfg,
                     const std::filesystem::path& out = {}, std::ostream* log = nullptr);

// Encoder plus masked-autoencoder decoder, trained together on captions.
struct Pretrainer {
  model::EncoderConfig encoder;
  model::MaeConfig mae;
  text::Vocabulary vocab;
  ParamStore<float> params;

  Pretrainer(model::EncoderConfig encoder, model::MaeConfig mae, text::Vocabulary vocab, std::uint64_t seed);
  Header header() const;
  void save(const std::filesystem::path& path) const;
};

// Writes metrics.csv and encoder.itrl under a non-empty `out`.
TrainResult pretrain_encoder(Pretrainer& model, const std::vector<bw::CaptionPair>& corpus, const TrainConfig& cfg,
                             const std::filesystem::path& out = {}, std::ostream* log = nullptr);

}  // namespace itrl::train
