#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "voiceveil/corpus.hpp"
#include "voiceveil/encoder.hpp"
#include "voiceveil/generator.hpp"
#include "voiceveil/losses.hpp"
#include "voiceveil/nn.hpp"
#include "voiceveil/signal.hpp"

namespace veil::training {

using Mat = ad::Mat;
using Vec = ad::Vec;

struct TrainConfig {
  int batch_size = 32;
  double crop_seconds = 3.0;
  double peak_lr = 0.001;
  int warmup_steps = 9600;
  double decay_rate = 0.9999;  // per-step exponential factor after warm-up
  int total_steps = 20000;
  uint64_t seed = 1;
  losses::LossWeights weights;
  double grad_clip = 5.0;
  int checkpoint_every = 1000;

  void validate() const;
};

/// One mini-batch of equal-length crops; speaker labels ride along as
/// metadata only and are never consumed by any loss computation.
struct TrainingBatch {
  std::vector<std::string> speakers;
  std::vector<Mat> magnitudes;  // S_k
  std::vector<Mat> features;    // F_k
  std::vector<Vec> embeddings;  // z_k (frozen-encoder outputs)
  std::vector<bool> was_padded;
};

/// Linear ramp 0 -> peak over warmup_steps, then peak * decay^(step - warmup).
double lr_schedule(long step, const TrainConfig& cfg);

/// Deterministic, stateless batch stream: batch(step) depends only on
/// (corpus, config, seed, step), so resumed runs rebuild the stream exactly.
class BatchStream {
 public:
  BatchStream(const corpus::Corpus& corpus, const TrainConfig& cfg,
              const encoder::EncoderModel& frozen_encoder, const signal::StftConfig& stft,
              const signal::FbankConfig& fbank);

  TrainingBatch at(long step) const;

 private:
  const corpus::Corpus& corpus_;
  TrainConfig cfg_;
  const encoder::EncoderModel& encoder_;
  signal::StftConfig stft_;
  signal::FbankConfig fbank_;
  std::vector<std::string> speakers_;
  std::map<std::string, std::vector<size_t>> by_speaker_;
};

inline BatchStream make_batches(const corpus::Corpus& corpus, const TrainConfig& cfg,
                                const encoder::EncoderModel& frozen_encoder,
                                const signal::StftConfig& stft,
                                const signal::FbankConfig& fbank) {
  return BatchStream(corpus, cfg, frozen_encoder, stft, fbank);
}

/// Forward pass per batch, loss breakdown, one optimizer update on the
/// generator only. Returns nullopt when the batch was skipped as degenerate.
std::optional<losses::BatchLossBreakdown> train_step(
    const TrainingBatch& batch, generator::PerturbationGenerator& gen,
    const encoder::EncoderModel& frozen, nn::Adam& opt, const TrainConfig& cfg,
    const signal::StftConfig& stft, const signal::FbankConfig& fbank, long step,
    bool* grad_clipped = nullptr);

struct StepRecord {
  long step;
  double lr;
  losses::BatchLossBreakdown breakdown;
};

using StepObserver = std::function<void(const StepRecord&)>;

struct TrainResult {
  std::string final_checkpoint;
  std::string metrics_path;
  long steps_done = 0;
  long steps_skipped = 0;
};

/// Full training run with periodic checkpoints, a final checkpoint, and one
/// JSONL metrics record per completed step. `resume_from` restarts from a
/// train-state checkpoint written by a previous run.
TrainResult train_generator(const corpus::Corpus& corpus,
                            const encoder::EncoderModel& frozen_encoder,
                            generator::PerturbationGenerator& gen, const TrainConfig& cfg,
                            const signal::StftConfig& stft, const signal::FbankConfig& fbank,
                            const std::string& out_dir, const std::string& resume_from = "",
                            const StepObserver& observer = nullptr);

}  // namespace veil::training
