#pragma once

#include <cstdint>
#include <string>

#include "voiceveil/autodiff.hpp"
#include "voiceveil/corpus.hpp"
#include "voiceveil/nn.hpp"
#include "voiceveil/signal.hpp"

namespace veil::encoder {

using Mat = ad::Mat;
using Vec = ad::Vec;

/// Fixed-dimension speaker identity vector.
struct SpeakerEmbedding {
  Vec vector;
};

/// a.b / (|a||b|). Throws on dimension mismatch or zero-norm inputs.
double cosine_score(const SpeakerEmbedding& a, const SpeakerEmbedding& b);

struct EncoderConfig {
  int n_mels = 40;
  int channels = 128;
  int embed_dim = 192;
  int n_layers = 3;
  int min_frames = 16;  // receptive-field floor for embed()
};

/// Frame-level dilated-convolution stack with mean+std statistics pooling and
/// a linear projection to the embedding space. Frozen models never mutate
/// their parameters; gradient flow still reaches the input features.
class EncoderModel {
 public:
  EncoderModel(EncoderConfig cfg, uint64_t seed);

  /// features [T x n_mels] -> embedding [1 x embed_dim] on the tape.
  ad::Var forward(ad::Tape& tape, nn::Binder& binder, ad::Var features) const;

  /// Binds this model's parameters; trainable only when not frozen.
  nn::Binder binder(ad::Tape& tape) const;

  const EncoderConfig& config() const { return cfg_; }
  nn::ParamStore& params() const { return params_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  uint64_t param_hash() const { return params_.content_hash(); }

 private:
  EncoderConfig cfg_;
  mutable nn::ParamStore params_;
  bool frozen_ = false;
};

/// Deterministic embedding of a feature matrix.
SpeakerEmbedding embed(const signal::FeatureFrames& f, const EncoderModel& m);

/// Full pipeline convenience: waveform -> stft -> fbank -> embedding.
SpeakerEmbedding embed_waveform(const signal::Waveform& w, const EncoderModel& m,
                                const signal::StftConfig& stft_cfg,
                                const signal::FbankConfig& fbank_cfg);

/// Value-semantics freeze; idempotent.
EncoderModel freeze(EncoderModel m);

struct EncoderTrainConfig {
  int steps = 600;
  int batch_size = 16;
  double lr = 1e-3;
  double crop_seconds = 1.2;
  double margin = 0.2;   // additive-margin softmax
  double scale = 30.0;
  int holdout_per_speaker = 2;
  uint64_t seed = 1;
  EncoderConfig model;
  signal::StftConfig stft;
  signal::FbankConfig fbank;
};

struct EncoderTrainReport {
  double final_loss = 0.0;
  double holdout_eer = 1.0;
  int steps = 0;
  int n_speakers = 0;
  int holdout_trials = 0;
};

/// Classification training with additive-margin softmax; the head is
/// discarded and the held-out original-speech EER is reported.
EncoderModel train_reference_encoder(const corpus::Corpus& corpus,
                                     const EncoderTrainConfig& cfg,
                                     EncoderTrainReport* report = nullptr);

}  // namespace veil::encoder
