#pragma once

#include <cstdint>
#include <vector>

#include "voiceveil/encoder.hpp"
#include "voiceveil/signal.hpp"

namespace veil::attacks {

using Vec = ad::Vec;
using signal::Waveform;

struct AttackConfig {
  double epsilon = 0.0012;     // L-inf intensity on waveform samples
  double step_size = 0.00012;  // per-iteration sign step
  double momentum = 1.4;       // gradient accumulation decay
  int iterations = 10;
  uint64_t seed = 0;

  signal::StftConfig stft;
  signal::FbankConfig fbank;

  void validate() const;
};

struct GradientState {
  Vec accumulated;  // zero-initialized at iteration 0
  int iteration = 0;
};

/// Entrywise projection onto the L-inf ball around origin, then onto [-1, 1].
Waveform clip_linf(const Waveform& candidate, const Waveform& origin, double epsilon);

/// -cos(z_ref, F(w~)) through the full stft -> fbank -> encoder chain.
/// When grad_out is given it receives d(loss)/d(w~) per sample.
double untargeted_speaker_loss(const Waveform& wt, const encoder::SpeakerEmbedding& z_ref,
                               const encoder::EncoderModel& m, const signal::StftConfig& stft,
                               const signal::FbankConfig& fbank, Vec* grad_out = nullptr);

/// Momentum iterative sign-step ascent on the untargeted loss with
/// L1-normalized gradient accumulation; x~_0 = x, returns x~_I.
/// When trace != nullptr it receives the iterates x~_1 .. x~_I.
Waveform mi_fgsm(const Waveform& w, const encoder::EncoderModel& m, const AttackConfig& cfg,
                 std::vector<Waveform>* trace = nullptr);

/// mi_fgsm with momentum = 0.
Waveform i_fgsm(const Waveform& w, const encoder::EncoderModel& m, const AttackConfig& cfg,
                std::vector<Waveform>* trace = nullptr);

/// Single-step variant: iterations = 1, momentum = 0, step = epsilon.
Waveform fgsm(const Waveform& w, const encoder::EncoderModel& m, const AttackConfig& cfg);

/// Parsed for forward compatibility only; running it is an error.
struct GraConfig {
  int nearby_samples = 10;
};

[[noreturn]] Waveform gra(const Waveform& w, const encoder::EncoderModel& m,
                          const AttackConfig& cfg, const GraConfig& gra_cfg = {});

}  // namespace veil::attacks
