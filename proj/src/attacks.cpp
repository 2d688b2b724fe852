#include "voiceveil/attacks.hpp"

#include <cmath>
#include <stdexcept>

namespace veil::attacks {

void AttackConfig::validate() const {
  if (epsilon <= 0.0) throw std::invalid_argument("AttackConfig: epsilon must be > 0");
  // step_size == epsilon is admitted for the single-step degenerate schedule.
  if (!(step_size > 0.0 && step_size <= epsilon)) {
    throw std::invalid_argument("AttackConfig: need 0 < step_size <= epsilon");
  }
  if (iterations < 1) throw std::invalid_argument("AttackConfig: iterations must be >= 1");
  if (momentum < 0.0) throw std::invalid_argument("AttackConfig: momentum must be >= 0");
}

Waveform clip_linf(const Waveform& candidate, const Waveform& origin, double epsilon) {
  if (candidate.samples.size() != origin.samples.size()) {
    throw std::invalid_argument("clip_linf: length mismatch");
  }
  Waveform out;
  out.sample_rate = origin.sample_rate;
  out.samples = candidate.samples.array()
                    .max(origin.samples.array() - epsilon)
                    .min(origin.samples.array() + epsilon)
                    .max(-1.0)
                    .min(1.0)
                    .matrix();
  return out;
}

double untargeted_speaker_loss(const Waveform& wt, const encoder::SpeakerEmbedding& z_ref,
                               const encoder::EncoderModel& m, const signal::StftConfig& stft,
                               const signal::FbankConfig& fbank, Vec* grad_out) {
  ad::Tape tape;
  ad::Var wave = tape.leaf(wt.samples);
  ad::Var mag = signal::stft_magnitude(tape, wave, stft);
  const ad::Mat mel = signal::mel_filter_matrix(fbank, stft, wt.sample_rate);
  ad::Var feats = signal::log_filterbank_graph(tape, mag, mel, fbank.log_floor);
  nn::Binder b(tape, m.params(), false);
  ad::Var emb = m.forward(tape, b, feats);

  ad::Var ref = tape.constant(z_ref.vector.transpose());
  ad::Var dot = tape.sum(tape.mul(ref, emb));
  ad::Var nr = tape.sqrt(tape.sum(tape.square(ref)));
  ad::Var ne = tape.sqrt(tape.sum(tape.square(emb)));
  ad::Var loss = tape.neg(tape.div(dot, tape.mul(nr, ne)));

  if (grad_out) {
    tape.backward(loss);
    *grad_out = wave.grad().col(0);
  }
  return loss.scalar();
}

namespace {

Waveform run_attack(const Waveform& w, const encoder::EncoderModel& m, AttackConfig cfg,
                    std::vector<Waveform>* trace) {
  cfg.validate();
  if (!m.frozen()) throw std::invalid_argument("attack: encoder must be frozen");

  const encoder::SpeakerEmbedding z_ref = encoder::embed_waveform(w, m, cfg.stft, cfg.fbank);
  GradientState state;
  state.accumulated = Vec::Zero(w.samples.size());

  Waveform xt = w;
  for (state.iteration = 0; state.iteration < cfg.iterations; ++state.iteration) {
    Vec grad;
    untargeted_speaker_loss(xt, z_ref, m, cfg.stft, cfg.fbank, &grad);
    const double l1 = grad.lpNorm<1>();
    if (l1 >= 1e-12) {
      state.accumulated = cfg.momentum * state.accumulated + grad / l1;
    } else {
      state.accumulated *= cfg.momentum;
    }
    Waveform step = xt;
    step.samples += cfg.step_size * state.accumulated.array().sign().matrix();
    xt = clip_linf(step, w, cfg.epsilon);
    if (trace) trace->push_back(xt);
  }
  return xt;
}

}  // namespace

Waveform mi_fgsm(const Waveform& w, const encoder::EncoderModel& m, const AttackConfig& cfg,
                 std::vector<Waveform>* trace) {
  return run_attack(w, m, cfg, trace);
}

Waveform i_fgsm(const Waveform& w, const encoder::EncoderModel& m, const AttackConfig& cfg,
                std::vector<Waveform>* trace) {
  AttackConfig c = cfg;
  c.momentum = 0.0;
  return run_attack(w, m, c, trace);
}

Waveform fgsm(const Waveform& w, const encoder::EncoderModel& m, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.momentum = 0.0;
  c.iterations = 1;
  c.step_size = c.epsilon;
  return run_attack(w, m, c, nullptr);
}

Waveform gra(const Waveform&, const encoder::EncoderModel&, const AttackConfig&,
             const GraConfig&) {
  throw std::runtime_error(
      "gra: not implemented - no update rule is available in this toolkit; "
      "its hyperparameters are parsed for forward compatibility only");
}

}  // namespace veil::attacks
