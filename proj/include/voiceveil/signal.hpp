#pragma once

#include <Eigen/Core>

#include <string>

#include "voiceveil/autodiff.hpp"

namespace veil::signal {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Mono audio signal. Samples live in [-1, 1] after any synthesis step.
struct Waveform {
  Vec samples;
  int sample_rate = 16000;

  long size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct StftConfig {
  int fft_size = 512;
  int win_length = 400;  // 25 ms at 16 kHz
  int hop_length = 160;  // 10 ms
  std::string window = "hann";
  int n_bins = 256;  // bins 0..255 retained, Nyquist dropped

  int full_bins() const { return fft_size / 2 + 1; }
  void validate() const;
};

/// Magnitude/phase pair from the STFT, both [T x n_bins].
struct Spectrogram {
  Mat magnitude;
  Mat phase;

  long frames() const { return magnitude.rows(); }
  long bins() const { return magnitude.cols(); }
};

struct FbankConfig {
  int n_mels = 40;
  double f_min = 20.0;
  double f_max = 7600.0;
  double log_floor = 1e-10;

  void validate(int sample_rate) const;
};

/// Log mel filterbank features, [T x n_mels].
struct FeatureFrames {
  Mat frames;

  long frame_count() const { return frames.rows(); }
};

// ---------------------------------------------------------------------------
// Waveform I/O (RIFF WAV, 16-bit PCM, mono, 16 kHz)

Waveform load_waveform(const std::string& path);
void save_waveform(const std::string& path, const Waveform& w);

// ---------------------------------------------------------------------------
// Analysis / synthesis

/// Periodic analysis window of the configured type.
Vec make_window(const StftConfig& cfg);

/// Centered, reflect-padded STFT; T = ceil(len / hop_length).
Spectrogram stft(const Waveform& w, const StftConfig& cfg);

/// Window-normalized overlap-add synthesis. Missing high bins are zero-filled.
/// Output has T * hop_length samples, clamped to [-1, 1].
Waveform istft(const Spectrogram& s, const StftConfig& cfg, int sample_rate = 16000);

/// frames[t] = log(max(M * power(s.magnitude[t]), log_floor)).
FeatureFrames log_filterbank(const Spectrogram& s, const FbankConfig& cfg,
                             const StftConfig& stft_cfg, int sample_rate = 16000);

/// Entrywise max(m, 0); perturbed magnitudes may go negative before this.
Mat clamp_magnitude(const Mat& m);

/// Triangular mel filter matrix [n_mels x n_bins] on the power spectrum.
Mat mel_filter_matrix(const FbankConfig& cfg, const StftConfig& stft_cfg, int sample_rate);

// ---------------------------------------------------------------------------
// Differentiable variants (graph-building). Values agree with the plain
// functions above bit for bit; the STFT node carries a bespoke adjoint so
// waveform-domain attacks can differentiate through the analysis chain.

/// wave is a [N x 1] tape node; returns magnitude [T x n_bins] and, when
/// phase_out != nullptr, the (non-differentiable) phase matrix.
ad::Var stft_magnitude(ad::Tape& tape, ad::Var wave, const StftConfig& cfg,
                       Mat* phase_out = nullptr);

/// Composes square -> mel projection -> floored log on the tape.
ad::Var log_filterbank_graph(ad::Tape& tape, ad::Var magnitude, const Mat& mel_matrix,
                             double log_floor);

}  // namespace veil::signal
