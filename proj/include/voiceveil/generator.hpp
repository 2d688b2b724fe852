#pragma once

#include <cstdint>
#include <string>

#include "voiceveil/autodiff.hpp"
#include "voiceveil/nn.hpp"
#include "voiceveil/signal.hpp"

namespace veil::generator {

using Mat = ad::Mat;

struct GeneratorConfig {
  int n_blocks = 6;
  int conv_kernel = 31;
  int n_heads = 4;
  int hidden_size = 1024;
  int io_size = 256;  // equals StftConfig::n_bins
  std::string activation = "relu";
  int rel_bias_radius = 64;

  void validate() const;
  static GeneratorConfig desk_preset();  // 2 blocks, hidden 256, 2 heads
};

/// Frame-synchronous Conformer stack mapping a magnitude spectrogram to an
/// additive perturbation in linear magnitude units. Input magnitudes are
/// log-compressed at the entrance; the output projection starts at zero so an
/// untrained generator is the identity anonymizer.
class PerturbationGenerator {
 public:
  PerturbationGenerator(GeneratorConfig cfg, uint64_t seed);

  /// magnitude [T x io_size] -> perturbation [T x io_size] on the tape.
  ad::Var forward(ad::Tape& tape, nn::Binder& binder, ad::Var magnitude) const;

  /// Plain inference; deterministic per (input, parameters).
  Mat generate(const Mat& magnitude) const;

  nn::Binder binder(ad::Tape& tape, bool trainable) const;
  const GeneratorConfig& config() const { return cfg_; }
  nn::ParamStore& params() const { return params_; }
  uint64_t param_hash() const { return params_.content_hash(); }

 private:
  GeneratorConfig cfg_;
  mutable nn::ParamStore params_;
};

/// S~ = max(S + P, 0); shapes must agree.
Mat perturb(const Mat& magnitude, const Mat& perturbation);

/// Inference flow: stft -> perturbation -> additive magnitude -> istft with
/// the original phase. Output length equals the input length.
signal::Waveform anonymize(const signal::Waveform& w, const PerturbationGenerator& g,
                           const signal::StftConfig& cfg);

}  // namespace veil::generator
