#include "voiceveil/generator.hpp"

#include <random>
#include <stdexcept>

namespace veil::generator {

void GeneratorConfig::validate() const {
  if (n_blocks < 1) throw std::invalid_argument("GeneratorConfig: n_blocks must be >= 1");
  if (conv_kernel % 2 == 0) throw std::invalid_argument("GeneratorConfig: conv_kernel must be odd");
  if (io_size % n_heads != 0) {
    throw std::invalid_argument("GeneratorConfig: n_heads must divide the attention width");
  }
  if (activation != "relu") {
    throw std::invalid_argument("GeneratorConfig: unsupported activation '" + activation + "'");
  }
}

GeneratorConfig GeneratorConfig::desk_preset() {
  GeneratorConfig cfg;
  cfg.n_blocks = 2;
  cfg.hidden_size = 256;
  cfg.n_heads = 2;
  return cfg;
}

PerturbationGenerator::PerturbationGenerator(GeneratorConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const long d = cfg_.io_size;
  nn::init_linear(params_, "input", d, d, rng);
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string p = "block" + std::to_string(i);
    nn::init_layer_norm(params_, p + ".ffn1.norm", d);
    nn::init_linear(params_, p + ".ffn1.up", d, cfg_.hidden_size, rng);
    nn::init_linear(params_, p + ".ffn1.down", cfg_.hidden_size, d, rng);
    nn::init_mhsa(params_, p + ".mhsa", d, cfg_.n_heads, cfg_.rel_bias_radius, rng);
    nn::init_layer_norm(params_, p + ".conv.norm", d);
    nn::init_linear(params_, p + ".conv.pw1", d, 2 * d, rng);
    nn::init_depthwise_conv(params_, p + ".conv.dw", d, cfg_.conv_kernel, rng);
    nn::init_layer_norm(params_, p + ".conv.dwnorm", d);
    nn::init_linear(params_, p + ".conv.pw2", d, d, rng);
    nn::init_layer_norm(params_, p + ".ffn2.norm", d);
    nn::init_linear(params_, p + ".ffn2.up", d, cfg_.hidden_size, rng);
    nn::init_linear(params_, p + ".ffn2.down", cfg_.hidden_size, d, rng);
    nn::init_layer_norm(params_, p + ".final_norm", d);
  }
  // Zero output projection: training starts from the identity anonymizer.
  nn::init_linear(params_, "output", d, d, rng, /*zero=*/true);
}

nn::Binder PerturbationGenerator::binder(ad::Tape& tape, bool trainable) const {
  return nn::Binder(tape, params_, trainable);
}

namespace {

ad::Var macaron_ffn(ad::Tape& t, nn::Binder& b, const std::string& p, ad::Var x) {
  ad::Var h = nn::layer_norm(t, b, p + ".norm", x);
  h = t.relu(nn::linear(t, b, p + ".up", h));
  h = nn::linear(t, b, p + ".down", h);
  return t.add(x, t.cmul(h, 0.5));
}

ad::Var conv_module(ad::Tape& t, nn::Binder& b, const std::string& p, ad::Var x) {
  const long d = x.cols();
  ad::Var h = nn::layer_norm(t, b, p + ".norm", x);
  h = nn::linear(t, b, p + ".pw1", h);  // [T x 2d]
  ad::Var gate = t.sigmoid(t.slice_cols(h, static_cast<int>(d), static_cast<int>(d)));
  h = t.mul(t.slice_cols(h, 0, static_cast<int>(d)), gate);  // GLU
  h = t.depthwise_conv(h, b(p + ".dw.weight"));
  h = t.relu(nn::layer_norm(t, b, p + ".dwnorm", h));
  h = nn::linear(t, b, p + ".pw2", h);
  return t.add(x, h);
}

}  // namespace

ad::Var PerturbationGenerator::forward(ad::Tape& t, nn::Binder& b, ad::Var magnitude) const {
  if (magnitude.cols() != cfg_.io_size) {
    throw std::invalid_argument("generator: expected width " + std::to_string(cfg_.io_size) +
                                ", got " + std::to_string(magnitude.cols()));
  }
  if (magnitude.rows() < 1) throw std::invalid_argument("generator: empty input");

  // log(1 + S) conditioning; the perturbation itself stays in linear units.
  ad::Var x = t.log(t.cadd(t.clamp_min(magnitude, 0.0), 1.0));
  x = nn::linear(t, b, "input", x);
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string p = "block" + std::to_string(i);
    x = macaron_ffn(t, b, p + ".ffn1", x);
    x = nn::mhsa_relpos(t, b, p + ".mhsa", x, cfg_.n_heads, cfg_.rel_bias_radius);
    x = conv_module(t, b, p + ".conv", x);
    x = macaron_ffn(t, b, p + ".ffn2", x);
    x = nn::layer_norm(t, b, p + ".final_norm", x);
  }
  return nn::linear(t, b, "output", x);
}

Mat PerturbationGenerator::generate(const Mat& magnitude) const {
  ad::Tape tape;
  nn::Binder b = binder(tape, false);
  return forward(tape, b, tape.constant(magnitude)).value();
}

Mat perturb(const Mat& magnitude, const Mat& perturbation) {
  if (magnitude.rows() != perturbation.rows() || magnitude.cols() != perturbation.cols()) {
    throw std::invalid_argument("perturb: shape mismatch");
  }
  return signal::clamp_magnitude(magnitude + perturbation);
}

signal::Waveform anonymize(const signal::Waveform& w, const PerturbationGenerator& g,
                           const signal::StftConfig& cfg) {
  const signal::Spectrogram s = signal::stft(w, cfg);
  signal::Spectrogram st;
  st.magnitude = perturb(s.magnitude, g.generate(s.magnitude));
  st.phase = s.phase;
  signal::Waveform out = signal::istft(st, cfg, w.sample_rate);
  out.samples.conservativeResize(w.samples.size());
  return out;
}

}  // namespace veil::generator
