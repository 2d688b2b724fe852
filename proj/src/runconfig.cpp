#include "voiceveil/runconfig.hpp"

#include <fstream>
#include <stdexcept>

namespace {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

namespace veil::signal {

void to_json(nlohmann::json& j, const StftConfig& c) {
  j = {{"fft_size", c.fft_size},     {"win_length", c.win_length},
       {"hop_length", c.hop_length}, {"window", c.window},
       {"n_bins", c.n_bins}};
}

void from_json(const nlohmann::json& j, StftConfig& c) {
  get_if(j, "fft_size", c.fft_size);
  get_if(j, "win_length", c.win_length);
  get_if(j, "hop_length", c.hop_length);
  get_if(j, "window", c.window);
  get_if(j, "n_bins", c.n_bins);
}

void to_json(nlohmann::json& j, const FbankConfig& c) {
  j = {{"n_mels", c.n_mels}, {"f_min", c.f_min}, {"f_max", c.f_max},
       {"log_floor", c.log_floor}};
}

void from_json(const nlohmann::json& j, FbankConfig& c) {
  get_if(j, "n_mels", c.n_mels);
  get_if(j, "f_min", c.f_min);
  get_if(j, "f_max", c.f_max);
  get_if(j, "log_floor", c.log_floor);
}

}  // namespace veil::signal

namespace veil::losses {

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  get_if(j, "alpha", w.alpha);
  get_if(j, "beta", w.beta);
  get_if(j, "gamma", w.gamma);
}

}  // namespace veil::losses

namespace veil::encoder {

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"n_mels", c.n_mels},       {"channels", c.channels}, {"embed_dim", c.embed_dim},
       {"n_layers", c.n_layers},   {"min_frames", c.min_frames}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  get_if(j, "n_mels", c.n_mels);
  get_if(j, "channels", c.channels);
  get_if(j, "embed_dim", c.embed_dim);
  get_if(j, "n_layers", c.n_layers);
  get_if(j, "min_frames", c.min_frames);
}

void to_json(nlohmann::json& j, const EncoderTrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"crop_seconds", c.crop_seconds},
       {"margin", c.margin},
       {"scale", c.scale},
       {"holdout_per_speaker", c.holdout_per_speaker},
       {"seed", c.seed},
       {"model", c.model},
       {"stft", c.stft},
       {"fbank", c.fbank}};
}

void from_json(const nlohmann::json& j, EncoderTrainConfig& c) {
  get_if(j, "steps", c.steps);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "lr", c.lr);
  get_if(j, "crop_seconds", c.crop_seconds);
  get_if(j, "margin", c.margin);
  get_if(j, "scale", c.scale);
  get_if(j, "holdout_per_speaker", c.holdout_per_speaker);
  get_if(j, "seed", c.seed);
  get_if(j, "model", c.model);
  get_if(j, "stft", c.stft);
  get_if(j, "fbank", c.fbank);
}

}  // namespace veil::encoder

namespace veil::generator {

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"n_blocks", c.n_blocks},       {"conv_kernel", c.conv_kernel},
       {"n_heads", c.n_heads},         {"hidden_size", c.hidden_size},
       {"io_size", c.io_size},         {"activation", c.activation},
       {"rel_bias_radius", c.rel_bias_radius}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  get_if(j, "n_blocks", c.n_blocks);
  get_if(j, "conv_kernel", c.conv_kernel);
  get_if(j, "n_heads", c.n_heads);
  get_if(j, "hidden_size", c.hidden_size);
  get_if(j, "io_size", c.io_size);
  get_if(j, "activation", c.activation);
  get_if(j, "rel_bias_radius", c.rel_bias_radius);
}

}  // namespace veil::generator

namespace veil::training {

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"crop_seconds", c.crop_seconds},
       {"peak_lr", c.peak_lr},
       {"warmup_steps", c.warmup_steps},
       {"decay_rate", c.decay_rate},
       {"total_steps", c.total_steps},
       {"seed", c.seed},
       {"loss_weights", c.weights},
       {"grad_clip", c.grad_clip},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "crop_seconds", c.crop_seconds);
  get_if(j, "peak_lr", c.peak_lr);
  get_if(j, "warmup_steps", c.warmup_steps);
  get_if(j, "decay_rate", c.decay_rate);
  get_if(j, "total_steps", c.total_steps);
  get_if(j, "seed", c.seed);
  get_if(j, "loss_weights", c.weights);
  get_if(j, "grad_clip", c.grad_clip);
  get_if(j, "checkpoint_every", c.checkpoint_every);
}

}  // namespace veil::training

namespace veil::attacks {

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"epsilon", c.epsilon},   {"step_size", c.step_size}, {"momentum", c.momentum},
       {"iterations", c.iterations}, {"seed", c.seed},       {"stft", c.stft},
       {"fbank", c.fbank}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  get_if(j, "epsilon", c.epsilon);
  get_if(j, "step_size", c.step_size);
  get_if(j, "momentum", c.momentum);
  get_if(j, "iterations", c.iterations);
  get_if(j, "seed", c.seed);
  get_if(j, "stft", c.stft);
  get_if(j, "fbank", c.fbank);
}

}  // namespace veil::attacks

namespace veil::config {

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  nlohmann::json j;
  f >> j;
  return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
}

void restore_params(nn::ParamStore& store, const std::map<std::string, ad::Mat>& arrays,
                    const std::string& what) {
  if (arrays.size() != store.count()) {
    throw std::runtime_error(what + ": checkpoint holds " + std::to_string(arrays.size()) +
                             " arrays, model expects " + std::to_string(store.count()));
  }
  for (const auto& [name, m] : arrays) {
    ad::Mat& dst = store.get(name);
    if (dst.rows() != m.rows() || dst.cols() != m.cols()) {
      throw std::runtime_error(what + ": shape mismatch for " + name);
    }
    dst = m;
  }
}

checkpoint::Checkpoint to_checkpoint(const encoder::EncoderModel& m) {
  checkpoint::Checkpoint c;
  c.component = "encoder";
  c.config = m.config();
  c.arrays = m.params().tensors();
  return c;
}

encoder::EncoderModel encoder_from_checkpoint(const checkpoint::Checkpoint& c) {
  if (c.component != "encoder") {
    throw std::runtime_error("expected an encoder checkpoint, found '" + c.component + "'");
  }
  encoder::EncoderConfig cfg = c.config.get<encoder::EncoderConfig>();
  encoder::EncoderModel m(cfg, 0);
  restore_params(m.params(), c.arrays, "encoder checkpoint");
  m.set_frozen(true);
  return m;
}

encoder::EncoderModel load_encoder(const std::string& path) {
  return encoder_from_checkpoint(checkpoint::load_checkpoint(path));
}

checkpoint::Checkpoint to_checkpoint(const generator::PerturbationGenerator& g) {
  checkpoint::Checkpoint c;
  c.component = "generator";
  c.config = g.config();
  c.arrays = g.params().tensors();
  return c;
}

generator::PerturbationGenerator generator_from_checkpoint(const checkpoint::Checkpoint& c) {
  if (c.component != "generator") {
    throw std::runtime_error("expected a generator checkpoint, found '" + c.component + "'");
  }
  generator::GeneratorConfig cfg = c.config.get<generator::GeneratorConfig>();
  generator::PerturbationGenerator g(cfg, 0);
  restore_params(g.params(), c.arrays, "generator checkpoint");
  return g;
}

generator::PerturbationGenerator load_generator(const std::string& path) {
  return generator_from_checkpoint(checkpoint::load_checkpoint(path));
}

}  // namespace veil::config
