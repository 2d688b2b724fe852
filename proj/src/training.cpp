#include "voiceveil/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <stdexcept>

#include "voiceveil/checkpoint.hpp"
#include "voiceveil/runconfig.hpp"

namespace veil::training {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
  if (warmup_steps < 1) throw std::invalid_argument("TrainConfig: warmup_steps must be >= 1");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) {
    throw std::invalid_argument("TrainConfig: need 0 < decay_rate <= 1");
  }
  if (total_steps < 1) throw std::invalid_argument("TrainConfig: total_steps must be >= 1");
  if (crop_seconds <= 0.0) throw std::invalid_argument("TrainConfig: crop_seconds must be > 0");
  weights.validate();
}

double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
  if (step <= cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  }
  return cfg.peak_lr * std::pow(cfg.decay_rate, static_cast<double>(step - cfg.warmup_steps));
}

BatchStream::BatchStream(const corpus::Corpus& corpus, const TrainConfig& cfg,
                         const encoder::EncoderModel& frozen_encoder,
                         const signal::StftConfig& stft, const signal::FbankConfig& fbank)
    : corpus_(corpus), cfg_(cfg), encoder_(frozen_encoder), stft_(stft), fbank_(fbank) {
  cfg_.validate();
  if (corpus.size() < static_cast<size_t>(cfg.batch_size)) {
    throw std::invalid_argument("make_batches: corpus smaller than one batch");
  }
  speakers_ = corpus.speakers();
  by_speaker_ = corpus.by_speaker();
}

TrainingBatch BatchStream::at(long step) const {
  // Stateless per-step RNG keeps the stream identical across resumes.
  std::mt19937_64 rng(cfg_.seed * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(step));
  const int k = cfg_.batch_size;
  const long crop_len = static_cast<long>(cfg_.crop_seconds * 16000);

  // K distinct speakers when the corpus allows, else with replacement.
  std::vector<size_t> spk_pick;
  if (speakers_.size() >= static_cast<size_t>(k)) {
    std::vector<size_t> order(speakers_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    spk_pick.assign(order.begin(), order.begin() + k);
  } else {
    std::uniform_int_distribution<size_t> pick(0, speakers_.size() - 1);
    for (int i = 0; i < k; ++i) spk_pick.push_back(pick(rng));
  }

  TrainingBatch batch;
  for (size_t si : spk_pick) {
    const auto& utt_idxs = by_speaker_.at(speakers_[si]);
    std::uniform_int_distribution<size_t> pick_utt(0, utt_idxs.size() - 1);
    const corpus::Utterance& u = corpus_.at(utt_idxs[pick_utt(rng)]);
    const signal::Waveform audio = corpus_.audio(u);
    const long max_off = std::max<long>(0, audio.samples.size() - crop_len);
    std::uniform_int_distribution<long> pick_off(0, max_off);
    bool padded = false;
    const signal::Waveform clip = corpus::crop(audio, crop_len, pick_off(rng), &padded);
    if (padded) {
      std::cerr << "[train] crop padded: " << u.id << " shorter than "
                << cfg_.crop_seconds << " s\n";
    }

    const signal::Spectrogram spec = signal::stft(clip, stft_);
    const signal::FeatureFrames feats =
        signal::log_filterbank(spec, fbank_, stft_, clip.sample_rate);
    batch.speakers.push_back(u.speaker);
    batch.magnitudes.push_back(spec.magnitude);
    batch.features.push_back(feats.frames);
    batch.embeddings.push_back(encoder::embed(feats, encoder_).vector);
    batch.was_padded.push_back(padded);
  }
  return batch;
}

std::optional<losses::BatchLossBreakdown> train_step(
    const TrainingBatch& batch, generator::PerturbationGenerator& gen,
    const encoder::EncoderModel& frozen, nn::Adam& opt, const TrainConfig& cfg,
    const signal::StftConfig& stft, const signal::FbankConfig& fbank, long step,
    bool* grad_clipped) {
  if (!frozen.frozen()) throw std::invalid_argument("train_step: encoder must be frozen");
  const size_t k = batch.magnitudes.size();
  if (k == 0) throw std::invalid_argument("train_step: empty batch");

  ad::Tape tape;
  nn::Binder gen_binder = gen.binder(tape, true);
  nn::Binder enc_binder = frozen.binder(tape);
  const ad::Mat mel = signal::mel_filter_matrix(fbank, stft, 16000);

  std::vector<ad::Var> f_orig, f_pert, z_orig, z_pert;
  for (size_t i = 0; i < k; ++i) {
    ad::Var s = tape.constant(batch.magnitudes[i]);
    ad::Var p = gen.forward(tape, gen_binder, s);
    ad::Var s_pert = tape.clamp_min(tape.add(s, p), 0.0);
    ad::Var feats = signal::log_filterbank_graph(tape, s_pert, mel, fbank.log_floor);
    f_pert.push_back(feats);
    z_pert.push_back(frozen.forward(tape, enc_binder, feats));
    f_orig.push_back(tape.constant(batch.features[i]));
    z_orig.push_back(tape.constant(batch.embeddings[i].transpose()));
  }

  losses::TotalLossGraph graph;
  try {
    graph = losses::total_loss_graph(tape, f_orig, f_pert, z_orig, z_pert, cfg.weights);
  } catch (const std::runtime_error& e) {
    std::cerr << "[train] step " << step << " skipped: " << e.what() << "\n";
    return std::nullopt;
  }

  tape.backward(graph.total);
  opt.step(gen_binder.bound(), lr_schedule(step, cfg), cfg.grad_clip, grad_clipped);

  losses::BatchLossBreakdown out;
  out.perceptual = graph.perceptual.scalar();
  out.angular = graph.angular.scalar();
  out.batch_mean = graph.batch_mean.scalar();
  out.total = graph.total.scalar();
  out.pseudo_speaker = graph.pseudo_speaker;
  out.batch_size = static_cast<int>(k);
  return out;
}

namespace {

void save_train_state(const std::string& path, const generator::PerturbationGenerator& gen,
                      const nn::Adam& opt, const TrainConfig& cfg, long step) {
  checkpoint::Checkpoint c;
  c.component = "generator-train-state";
  c.config = {{"generator", gen.config()}, {"train", cfg}, {"step", step}};
  c.arrays = gen.params().tensors();
  for (const auto& [name, m] : opt.state()) c.arrays[name] = m;
  checkpoint::save_checkpoint(path, c);
}

}  // namespace

TrainResult train_generator(const corpus::Corpus& corpus,
                            const encoder::EncoderModel& frozen_encoder,
                            generator::PerturbationGenerator& gen, const TrainConfig& cfg,
                            const signal::StftConfig& stft, const signal::FbankConfig& fbank,
                            const std::string& out_dir, const std::string& resume_from,
                            const StepObserver& observer) {
  cfg.validate();
  if (!frozen_encoder.frozen()) {
    throw std::invalid_argument("train_generator: encoder must be frozen");
  }
  if (gen.config().io_size != stft.n_bins) {
    throw std::invalid_argument("train_generator: generator io_size must equal stft n_bins");
  }
  fs::create_directories(out_dir);

  nn::Adam opt;
  long start_step = 0;
  if (!resume_from.empty()) {
    checkpoint::Checkpoint c = checkpoint::load_checkpoint(resume_from);
    if (c.component != "generator-train-state") {
      throw std::runtime_error("train_generator: '" + resume_from +
                               "' is not a train-state checkpoint");
    }
    start_step = c.config.at("step").get<long>();
    std::map<std::string, ad::Mat> params, adam_state;
    for (const auto& [name, m] : c.arrays) {
      (name.rfind("adam.", 0) == 0 ? adam_state : params)[name] = m;
    }
    config::restore_params(gen.params(), params, "train-state");
    opt.load_state(adam_state, start_step);
  }

  const BatchStream stream = make_batches(corpus, cfg, frozen_encoder, stft, fbank);
  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("train_generator: cannot open " + metrics_path);

  const uint64_t enc_hash_before = frozen_encoder.param_hash();
  TrainResult result;
  for (long step = start_step + 1; step <= cfg.total_steps; ++step) {
    const TrainingBatch batch = stream.at(step);
    bool clipped = false;
    auto breakdown =
        train_step(batch, gen, frozen_encoder, opt, cfg, stft, fbank, step, &clipped);
    if (!breakdown) {
      ++result.steps_skipped;
      continue;
    }
    if (clipped) std::cerr << "[train] step " << step << ": gradient norm clipped\n";

    const double lr = lr_schedule(step, cfg);
    nlohmann::json rec = {{"step", step},
                          {"lr", lr},
                          {"perceptual", breakdown->perceptual},
                          {"angular", breakdown->angular},
                          {"batch_mean", breakdown->batch_mean},
                          {"total", breakdown->total},
                          {"alpha", cfg.weights.alpha},
                          {"beta", cfg.weights.beta},
                          {"gamma", cfg.weights.gamma}};
    metrics << rec.dump() << '\n';
    ++result.steps_done;
    if (observer) observer(StepRecord{step, lr, *breakdown});

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
        step < cfg.total_steps) {
      save_train_state((fs::path(out_dir) / "train_state.ckpt").string(), gen, opt, cfg,
                       step);
    }
  }
  metrics.flush();

  if (frozen_encoder.param_hash() != enc_hash_before) {
    throw std::logic_error("train_generator: frozen encoder parameters changed");
  }

  result.final_checkpoint = (fs::path(out_dir) / "generator.ckpt").string();
  checkpoint::save_checkpoint(result.final_checkpoint, config::to_checkpoint(gen));
  save_train_state((fs::path(out_dir) / "train_state.ckpt").string(), gen, opt, cfg,
                   cfg.total_steps);
  result.metrics_path = metrics_path;
  return result;
}

}  // namespace veil::training
