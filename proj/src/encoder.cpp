#include "voiceveil/encoder.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "voiceveil/evaluation.hpp"

namespace veil::encoder {

double cosine_score(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
  if (a.vector.size() != b.vector.size()) {
    throw std::invalid_argument("cosine_score: dimension mismatch");
  }
  const double na = a.vector.norm(), nb = b.vector.norm();
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument("cosine_score: zero-norm embedding");
  }
  return a.vector.dot(b.vector) / (na * nb);
}

namespace {

constexpr int kKernels[3] = {5, 3, 3};
constexpr int kDilations[3] = {1, 2, 3};

}  // namespace

EncoderModel::EncoderModel(EncoderConfig cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.n_layers != 3) throw std::invalid_argument("EncoderModel: n_layers must be 3");
  std::mt19937_64 rng(seed);
  long in = cfg.n_mels;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "conv" + std::to_string(l);
    nn::init_conv1d(params_, p, in, cfg.channels, kKernels[l], rng);
    nn::init_layer_norm(params_, p + ".norm", cfg.channels);
    in = cfg.channels;
  }
  nn::init_linear(params_, "proj", 2L * cfg.channels, cfg.embed_dim, rng);
}

nn::Binder EncoderModel::binder(ad::Tape& tape) const {
  return nn::Binder(tape, params_, !frozen_);
}

ad::Var EncoderModel::forward(ad::Tape& t, nn::Binder& b, ad::Var features) const {
  if (features.cols() != cfg_.n_mels) {
    throw std::invalid_argument("encoder: expected " + std::to_string(cfg_.n_mels) +
                                " feature channels, got " + std::to_string(features.cols()));
  }
  if (features.rows() < cfg_.min_frames) {
    throw std::invalid_argument("encoder: need at least " + std::to_string(cfg_.min_frames) +
                                " frames, got " + std::to_string(features.rows()));
  }
  ad::Var h = features;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "conv" + std::to_string(l);
    h = nn::conv1d(t, b, p, h, kKernels[l], kDilations[l]);
    h = nn::layer_norm(t, b, p + ".norm", h);
    h = t.relu(h);
  }
  // Statistics pooling: concat of per-channel mean and std over time.
  ad::Var mu = t.col_mean(h);
  ad::Var ex2 = t.col_mean(t.square(h));
  ad::Var sd = t.sqrt(t.clamp_min(t.sub(ex2, t.square(mu)), 1e-10));
  ad::Var pooled = t.concat_cols({mu, sd});
  return nn::linear(t, b, "proj", pooled);
}

SpeakerEmbedding embed(const signal::FeatureFrames& f, const EncoderModel& m) {
  ad::Tape tape;
  nn::Binder b = m.binder(tape);
  ad::Var e = m.forward(tape, b, tape.constant(f.frames));
  SpeakerEmbedding out;
  out.vector = e.value().row(0).transpose();
  return out;
}

SpeakerEmbedding embed_waveform(const signal::Waveform& w, const EncoderModel& m,
                                const signal::StftConfig& stft_cfg,
                                const signal::FbankConfig& fbank_cfg) {
  return embed(signal::log_filterbank(signal::stft(w, stft_cfg), fbank_cfg, stft_cfg,
                                      w.sample_rate),
               m);
}

EncoderModel freeze(EncoderModel m) {
  m.set_frozen(true);
  return m;
}

EncoderModel train_reference_encoder(const corpus::Corpus& corpus,
                                     const EncoderTrainConfig& cfg,
                                     EncoderTrainReport* report) {
  const auto speakers = corpus.speakers();
  if (speakers.size() < 2) {
    throw std::invalid_argument("train_reference_encoder: need at least 2 speakers, got " +
                                std::to_string(speakers.size()));
  }
  for (const auto& [spk, idxs] : corpus.by_speaker()) {
    if (idxs.size() < 2) {
      throw std::invalid_argument("train_reference_encoder: speaker " + spk +
                                  " has fewer than 2 utterances");
    }
  }

  auto [train_part, holdout] = corpus.split_holdout(cfg.holdout_per_speaker);
  const auto by_spk = train_part.by_speaker();
  std::vector<std::string> spk_names;
  for (const auto& [s, _] : by_spk) spk_names.push_back(s);
  const int n_spk = static_cast<int>(spk_names.size());

  EncoderModel model(cfg.model, cfg.seed);
  nn::ParamStore head;
  {
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    head.create("amhead.weight", cfg.model.embed_dim, n_spk) =
        nn::uniform_init(cfg.model.embed_dim, n_spk,
                         std::sqrt(1.0 / cfg.model.embed_dim), rng);
  }

  const long crop_len = static_cast<long>(cfg.crop_seconds * 16000);
  nn::Adam opt;
  double last_loss = 0.0;
  std::mt19937_64 sampler(cfg.seed);
  std::uniform_int_distribution<size_t> pick_spk(0, static_cast<size_t>(n_spk) - 1);

  for (int step = 1; step <= cfg.steps; ++step) {
    // Distinct speakers per batch when possible.
    std::vector<size_t> order(static_cast<size_t>(n_spk));
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), sampler);

    ad::Tape tape;
    nn::Binder mb = model.binder(tape);
    nn::Binder hb(tape, head, true);
    std::vector<ad::Var> rows;
    std::vector<int> labels;
    for (int k = 0; k < cfg.batch_size; ++k) {
      const size_t si = k < n_spk ? order[static_cast<size_t>(k)] : pick_spk(sampler);
      const auto& utt_idxs = by_spk.at(spk_names[si]);
      std::uniform_int_distribution<size_t> pick_utt(0, utt_idxs.size() - 1);
      const corpus::Utterance& u = train_part.at(utt_idxs[pick_utt(sampler)]);
      const signal::Waveform audio = train_part.audio(u);
      const long max_off = std::max<long>(0, audio.samples.size() - crop_len);
      std::uniform_int_distribution<long> pick_off(0, max_off);
      const signal::Waveform clip = corpus::crop(audio, crop_len, pick_off(sampler));
      const auto feats = signal::log_filterbank(signal::stft(clip, cfg.stft), cfg.fbank,
                                                cfg.stft, clip.sample_rate);
      rows.push_back(model.forward(tape, mb, tape.constant(feats.frames)));
      labels.push_back(static_cast<int>(si));
    }

    ad::Var emb = tape.concat_rows(rows);  // [B x D]
    ad::Var rn = tape.sqrt(tape.cadd(tape.row_sum(tape.square(emb)), 1e-12));
    ad::Var emb_n = tape.col_broadcast_mul(emb, tape.inv(rn));
    ad::Var w = hb("amhead.weight");
    ad::Var cn = tape.sqrt(tape.cadd(tape.cmul(tape.col_mean(tape.square(w)),
                                               static_cast<double>(w.rows())),
                                     1e-12));
    ad::Var w_n = tape.row_broadcast_mul(w, tape.inv(cn));
    ad::Var cos = tape.matmul(emb_n, w_n);  // [B x n_spk]

    Mat onehot = Mat::Zero(cfg.batch_size, n_spk);
    for (int k = 0; k < cfg.batch_size; ++k) onehot(k, labels[k]) = 1.0;
    ad::Var logits = tape.cmul(tape.sub(cos, tape.cmul(tape.constant(onehot), cfg.margin)),
                               cfg.scale);
    ad::Var loss = tape.cross_entropy_rows(logits, labels);
    tape.backward(loss);
    last_loss = loss.scalar();

    std::vector<nn::BoundParam> bound = mb.bound();
    for (const auto& p : hb.bound()) bound.push_back(p);
    opt.step(bound, cfg.lr);
  }

  model.set_frozen(true);

  if (report) {
    report->final_loss = last_loss;
    report->steps = cfg.steps;
    report->n_speakers = n_spk;
    const auto trials =
        evaluation::make_trials(holdout, evaluation::Protocol::original, cfg.seed);
    const auto scores = evaluation::score_trials(trials, holdout, model,
                                                 evaluation::Protocol::original, nullptr,
                                                 cfg.stft, cfg.fbank);
    report->holdout_eer = evaluation::compute_eer(scores);
    report->holdout_trials = static_cast<int>(trials.size());
  }
  return model;
}

}  // namespace veil::encoder
