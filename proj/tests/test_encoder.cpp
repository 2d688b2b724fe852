#include "voiceveil/encoder.hpp"

#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "voiceveil/corpus.hpp"

using namespace veil;
using encoder::EncoderConfig;
using encoder::EncoderModel;
using encoder::SpeakerEmbedding;
using testutil::random_mat;

namespace {

EncoderConfig micro_encoder() {
  EncoderConfig cfg;
  cfg.n_mels = 20;
  cfg.channels = 24;
  cfg.embed_dim = 16;
  return cfg;
}

signal::FeatureFrames random_features(long frames, int mels, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return signal::FeatureFrames{random_mat(frames, mels, rng)};
}

}  // namespace

TEST_CASE("cosine_score: identities") {
  SpeakerEmbedding v{(ad::Vec(3) << 1.0, 2.0, -1.0).finished()};
  SpeakerEmbedding nv{-v.vector};
  CHECK(encoder::cosine_score(v, v) == doctest::Approx(1.0));
  CHECK(encoder::cosine_score(v, nv) == doctest::Approx(-1.0));

  SpeakerEmbedding e1{(ad::Vec(2) << 1.0, 0.0).finished()};
  SpeakerEmbedding e2{(ad::Vec(2) << 0.0, 1.0).finished()};
  CHECK(encoder::cosine_score(e1, e2) == doctest::Approx(0.0));

  SpeakerEmbedding zero{ad::Vec::Zero(2)};
  CHECK_THROWS_AS((void)encoder::cosine_score(e1, zero), std::invalid_argument);
  SpeakerEmbedding wrong{ad::Vec::Zero(3)};
  CHECK_THROWS_AS((void)encoder::cosine_score(e1, wrong), std::invalid_argument);
}

TEST_CASE("cosine_score: invariant under positive scaling") {
  std::mt19937_64 rng(71);
  for (int rep = 0; rep < 20; ++rep) {
    SpeakerEmbedding a{testutil::random_vec(8, rng)};
    SpeakerEmbedding b{testutil::random_vec(8, rng)};
    const double base = encoder::cosine_score(a, b);
    SpeakerEmbedding a2{a.vector * 13.7};
    SpeakerEmbedding b2{b.vector * 0.004};
    CHECK(std::abs(encoder::cosine_score(a2, b2) - base) < 1e-12);
  }
}

TEST_CASE("embed: deterministic, self-similar, and contract-checked") {
  EncoderModel m(micro_encoder(), 5);
  auto f = random_features(30, 20, 72);
  SpeakerEmbedding a = encoder::embed(f, m);
  SpeakerEmbedding b = encoder::embed(f, m);
  CHECK(a.vector == b.vector);
  CHECK(a.vector.size() == 16);
  CHECK(encoder::cosine_score(a, b) == doctest::Approx(1.0));

  CHECK_THROWS_AS((void)encoder::embed(random_features(30, 19, 73), m),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)encoder::embed(random_features(5, 20, 74), m),
                  std::invalid_argument);
}

TEST_CASE("embed: input gradient matches finite differences") {
  EncoderModel m(micro_encoder(), 7);
  m.set_frozen(true);
  std::mt19937_64 rng(75);
  const ad::Mat feats = random_mat(20, 20, rng);
  const ad::Mat probe = random_mat(1, 16, rng);

  auto build = [&](ad::Tape& t, ad::Var v) {
    nn::Binder b = m.binder(t);
    return t.sum(t.mul(m.forward(t, b, v), t.constant(probe)));
  };
  CHECK(testutil::grad_check(feats, build, 1e-4) < 1e-4);

  // A frozen encoder still passes nonzero gradients to its inputs.
  ad::Tape t;
  ad::Var leaf = t.leaf(feats);
  t.backward(build(t, leaf));
  CHECK(leaf.grad().cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("freeze: idempotent value semantics") {
  EncoderModel m(micro_encoder(), 9);
  CHECK_FALSE(m.frozen());
  EncoderModel f1 = encoder::freeze(m);
  CHECK(f1.frozen());
  EncoderModel f2 = encoder::freeze(f1);
  CHECK(f2.frozen());
  CHECK(f1.param_hash() == f2.param_hash());

  ad::Tape t;
  nn::Binder b = f1.binder(t);
  CHECK_FALSE(b.trainable());
}

TEST_CASE("encoder: same seed gives identical parameters") {
  EncoderModel a(micro_encoder(), 42), b(micro_encoder(), 42), c(micro_encoder(), 43);
  CHECK(a.param_hash() == b.param_hash());
  CHECK(a.param_hash() != c.param_hash());
}

TEST_CASE("train_reference_encoder: degenerate corpora rejected") {
  corpus::SynthConfig sc;
  sc.n_speakers = 1;
  sc.utts_per_speaker = 4;
  sc.seconds = 0.6;
  auto single = corpus::synth_corpus(sc);
  encoder::EncoderTrainConfig cfg;
  CHECK_THROWS_AS((void)encoder::train_reference_encoder(single, cfg),
                  std::invalid_argument);
}

TEST_CASE("train_reference_encoder: separates a micro corpus, reproducibly") {
  corpus::SynthConfig sc;
  sc.n_speakers = 6;
  sc.utts_per_speaker = 5;
  sc.seconds = 1.0;
  sc.seed = 11;
  auto toy = corpus::synth_corpus(sc);

  encoder::EncoderTrainConfig cfg;
  cfg.steps = 60;
  cfg.batch_size = 6;
  cfg.crop_seconds = 0.5;
  cfg.holdout_per_speaker = 2;
  cfg.seed = 3;
  cfg.model = micro_encoder();
  cfg.stft = testutil::micro_stft();
  cfg.fbank = testutil::micro_fbank();

  encoder::EncoderTrainReport report;
  EncoderModel m = encoder::train_reference_encoder(toy, cfg, &report);
  CHECK(m.frozen());
  CHECK(report.steps == 60);
  CHECK(report.n_speakers == 6);
  CHECK(report.holdout_trials > 0);

  // Within-speaker cosines exceed between-speaker cosines on held-out audio.
  auto [train_part, holdout] = toy.split_holdout(2);
  std::vector<SpeakerEmbedding> embs;
  std::vector<std::string> spk;
  for (const auto& u : holdout.utterances()) {
    embs.push_back(encoder::embed_waveform(holdout.audio(u), m, cfg.stft, cfg.fbank));
    spk.push_back(u.speaker);
  }
  double within = 0.0, between = 0.0;
  int nw = 0, nb = 0;
  for (size_t i = 0; i < embs.size(); ++i) {
    for (size_t j = i + 1; j < embs.size(); ++j) {
      const double c = encoder::cosine_score(embs[i], embs[j]);
      if (spk[i] == spk[j]) {
        within += c;
        ++nw;
      } else {
        between += c;
        ++nb;
      }
    }
  }
  REQUIRE(nw > 0);
  REQUIRE(nb > 0);
  CHECK(within / nw > between / nb);

  // Retraining with the same seed reproduces the loss to accumulation noise.
  encoder::EncoderTrainReport report2;
  (void)encoder::train_reference_encoder(toy, cfg, &report2);
  CHECK(report2.final_loss == doctest::Approx(report.final_loss).epsilon(1e-9));
  CHECK(report2.holdout_eer == doctest::Approx(report.holdout_eer).epsilon(1e-12));
}
