#include "voiceveil/training.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "voiceveil/runconfig.hpp"

using namespace veil;
using training::TrainConfig;
using training::TrainingBatch;

namespace {

TrainConfig micro_train(int steps = 10) {
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.crop_seconds = 0.4;
  cfg.warmup_steps = 5;
  cfg.total_steps = steps;
  cfg.peak_lr = 5e-4;
  cfg.checkpoint_every = 4;
  cfg.seed = 5;
  return cfg;
}

encoder::EncoderModel micro_frozen_encoder(uint64_t seed = 21) {
  encoder::EncoderConfig cfg;
  cfg.n_mels = 20;
  cfg.channels = 24;
  cfg.embed_dim = 16;
  encoder::EncoderModel m(cfg, seed);
  m.set_frozen(true);
  return m;
}

generator::GeneratorConfig micro_gen_cfg() {
  generator::GeneratorConfig cfg;
  cfg.n_blocks = 1;
  cfg.conv_kernel = 7;
  cfg.n_heads = 2;
  cfg.hidden_size = 32;
  cfg.io_size = 64;
  cfg.rel_bias_radius = 8;
  return cfg;
}

corpus::Corpus micro_corpus(int speakers = 4, int utts = 3, double seconds = 0.6) {
  corpus::SynthConfig sc;
  sc.n_speakers = speakers;
  sc.utts_per_speaker = utts;
  sc.seconds = seconds;
  sc.seed = 19;
  return corpus::synth_corpus(sc);
}

std::string fresh_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / (std::string("voiceveil_train_") + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("lr_schedule: ramp, peak, and exponential decay") {
  TrainConfig cfg;
  cfg.warmup_steps = 9600;
  cfg.peak_lr = 0.001;
  cfg.decay_rate = 0.9999;
  CHECK(training::lr_schedule(9600, cfg) == 0.001);
  CHECK(training::lr_schedule(4800, cfg) == doctest::Approx(0.0005).epsilon(1e-12));
  CHECK(training::lr_schedule(9600 + 7, cfg) ==
        doctest::Approx(0.001 * std::pow(0.9999, 7)).epsilon(1e-12));
  // Continuity at the warm-up boundary.
  CHECK(std::abs(training::lr_schedule(9601, cfg) - training::lr_schedule(9600, cfg)) <
        cfg.peak_lr * 2e-4);
  CHECK_THROWS_AS((void)training::lr_schedule(0, cfg), std::invalid_argument);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = micro_train();
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = micro_train();
  cfg.decay_rate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = micro_train();
  cfg.weights.gamma = 0.9;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("make_batches: deterministic, distinct speakers, correct shapes") {
  auto toy = micro_corpus();
  auto enc = micro_frozen_encoder();
  TrainConfig cfg = micro_train();
  const auto stft = testutil::micro_stft();
  const auto fbank = testutil::micro_fbank();

  auto stream = training::make_batches(toy, cfg, enc, stft, fbank);
  TrainingBatch b1 = stream.at(1);
  REQUIRE(b1.magnitudes.size() == 3);
  CHECK(b1.speakers.size() == 3);
  CHECK(b1.features.size() == 3);
  CHECK(b1.embeddings.size() == 3);

  // 4 speakers, K=3: all batch speakers distinct.
  for (int step = 1; step <= 5; ++step) {
    TrainingBatch b = stream.at(step);
    auto spk = b.speakers;
    std::sort(spk.begin(), spk.end());
    CHECK(std::adjacent_find(spk.begin(), spk.end()) == spk.end());
  }

  // Equal-length crops: every magnitude has the same frame count.
  const long frames = b1.magnitudes[0].rows();
  for (const auto& m : b1.magnitudes) {
    CHECK(m.rows() == frames);
    CHECK(m.cols() == stft.n_bins);
  }

  // Identical stream for an identical seed, different for another seed.
  auto stream2 = training::make_batches(toy, cfg, enc, stft, fbank);
  TrainingBatch c1 = stream2.at(1);
  CHECK(b1.magnitudes[0] == c1.magnitudes[0]);
  CHECK(b1.speakers == c1.speakers);
  TrainConfig other = cfg;
  other.seed = 77;
  auto stream3 = training::make_batches(toy, other, enc, stft, fbank);
  CHECK(stream3.at(1).speakers != b1.speakers);
}

TEST_CASE("make_batches: pads short utterances and flags them") {
  auto toy = micro_corpus(3, 2, 0.3);  // utterances shorter than the crop
  auto enc = micro_frozen_encoder();
  TrainConfig cfg = micro_train();
  cfg.batch_size = 3;
  cfg.crop_seconds = 0.5;
  auto stream = training::make_batches(toy, cfg, enc, testutil::micro_stft(),
                                       testutil::micro_fbank());
  TrainingBatch b = stream.at(1);
  CHECK(std::count(b.was_padded.begin(), b.was_padded.end(), true) == 3);
  const long want_frames = (static_cast<long>(0.5 * 16000) + 31) / 32;
  CHECK(b.magnitudes[0].rows() == want_frames);
}

TEST_CASE("make_batches: corpus smaller than a batch is rejected") {
  auto toy = micro_corpus(2, 1, 0.4);
  auto enc = micro_frozen_encoder();
  TrainConfig cfg = micro_train();
  cfg.batch_size = 8;
  CHECK_THROWS_AS((void)training::make_batches(toy, cfg, enc, testutil::micro_stft(),
                                               testutil::micro_fbank()),
                  std::invalid_argument);
}

TEST_CASE("train_step: identical-crop batch at zero init reports -0.70") {
  auto enc = micro_frozen_encoder();
  generator::PerturbationGenerator gen(micro_gen_cfg(), 31);
  const auto stft = testutil::micro_stft();
  const auto fbank = testutil::micro_fbank();

  std::mt19937_64 rng(131);
  signal::Waveform clip = testutil::random_tone_mix(6400, rng, 5000.0);
  const auto spec = signal::stft(clip, stft);
  const auto feats = signal::log_filterbank(spec, fbank, stft);
  const auto z = encoder::embed(feats, enc);

  TrainingBatch batch;
  for (int k = 0; k < 4; ++k) {
    batch.speakers.push_back("spk00");
    batch.magnitudes.push_back(spec.magnitude);
    batch.features.push_back(feats.frames);
    batch.embeddings.push_back(z.vector);
    batch.was_padded.push_back(false);
  }

  nn::Adam opt;
  TrainConfig cfg = micro_train();
  auto breakdown = training::train_step(batch, gen, enc, opt, cfg, stft, fbank, 1);
  REQUIRE(breakdown.has_value());
  CHECK(breakdown->perceptual == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(breakdown->angular == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(breakdown->batch_mean == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(breakdown->total == doctest::Approx(-0.70).epsilon(1e-9));
}

TEST_CASE("train_step: labels are metadata only and the encoder never moves") {
  auto toy = micro_corpus();
  auto enc = micro_frozen_encoder();
  const auto stft = testutil::micro_stft();
  const auto fbank = testutil::micro_fbank();
  TrainConfig cfg = micro_train();
  auto stream = training::make_batches(toy, cfg, enc, stft, fbank);
  TrainingBatch batch = stream.at(1);

  const uint64_t enc_hash = enc.param_hash();

  // Two runs from identical generator states, one with shuffled labels.
  generator::PerturbationGenerator g1(micro_gen_cfg(), 33);
  generator::PerturbationGenerator g2(micro_gen_cfg(), 33);
  TrainingBatch shuffled = batch;
  std::rotate(shuffled.speakers.begin(), shuffled.speakers.begin() + 1,
              shuffled.speakers.end());

  nn::Adam o1, o2;
  auto b1 = training::train_step(batch, g1, enc, o1, cfg, stft, fbank, 1);
  auto b2 = training::train_step(shuffled, g2, enc, o2, cfg, stft, fbank, 1);
  REQUIRE(b1.has_value());
  REQUIRE(b2.has_value());
  CHECK(b1->total == b2->total);
  CHECK(b1->perceptual == b2->perceptual);
  CHECK(b1->angular == b2->angular);
  CHECK(b1->batch_mean == b2->batch_mean);
  CHECK(g1.param_hash() == g2.param_hash());

  CHECK(enc.param_hash() == enc_hash);

  encoder::EncoderModel unfrozen(enc.config(), 3);
  CHECK_THROWS_AS((void)training::train_step(batch, g1, unfrozen, o1, cfg, stft, fbank, 2),
                  std::invalid_argument);
}

TEST_CASE("train_generator: loss decreases and the metrics log matches steps") {
  auto toy = micro_corpus(4, 3, 0.6);
  auto enc = micro_frozen_encoder();
  generator::PerturbationGenerator gen(micro_gen_cfg(), 37);
  TrainConfig cfg = micro_train(40);
  const std::string dir = fresh_dir("run");

  std::vector<double> totals;
  auto result = training::train_generator(
      toy, enc, gen, cfg, testutil::micro_stft(), testutil::micro_fbank(), dir, "",
      [&](const training::StepRecord& r) { totals.push_back(r.breakdown.total); });

  CHECK(result.steps_done == 40);
  CHECK(result.steps_skipped == 0);
  REQUIRE(totals.size() == 40);
  const double first = totals.front();
  const double last5 = std::accumulate(totals.end() - 5, totals.end(), 0.0) / 5.0;
  CHECK(last5 < first);

  // One JSONL record per completed step, carrying the loss weights.
  std::ifstream metrics(result.metrics_path);
  REQUIRE(metrics.good());
  std::string line;
  long lines = 0;
  nlohmann::json rec;
  while (std::getline(metrics, line)) {
    rec = nlohmann::json::parse(line);
    ++lines;
  }
  CHECK(lines == 40);
  CHECK(rec.at("step") == 40);
  CHECK(rec.at("gamma") == doctest::Approx(0.35));
  CHECK(rec.contains("lr"));
  CHECK(rec.contains("perceptual"));
  CHECK(rec.contains("angular"));
  CHECK(rec.contains("batch_mean"));
  CHECK(rec.contains("total"));

  CHECK(std::filesystem::exists(result.final_checkpoint));
}

TEST_CASE("train_generator: resume reproduces the uninterrupted run") {
  auto toy = micro_corpus(4, 3, 0.6);
  auto enc = micro_frozen_encoder();
  const auto stft = testutil::micro_stft();
  const auto fbank = testutil::micro_fbank();

  // Uninterrupted: 8 steps.
  generator::PerturbationGenerator full(micro_gen_cfg(), 41);
  TrainConfig cfg8 = micro_train(8);
  const std::string dir_full = fresh_dir("full");
  (void)training::train_generator(toy, enc, full, cfg8, stft, fbank, dir_full);

  // Interrupted: 4 steps, then resume to 8.
  generator::PerturbationGenerator part(micro_gen_cfg(), 41);
  TrainConfig cfg4 = cfg8;
  cfg4.total_steps = 4;
  const std::string dir_part = fresh_dir("part");
  auto r4 = training::train_generator(toy, enc, part, cfg4, stft, fbank, dir_part);
  auto resumed = training::train_generator(
      toy, enc, part, cfg8, stft, fbank, dir_part,
      (std::filesystem::path(dir_part) / "train_state.ckpt").string());

  CHECK(resumed.steps_done == 4);  // steps 5..8
  CHECK(full.param_hash() == part.param_hash());

  // Metrics from the resumed run continue the step numbering.
  std::ifstream metrics(resumed.metrics_path);
  std::string line, last;
  long lines = 0;
  while (std::getline(metrics, line)) {
    last = line;
    ++lines;
  }
  CHECK(lines == 8);
  CHECK(nlohmann::json::parse(last).at("step") == 8);
}
