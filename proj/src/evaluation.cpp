#include "voiceveil/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace veil::evaluation {

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::original: return "original";
    case Protocol::deid: return "de-id";
    case Protocol::unlinkability: return "unlinkability";
  }
  return "?";
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "original") return Protocol::original;
  if (s == "de-id" || s == "deid") return Protocol::deid;
  if (s == "unlinkability" || s == "unlink") return Protocol::unlinkability;
  throw std::invalid_argument("unknown protocol '" + s + "'");
}

std::vector<Trial> make_trials(const corpus::Corpus& split, Protocol protocol, uint64_t seed) {
  if (split.speakers().size() < 2) {
    throw std::invalid_argument("make_trials: need at least 2 speakers in the split");
  }
  std::vector<Trial> targets, nontargets;
  const auto& utts = split.utterances();
  for (size_t i = 0; i < utts.size(); ++i) {
    for (size_t j = 0; j < utts.size(); ++j) {
      if (utts[i].id == utts[j].id) continue;  // no self-pairs
      Trial t{utts[i].id, utts[j].id, utts[i].speaker == utts[j].speaker};
      (t.is_target ? targets : nontargets).push_back(std::move(t));
    }
  }
  if (targets.empty()) {
    throw std::invalid_argument("make_trials: no same-speaker pairs in the split");
  }
  std::mt19937_64 rng(seed ^ (static_cast<uint64_t>(protocol) << 32));
  std::shuffle(nontargets.begin(), nontargets.end(), rng);
  if (nontargets.size() > targets.size()) nontargets.resize(targets.size());

  std::vector<Trial> out = std::move(targets);
  out.insert(out.end(), nontargets.begin(), nontargets.end());
  return out;
}

namespace {

/// Per-condition embedding cache: concurrent reads, serialized writes.
class EmbeddingCache {
 public:
  encoder::SpeakerEmbedding get(const std::string& key,
                                const std::function<encoder::SpeakerEmbedding()>& compute) {
    {
      std::lock_guard<std::mutex> lk(m_);
      auto it = map_.find(key);
      if (it != map_.end()) return it->second;
    }
    encoder::SpeakerEmbedding e = compute();
    std::lock_guard<std::mutex> lk(m_);
    return map_.emplace(key, std::move(e)).first->second;
  }

 private:
  std::mutex m_;
  std::unordered_map<std::string, encoder::SpeakerEmbedding> map_;
};

}  // namespace

ScoreSet score_trials(const std::vector<Trial>& trials, const corpus::Corpus& corpus,
                      const encoder::EncoderModel& model, Protocol protocol,
                      const AudioTransform& anonymizer, const signal::StftConfig& stft_cfg,
                      const signal::FbankConfig& fbank_cfg) {
  const bool anon_enroll = protocol == Protocol::unlinkability;
  const bool anon_test = protocol != Protocol::original;
  if ((anon_enroll || anon_test) && !anonymizer && protocol != Protocol::original) {
    throw std::invalid_argument("score_trials: protocol " + to_string(protocol) +
                                " requires an anonymizer");
  }

  EmbeddingCache cache;
  auto embedding = [&](const std::string& id, bool anonymized) {
    const std::string key = (anonymized ? "anon:" : "orig:") + id;
    return cache.get(key, [&] {
      Waveform w = corpus.audio_by_id(id);
      if (anonymized) w = anonymizer(w);
      return encoder::embed_waveform(w, model, stft_cfg, fbank_cfg);
    });
  };

  ScoreSet out;
  out.protocol = protocol;
  out.scores.reserve(trials.size());
  for (const Trial& t : trials) {
    const auto ze = embedding(t.enroll, anon_enroll);
    const auto zt = embedding(t.test, anon_test);
    out.scores.emplace_back(t, encoder::cosine_score(ze, zt));
  }
  return out;
}

double compute_eer(const std::vector<double>& target_scores,
                   const std::vector<double>& nontarget_scores) {
  if (target_scores.empty() || nontarget_scores.empty()) {
    throw std::invalid_argument("compute_eer: need both target and nontarget scores");
  }
  std::vector<double> tar = target_scores, non = nontarget_scores;
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());
  const double nt = static_cast<double>(tar.size());
  const double nn = static_cast<double>(non.size());

  // Operating point at threshold x: FAR = #{non >= x}/nn, FRR = #{tar < x}/nt.
  auto far_at = [&](double x) {
    return static_cast<double>(non.end() -
                               std::lower_bound(non.begin(), non.end(), x)) / nn;
  };
  auto frr_at = [&](double x) {
    return static_cast<double>(std::lower_bound(tar.begin(), tar.end(), x) -
                               tar.begin()) / nt;
  };

  // Candidate thresholds: all distinct scores ascending. FAR decreases and
  // FRR increases with the threshold; find the sign change of FAR - FRR and
  // interpolate between the adjacent operating points.
  std::vector<double> thresholds;
  thresholds.reserve(tar.size() + non.size());
  thresholds.insert(thresholds.end(), tar.begin(), tar.end());
  thresholds.insert(thresholds.end(), non.begin(), non.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  double far_prev = 1.0, frr_prev = 0.0;  // threshold below every score
  for (double x : thresholds) {
    const double far = far_at(x), frr = frr_at(x);
    if (far <= frr) {
      const double d_prev = far_prev - frr_prev;
      const double d_cur = far - frr;
      if (d_cur == 0.0) return far;
      const double s = d_prev / (d_prev - d_cur);
      return far_prev + s * (far - far_prev);
    }
    far_prev = far;
    frr_prev = frr;
  }
  // Past the top threshold: FAR = 0, FRR = 1.
  {
    const double d_prev = far_prev - frr_prev;
    const double d_cur = 0.0 - 1.0;
    const double s = d_prev / (d_prev - d_cur);
    return far_prev + s * (0.0 - far_prev);
  }
}

double compute_eer(const ScoreSet& s) {
  std::vector<double> tar, non;
  for (const auto& [trial, score] : s.scores) {
    if (!std::isfinite(score)) throw std::invalid_argument("compute_eer: non-finite score");
    (trial.is_target ? tar : non).push_back(score);
  }
  return compute_eer(tar, non);
}

// ---------------------------------------------------------------------------

Waveform median_smooth(const Waveform& w, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("median_smooth: kernel must be odd and >= 1");
  }
  const long n = w.samples.size();
  const int half = kernel / 2;
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(n);
  std::vector<double> window(static_cast<size_t>(kernel));
  for (long i = 0; i < n; ++i) {
    for (int j = -half; j <= half; ++j) {
      long idx = i + j;
      if (idx < 0) idx = -idx - 1;            // symmetric: x[-1] -> x[0]
      if (idx >= n) idx = 2 * n - 1 - idx;    // x[n] -> x[n-1]
      window[static_cast<size_t>(j + half)] = w.samples[idx];
    }
    auto mid = window.begin() + half;
    std::nth_element(window.begin(), mid, window.end());
    out.samples[i] = *mid;
  }
  return out;
}

Waveform quantize(const Waveform& w, int levels) {
  if (levels < 2) throw std::invalid_argument("quantize: need at least 2 levels");
  const double span = static_cast<double>(levels - 1);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = w.samples.unaryExpr([span](double x) {
    double q = std::round((x + 1.0) * 0.5 * span);
    q = std::min(span, std::max(0.0, q));
    return -1.0 + 2.0 * q / span;
  });
  return out;
}

namespace {

double bessel_i0(double x) {
  // Power series; converges quickly for the betas used here.
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (k * static_cast<double>(k));
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

}  // namespace

Waveform low_pass_filter(const Waveform& w, double passband_hz, double stopband_hz) {
  const double nyquist = w.sample_rate / 2.0;
  if (!(0.0 < passband_hz && passband_hz < stopband_hz && stopband_hz < nyquist)) {
    throw std::invalid_argument("low_pass_filter: need 0 < f_p < f_s < sr/2");
  }
  constexpr double kAttenDb = 60.0;
  const double beta = 0.1102 * (kAttenDb - 8.7);
  const double delta_omega = 2.0 * M_PI * (stopband_hz - passband_hz) / w.sample_rate;
  int taps = static_cast<int>(std::ceil((kAttenDb - 8.0) / (2.285 * delta_omega))) + 1;
  if (taps % 2 == 0) ++taps;
  const int half = (taps - 1) / 2;
  const double cutoff = 0.5 * (passband_hz + stopband_hz) / w.sample_rate;  // cycles/sample

  std::vector<double> h(static_cast<size_t>(taps));
  double dc = 0.0;
  const double i0b = bessel_i0(beta);
  for (int i = 0; i < taps; ++i) {
    const int k = i - half;
    const double sinc = k == 0 ? 2.0 * cutoff
                               : std::sin(2.0 * M_PI * cutoff * k) / (M_PI * k);
    const double r = static_cast<double>(k) / half;
    const double win = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[static_cast<size_t>(i)] = sinc * win;
    dc += h[static_cast<size_t>(i)];
  }
  for (double& v : h) v /= dc;  // unity passband gain

  const long n = w.samples.size();
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = signal::Vec::Zero(n);
  // Group delay of `half` compensated: out[i] = sum_j h[j] x[i + half - j].
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < taps; ++j) {
      const long src = i + half - j;
      if (src >= 0 && src < n) acc += h[static_cast<size_t>(j)] * w.samples[src];
    }
    out.samples[i] = std::min(1.0, std::max(-1.0, acc));
  }
  return out;
}

Waveform aac_round_trip(const Waveform& w, const std::string& scratch_dir) {
  if (std::system("command -v ffmpeg > /dev/null 2>&1") != 0) {
    throw std::runtime_error("aac transform unavailable: no external encoder (ffmpeg) found");
  }
  namespace fs = std::filesystem;
  fs::create_directories(scratch_dir);
  const std::string in = (fs::path(scratch_dir) / "aac_in.wav").string();
  const std::string mid = (fs::path(scratch_dir) / "aac_mid.m4a").string();
  const std::string back = (fs::path(scratch_dir) / "aac_out.wav").string();
  signal::save_waveform(in, w);
  const std::string cmd = "ffmpeg -y -loglevel error -i '" + in + "' -c:a aac '" + mid +
                          "' && ffmpeg -y -loglevel error -i '" + mid +
                          "' -ar 16000 -ac 1 -c:a pcm_s16le '" + back + "'";
  if (std::system(cmd.c_str()) != 0) {
    throw std::runtime_error("aac transform failed: external encoder returned an error");
  }
  Waveform out = signal::load_waveform(back);
  out.samples.conservativeResize(std::min(out.samples.size(), w.samples.size()));
  return out;
}

double spectral_similarity(const Waveform& a, const Waveform& b,
                           const signal::StftConfig& stft_cfg,
                           const signal::FbankConfig& fbank_cfg) {
  const long n = std::min(a.samples.size(), b.samples.size());
  if (n < stft_cfg.win_length) {
    throw std::invalid_argument("spectral_similarity: overlap shorter than one window");
  }
  Waveform ta{a.samples.head(n), a.sample_rate};
  Waveform tb{b.samples.head(n), b.sample_rate};
  const auto fa = signal::log_filterbank(signal::stft(ta, stft_cfg), fbank_cfg, stft_cfg,
                                         a.sample_rate);
  const auto fb = signal::log_filterbank(signal::stft(tb, stft_cfg), fbank_cfg, stft_cfg,
                                         b.sample_rate);
  const long frames = std::min(fa.frames.rows(), fb.frames.rows());
  double acc = 0.0;
  for (long t = 0; t < frames; ++t) {
    const double na = fa.frames.row(t).norm(), nb = fb.frames.row(t).norm();
    acc += na > 0.0 && nb > 0.0 ? fa.frames.row(t).dot(fb.frames.row(t)) / (na * nb) : 0.0;
  }
  return acc / static_cast<double>(frames);
}

// ---------------------------------------------------------------------------

void write_trials(const std::string& path, const std::vector<Trial>& trials) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_trials: cannot open " + path);
  for (const Trial& t : trials) {
    f << (t.is_target ? "target" : "nontarget") << ' ' << t.enroll << ' ' << t.test << '\n';
  }
}

std::vector<Trial> read_trials(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_trials: cannot open " + path);
  std::vector<Trial> out;
  std::string label, enroll, test;
  while (f >> label >> enroll >> test) {
    if (label != "target" && label != "nontarget") {
      throw std::runtime_error("read_trials: bad label '" + label + "' in " + path);
    }
    out.push_back(Trial{enroll, test, label == "target"});
  }
  return out;
}

void write_scores(const std::string& path, const ScoreSet& scores) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_scores: cannot open " + path);
  char buf[64];
  for (const auto& [trial, score] : scores.scores) {
    std::snprintf(buf, sizeof(buf), "%.6f", score);
    f << buf << ' ' << trial.enroll << ' ' << trial.test << '\n';
  }
}

}  // namespace veil::evaluation
