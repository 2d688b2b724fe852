#include "voiceveil/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

namespace veil::corpus {

namespace fs = std::filesystem;

Corpus Corpus::from_manifest(const std::string& manifest_path, const std::string& data_root) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("corpus: cannot open manifest " + manifest_path);
  const fs::path root =
      data_root.empty() ? fs::path(manifest_path).parent_path() : fs::path(data_root);

  Corpus c;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    Utterance u;
    u.id = line;
    const fs::path rel(line);
    u.speaker = rel.has_parent_path() ? rel.begin()->string() : "unknown";
    u.path = (root / rel).string();
    c.index_[u.id] = c.utts_.size();
    c.utts_.push_back(std::move(u));
  }
  if (c.utts_.empty()) throw std::runtime_error("corpus: empty manifest " + manifest_path);
  return c;
}

Corpus Corpus::in_memory(std::vector<std::pair<Utterance, Waveform>> entries) {
  Corpus c;
  for (auto& [u, w] : entries) {
    c.index_[u.id] = c.utts_.size();
    c.memory_[u.id] = std::move(w);
    c.utts_.push_back(std::move(u));
  }
  if (c.utts_.empty()) throw std::runtime_error("corpus: empty in-memory corpus");
  return c;
}

const Utterance& Corpus::by_id(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::runtime_error("corpus: unknown utterance " + id);
  return utts_[it->second];
}

Waveform Corpus::audio(const Utterance& u) const {
  auto it = memory_.find(u.id);
  if (it != memory_.end()) return it->second;
  return signal::load_waveform(u.path);
}

std::vector<std::string> Corpus::speakers() const {
  std::set<std::string> s;
  for (const Utterance& u : utts_) s.insert(u.speaker);
  return {s.begin(), s.end()};
}

std::map<std::string, std::vector<size_t>> Corpus::by_speaker() const {
  std::map<std::string, std::vector<size_t>> m;
  for (size_t i = 0; i < utts_.size(); ++i) m[utts_[i].speaker].push_back(i);
  return m;
}

std::pair<Corpus, Corpus> Corpus::split_holdout(int per_speaker) const {
  std::vector<std::pair<Utterance, Waveform>> train, held;
  for (const auto& [spk, idxs] : by_speaker()) {
    std::vector<size_t> sorted = idxs;
    std::sort(sorted.begin(), sorted.end(),
              [this](size_t a, size_t b) { return utts_[a].id < utts_[b].id; });
    const size_t cut = sorted.size() > static_cast<size_t>(per_speaker)
                           ? sorted.size() - static_cast<size_t>(per_speaker)
                           : 1;
    for (size_t j = 0; j < sorted.size(); ++j) {
      const Utterance& u = utts_[sorted[j]];
      auto mem = memory_.find(u.id);
      auto& dst = j < cut ? train : held;
      if (mem != memory_.end()) {
        dst.emplace_back(u, mem->second);
      } else {
        dst.emplace_back(u, Waveform{});  // stays file-backed
      }
    }
  }
  auto build = [this](std::vector<std::pair<Utterance, Waveform>>& entries) {
    Corpus c;
    for (auto& [u, w] : entries) {
      c.index_[u.id] = c.utts_.size();
      if (memory_.count(u.id)) c.memory_[u.id] = std::move(w);
      c.utts_.push_back(u);
    }
    return c;
  };
  return {build(train), build(held)};
}

Waveform crop(const Waveform& w, long length, long offset, bool* was_padded) {
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = signal::Vec::Zero(length);
  bool padded = false;
  if (offset >= w.samples.size()) {
    padded = true;
  } else {
    const long avail = std::min(length, w.samples.size() - offset);
    out.samples.head(avail) = w.samples.segment(offset, avail);
    padded = avail < length;
  }
  if (was_padded) *was_padded = padded;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

constexpr double kPi = 3.14159265358979323846;

struct SpeakerProfile {
  double pitch_base;
  double formants[4];
  double bandwidths[4];
  double gains[4];
  double tilt;  // spectral rolloff knee in Hz
};

SpeakerProfile make_speaker(int idx, uint64_t seed) {
  std::mt19937_64 rng(seed * 1000003ull + static_cast<uint64_t>(idx) * 7919ull + 13ull);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SpeakerProfile p;
  // Coarse (F1, F2) grid keeps the speaker set well separated; the remaining
  // parameters are free draws.
  const int f1_cell = idx % 4;
  const int f2_cell = (idx / 4) % 5;
  p.pitch_base = 95.0 + 150.0 * u(rng);
  p.formants[0] = 380.0 + 120.0 * f1_cell + 60.0 * u(rng);
  p.formants[1] = 1050.0 + 280.0 * f2_cell + 120.0 * u(rng);
  p.formants[2] = 2500.0 + 800.0 * u(rng);
  p.formants[3] = 3600.0 + 900.0 * u(rng);
  for (int i = 0; i < 4; ++i) {
    p.bandwidths[i] = 90.0 + 80.0 * u(rng);
    p.gains[i] = 0.6 + 0.4 * u(rng);
  }
  p.tilt = 900.0 + 900.0 * u(rng);
  return p;
}

double envelope_at(const SpeakerProfile& p, double f, const double jitter[4]) {
  double e = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double c = p.formants[i] * (1.0 + jitter[i]);
    const double d = (f - c) / p.bandwidths[i];
    e += p.gains[i] * std::exp(-0.5 * d * d);
  }
  return (e + 0.02) / (1.0 + f / p.tilt);
}

Waveform synth_utterance(const SpeakerProfile& p, double seconds, int sr, uint64_t utt_seed) {
  std::mt19937_64 rng(utt_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const long n = static_cast<long>(seconds * sr);
  signal::Vec x = signal::Vec::Zero(n);

  long pos = 0;
  while (pos < n) {
    const long syl_len = static_cast<long>((0.12 + 0.18 * u(rng)) * sr);
    const long gap_len = static_cast<long>((0.02 + 0.04 * u(rng)) * sr);
    const long end = std::min(n, pos + syl_len);

    double jitter[4];
    for (double& j : jitter) j = -0.05 + 0.10 * u(rng);
    const double f0_start = p.pitch_base * (0.92 + 0.16 * u(rng));
    const double f0_slope = (-0.15 + 0.30 * u(rng)) * p.pitch_base / seconds;
    const double vib_phase = 2.0 * kPi * u(rng);

    const int n_harm = static_cast<int>(5000.0 / p.pitch_base);
    std::vector<double> amp(static_cast<size_t>(n_harm) + 1, 0.0);
    std::vector<double> phase(static_cast<size_t>(n_harm) + 1);
    for (int m = 1; m <= n_harm; ++m) {
      amp[static_cast<size_t>(m)] = envelope_at(p, m * f0_start, jitter) / m;
      phase[static_cast<size_t>(m)] = 2.0 * kPi * u(rng);
    }

    for (long i = pos; i < end; ++i) {
      const double t = static_cast<double>(i - pos) / sr;
      const double f0 = f0_start + f0_slope * t +
                        0.015 * p.pitch_base * std::sin(2.0 * kPi * 5.0 * t + vib_phase);
      const double rel = static_cast<double>(i - pos) / static_cast<double>(end - pos);
      const double env = std::sin(kPi * std::min(1.0, std::max(0.0, rel)));
      double s = 0.0;
      for (int m = 1; m <= n_harm; ++m) {
        phase[static_cast<size_t>(m)] += 2.0 * kPi * m * f0 / sr;
        s += amp[static_cast<size_t>(m)] * std::sin(phase[static_cast<size_t>(m)]);
      }
      x[i] = env * s;
    }
    pos = end + gap_len;
  }

  // Gentle aspiration floor so frames are never exactly silent.
  double lp = 0.0;
  std::normal_distribution<double> g(0.0, 1.0);
  for (long i = 0; i < n; ++i) {
    lp = 0.92 * lp + 0.08 * g(rng);
    x[i] += 0.004 * lp;
  }

  const double peak = x.cwiseAbs().maxCoeff();
  if (peak > 0.0) x *= (0.40 + 0.15 * u(rng)) / peak;

  Waveform w;
  w.sample_rate = sr;
  w.samples = std::move(x);
  return w;
}

}  // namespace

Corpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_speakers < 1 || cfg.utts_per_speaker < 1) {
    throw std::invalid_argument("synth_corpus: need at least one speaker and utterance");
  }
  std::vector<std::pair<Utterance, Waveform>> entries;
  for (int s = 0; s < cfg.n_speakers; ++s) {
    const SpeakerProfile prof = make_speaker(s, cfg.seed);
    char spk[16];
    std::snprintf(spk, sizeof(spk), "spk%02d", s);
    for (int k = 0; k < cfg.utts_per_speaker; ++k) {
      char utt[32];
      std::snprintf(utt, sizeof(utt), "%s/utt%03d.wav", spk, k);
      Utterance u{utt, spk, ""};
      const uint64_t utt_seed =
          cfg.seed * 2654435761ull + static_cast<uint64_t>(s) * 104729ull +
          static_cast<uint64_t>(k) * 31ull + 1ull;
      entries.emplace_back(std::move(u),
                           synth_utterance(prof, cfg.seconds, cfg.sample_rate, utt_seed));
    }
  }
  return Corpus::in_memory(std::move(entries));
}

std::string write_corpus(const Corpus& c, const std::string& dir) {
  fs::create_directories(dir);
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("write_corpus: cannot open " + manifest_path);
  for (const Utterance& u : c.utterances()) {
    const fs::path out = fs::path(dir) / u.id;
    fs::create_directories(out.parent_path());
    signal::save_waveform(out.string(), c.audio(u));
    manifest << u.id << "\n";
  }
  return manifest_path;
}

}  // namespace veil::corpus
