#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "voiceveil/signal.hpp"

namespace veil::corpus {

using signal::Waveform;

struct Utterance {
  std::string id;       // unique within the corpus (relative path for file corpora)
  std::string speaker;  // first path component in file corpora
  std::string path;     // empty for in-memory utterances
};

/// Speaker-labeled utterance collection. Audio is either memory-resident or
/// loaded from disk on demand; the structure itself is immutable after build.
class Corpus {
 public:
  static Corpus from_manifest(const std::string& manifest_path,
                              const std::string& data_root = "");
  static Corpus in_memory(std::vector<std::pair<Utterance, Waveform>> entries);

  const std::vector<Utterance>& utterances() const { return utts_; }
  size_t size() const { return utts_.size(); }
  const Utterance& at(size_t i) const { return utts_.at(i); }
  const Utterance& by_id(const std::string& id) const;

  Waveform audio(const Utterance& u) const;
  Waveform audio_by_id(const std::string& id) const { return audio(by_id(id)); }

  std::vector<std::string> speakers() const;  // unique, sorted
  std::map<std::string, std::vector<size_t>> by_speaker() const;

  /// Deterministic per-speaker split: the last `per_speaker` utterances of
  /// each speaker (by id order) become the held-out part.
  std::pair<Corpus, Corpus> split_holdout(int per_speaker) const;

 private:
  std::vector<Utterance> utts_;
  std::map<std::string, size_t> index_;
  std::map<std::string, Waveform> memory_;
};

/// Crops [offset, offset + length) and zero-pads when the source is shorter.
/// Sets *was_padded when padding happened.
Waveform crop(const Waveform& w, long length, long offset, bool* was_padded = nullptr);

// ---------------------------------------------------------------------------
// Synthetic desk-scale corpus: formant-profile speakers with per-utterance
// pitch contours and syllable patterns. Fully determined by the seed.

struct SynthConfig {
  int n_speakers = 20;
  int utts_per_speaker = 10;
  double seconds = 3.0;
  int sample_rate = 16000;
  uint64_t seed = 7;
};

Corpus synth_corpus(const SynthConfig& cfg);

/// Writes <dir>/<speaker>/<utt>.wav for every utterance plus <dir>/manifest.txt
/// holding the newline-delimited relative paths. Returns the manifest path.
std::string write_corpus(const Corpus& c, const std::string& dir);

}  // namespace veil::corpus
