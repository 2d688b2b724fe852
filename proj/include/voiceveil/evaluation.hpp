#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "voiceveil/corpus.hpp"
#include "voiceveil/encoder.hpp"
#include "voiceveil/signal.hpp"

namespace veil::evaluation {

using signal::Waveform;

enum class Protocol { original, deid, unlinkability };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct Trial {
  std::string enroll;  // utterance id
  std::string test;
  bool is_target = false;
};

struct ScoreSet {
  std::vector<std::pair<Trial, double>> scores;
  Protocol protocol = Protocol::original;
};

/// Ordered same/cross-speaker pairs over a corpus split. Same-utterance pairs
/// are excluded; nontargets are balanced to the target count by seeded
/// subsampling. De-id enrolls originals against anonymized tests;
/// unlinkability anonymizes both sides.
std::vector<Trial> make_trials(const corpus::Corpus& split, Protocol protocol, uint64_t seed);

using AudioTransform = std::function<Waveform(const Waveform&)>;

/// One cosine score per trial. The anonymizer is applied to whichever side
/// the protocol marks anonymized; each utterance is embedded once per
/// condition through a concurrent-read cache.
ScoreSet score_trials(const std::vector<Trial>& trials, const corpus::Corpus& corpus,
                      const encoder::EncoderModel& model, Protocol protocol,
                      const AudioTransform& anonymizer, const signal::StftConfig& stft_cfg,
                      const signal::FbankConfig& fbank_cfg);

/// Equal error rate via threshold sweep over the sorted score multiset with
/// linear interpolation between the adjacent operating points where FAR-FRR
/// changes sign. Ties: nontarget >= threshold counts as a false acceptance.
double compute_eer(const std::vector<double>& target_scores,
                   const std::vector<double>& nontarget_scores);
double compute_eer(const ScoreSet& s);

// ---------------------------------------------------------------------------
// Adaptive-attack transforms

/// Windowed median with symmetric edge padding; kernel must be odd.
Waveform median_smooth(const Waveform& w, int kernel);

/// Snap to the nearest of `levels` uniform levels spanning [-1, 1].
Waveform quantize(const Waveform& w, int levels);

/// Linear-phase FIR low-pass (Kaiser design, >= 60 dB stopband), group delay
/// compensated so the output aligns with the input.
Waveform low_pass_filter(const Waveform& w, double passband_hz, double stopband_hz);

/// Round trip through an external AAC encoder when one is installed; throws
/// "unavailable" otherwise. Never a test dependency.
Waveform aac_round_trip(const Waveform& w, const std::string& scratch_dir);

/// Mean frame-wise cosine of log filterbank features; trims to the shorter
/// signal first.
double spectral_similarity(const Waveform& a, const Waveform& b,
                           const signal::StftConfig& stft_cfg,
                           const signal::FbankConfig& fbank_cfg);

// ---------------------------------------------------------------------------
// Trial and score files

/// One `<target|nontarget> <enroll> <test>` line per trial.
void write_trials(const std::string& path, const std::vector<Trial>& trials);
std::vector<Trial> read_trials(const std::string& path);

/// One `<score %.6f> <enroll> <test>` line per score.
void write_scores(const std::string& path, const ScoreSet& scores);

}  // namespace veil::evaluation
