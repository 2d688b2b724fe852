#include "voiceveil/signal.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace veil::signal {

namespace {

constexpr double kPi = 3.14159265358979323846;

// FFTW planner calls are not thread-safe; executions on private buffers are.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    std::lock_guard<std::mutex> lk(planner_mutex());
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    fwd_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(n, out_, in_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lk(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* in() { return in_; }
  fftw_complex* out() { return out_; }
  void forward() { fftw_execute(fwd_); }
  // Unnormalized inverse: caller divides by n.
  void inverse() { fftw_execute(inv_); }
  int size() const { return n_; }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan fwd_;
  fftw_plan inv_;
};

RealFft& fft_for(int n) {
  thread_local std::map<int, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

long frame_count(long len, int hop) { return (len + hop - 1) / hop; }

// Reflect index without edge repetition: -1 -> 1, len -> len-2.
long reflect_index(long i, long len) {
  if (i < 0) i = -i;
  if (i >= len) i = 2 * (len - 1) - i;
  return i;
}

std::vector<double> reflect_pad(const Vec& x, int pad) {
  const long len = x.size();
  std::vector<double> out(static_cast<size_t>(len + 2 * pad));
  for (long i = 0; i < len + 2 * pad; ++i) {
    out[static_cast<size_t>(i)] = x[reflect_index(i - pad, len)];
  }
  return out;
}

struct Analysis {
  Mat re;  // [T x full_bins]
  Mat im;
};

Analysis analyze(const Vec& samples, const StftConfig& cfg) {
  cfg.validate();
  const long len = samples.size();
  if (len < cfg.win_length) {
    throw std::invalid_argument("stft: signal shorter than one window (" +
                                std::to_string(len) + " < " +
                                std::to_string(cfg.win_length) + ")");
  }
  const int pad = cfg.win_length / 2;
  const long t_frames = frame_count(len, cfg.hop_length);
  const int full = cfg.full_bins();
  const Vec win = make_window(cfg);
  const std::vector<double> padded = reflect_pad(samples, pad);

  Analysis a;
  a.re.resize(t_frames, full);
  a.im.resize(t_frames, full);
  RealFft& fft = fft_for(cfg.fft_size);
  for (long t = 0; t < t_frames; ++t) {
    const long off = t * cfg.hop_length;
    double* in = fft.in();
    for (int n = 0; n < cfg.win_length; ++n) {
      in[n] = padded[static_cast<size_t>(off + n)] * win[n];
    }
    std::memset(in + cfg.win_length, 0,
                sizeof(double) * static_cast<size_t>(cfg.fft_size - cfg.win_length));
    fft.forward();
    for (int k = 0; k < full; ++k) {
      a.re(t, k) = fft.out()[k][0];
      a.im(t, k) = fft.out()[k][1];
    }
  }
  return a;
}

}  // namespace

void StftConfig::validate() const {
  if (!(hop_length > 0 && hop_length <= win_length && win_length <= fft_size)) {
    throw std::invalid_argument("StftConfig: need 0 < hop <= win <= fft");
  }
  if (n_bins < 1 || n_bins > full_bins()) {
    throw std::invalid_argument("StftConfig: n_bins out of range");
  }
  if (window != "hann") {
    throw std::invalid_argument("StftConfig: unknown window '" + window + "'");
  }
}

void FbankConfig::validate(int sample_rate) const {
  if (n_mels <= 0) throw std::invalid_argument("FbankConfig: n_mels must be positive");
  if (!(0.0 <= f_min && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw std::invalid_argument("FbankConfig: need 0 <= f_min < f_max <= sr/2");
  }
  if (log_floor <= 0.0) throw std::invalid_argument("FbankConfig: log_floor must be > 0");
}

Vec make_window(const StftConfig& cfg) {
  Vec w(cfg.win_length);
  for (int n = 0; n < cfg.win_length; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / cfg.win_length);
  }
  return w;
}

// ---------------------------------------------------------------------------
// WAV I/O

namespace {

uint32_t read_u32(std::istream& s) {
  unsigned char b[4];
  s.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& s) {
  unsigned char b[2];
  s.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& s, uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
               static_cast<char>(v >> 24)};
  s.write(b, 4);
}

void write_u16(std::ostream& s, uint16_t v) {
  char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
  s.write(b, 2);
}

}  // namespace

Waveform load_waveform(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_waveform: cannot open " + path);

  char tag[5] = {0};
  f.read(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0) {
    throw std::runtime_error("load_waveform: not a RIFF file: " + path);
  }
  read_u32(f);  // riff size
  f.read(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0) {
    throw std::runtime_error("load_waveform: not a WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<int16_t> pcm;
  while (f.read(tag, 4)) {
    uint32_t chunk = read_u32(f);
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      format = read_u16(f);
      channels = read_u16(f);
      rate = read_u32(f);
      read_u32(f);  // byte rate
      read_u16(f);  // block align
      bits = read_u16(f);
      if (chunk > 16) f.seekg(chunk - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::strncmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("load_waveform: data before fmt in " + path);
      pcm.resize(chunk / 2);
      f.read(reinterpret_cast<char*>(pcm.data()), chunk);
      break;
    } else {
      f.seekg(chunk + (chunk & 1), std::ios::cur);
    }
  }
  if (!have_fmt) throw std::runtime_error("load_waveform: missing fmt chunk in " + path);
  if (format != 1 || bits != 16) {
    throw std::runtime_error("load_waveform: only 16-bit PCM is supported: " + path);
  }
  if (channels != 1) {
    throw std::runtime_error("load_waveform: only mono input is accepted (" +
                             std::to_string(channels) + " channels): " + path);
  }
  if (rate != 16000) {
    throw std::runtime_error("load_waveform: expected 16 kHz, got " + std::to_string(rate) +
                             " Hz: " + path);
  }

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(static_cast<long>(pcm.size()));
  for (size_t i = 0; i < pcm.size(); ++i) {
    w.samples[static_cast<long>(i)] = pcm[i] / 32768.0;
  }
  return w;
}

void save_waveform(const std::string& path, const Waveform& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_waveform: cannot open " + path);
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_bytes = n * 2;

  f.write("RIFF", 4);
  write_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  write_u32(f, 16);
  write_u16(f, 1);  // PCM
  write_u16(f, 1);  // mono
  write_u32(f, static_cast<uint32_t>(w.sample_rate));
  write_u32(f, static_cast<uint32_t>(w.sample_rate) * 2);
  write_u16(f, 2);
  write_u16(f, 16);
  f.write("data", 4);
  write_u32(f, data_bytes);
  for (long i = 0; i < w.samples.size(); ++i) {
    long q = std::lround(w.samples[i] * 32768.0);
    q = std::min<long>(32767, std::max<long>(-32768, q));
    write_u16(f, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  if (!f) throw std::runtime_error("save_waveform: write failed: " + path);
}

// ---------------------------------------------------------------------------
// STFT / iSTFT

Spectrogram stft(const Waveform& w, const StftConfig& cfg) {
  Analysis a = analyze(w.samples, cfg);
  const long t_frames = a.re.rows();
  Spectrogram s;
  s.magnitude.resize(t_frames, cfg.n_bins);
  s.phase.resize(t_frames, cfg.n_bins);
  for (long t = 0; t < t_frames; ++t) {
    for (int k = 0; k < cfg.n_bins; ++k) {
      s.magnitude(t, k) = std::hypot(a.re(t, k), a.im(t, k));
      s.phase(t, k) = std::atan2(a.im(t, k), a.re(t, k));
    }
  }
  return s;
}

Waveform istft(const Spectrogram& s, const StftConfig& cfg, int sample_rate) {
  cfg.validate();
  if (s.magnitude.rows() != s.phase.rows() || s.magnitude.cols() != s.phase.cols()) {
    throw std::invalid_argument("istft: magnitude/phase shape mismatch");
  }
  if (s.magnitude.cols() != cfg.n_bins) {
    throw std::invalid_argument("istft: spectrogram has " + std::to_string(s.magnitude.cols()) +
                                " bins, config expects " + std::to_string(cfg.n_bins));
  }
  const long t_frames = s.magnitude.rows();
  const int pad = cfg.win_length / 2;
  const long out_len = t_frames * cfg.hop_length;
  const long acc_len = out_len + 2 * pad + cfg.fft_size;
  const int full = cfg.full_bins();
  const Vec win = make_window(cfg);

  Vec num = Vec::Zero(acc_len);
  Vec den = Vec::Zero(acc_len);
  RealFft& fft = fft_for(cfg.fft_size);
  for (long t = 0; t < t_frames; ++t) {
    for (int k = 0; k < full; ++k) {
      if (k < cfg.n_bins) {
        fft.out()[k][0] = s.magnitude(t, k) * std::cos(s.phase(t, k));
        fft.out()[k][1] = s.magnitude(t, k) * std::sin(s.phase(t, k));
      } else {
        fft.out()[k][0] = 0.0;
        fft.out()[k][1] = 0.0;
      }
    }
    fft.inverse();
    const long off = t * cfg.hop_length;
    for (int n = 0; n < cfg.win_length; ++n) {
      const double sample = fft.in()[n] / cfg.fft_size;
      num[off + n] += win[n] * sample;
      den[off + n] += win[n] * win[n];
    }
  }

  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(out_len);
  for (long i = 0; i < out_len; ++i) {
    const double d = den[pad + i];
    double v = d > 1e-10 ? num[pad + i] / d : 0.0;
    out.samples[i] = std::min(1.0, std::max(-1.0, v));
  }
  return out;
}

Mat clamp_magnitude(const Mat& m) { return m.cwiseMax(0.0); }

Mat mel_filter_matrix(const FbankConfig& cfg, const StftConfig& stft_cfg, int sample_rate) {
  cfg.validate(sample_rate);
  stft_cfg.validate();
  auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto mel_to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };

  const double mel_lo = hz_to_mel(cfg.f_min), mel_hi = hz_to_mel(cfg.f_max);
  std::vector<double> centers(static_cast<size_t>(cfg.n_mels) + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m) {
    centers[static_cast<size_t>(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.n_mels + 1));
  }

  Mat filters = Mat::Zero(cfg.n_mels, stft_cfg.n_bins);
  const double bin_hz = static_cast<double>(sample_rate) / stft_cfg.fft_size;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = centers[static_cast<size_t>(m)];
    const double mid = centers[static_cast<size_t>(m) + 1];
    const double hi = centers[static_cast<size_t>(m) + 2];
    for (int k = 0; k < stft_cfg.n_bins; ++k) {
      const double f = k * bin_hz;
      if (f <= lo || f >= hi) continue;
      filters(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return filters;
}

FeatureFrames log_filterbank(const Spectrogram& s, const FbankConfig& cfg,
                             const StftConfig& stft_cfg, int sample_rate) {
  if ((s.magnitude.array() < 0.0).any()) {
    throw std::invalid_argument("log_filterbank: magnitude must be nonnegative");
  }
  const Mat mel = mel_filter_matrix(cfg, stft_cfg, sample_rate);
  FeatureFrames out;
  out.frames = ((s.magnitude.cwiseProduct(s.magnitude) * mel.transpose())
                    .cwiseMax(cfg.log_floor)
                    .array()
                    .log())
                   .matrix();
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable STFT magnitude

ad::Var stft_magnitude(ad::Tape& tape, ad::Var wave, const StftConfig& cfg, Mat* phase_out) {
  if (wave.cols() != 1) throw std::invalid_argument("stft_magnitude: wave must be [N x 1]");
  const Vec samples = wave.value().col(0);
  Analysis a = analyze(samples, cfg);
  const long t_frames = a.re.rows();
  const long len = samples.size();

  Mat mag(t_frames, cfg.n_bins);
  for (long t = 0; t < t_frames; ++t) {
    for (int k = 0; k < cfg.n_bins; ++k) {
      mag(t, k) = std::hypot(a.re(t, k), a.im(t, k));
    }
  }
  if (phase_out) {
    phase_out->resize(t_frames, cfg.n_bins);
    for (long t = 0; t < t_frames; ++t) {
      for (int k = 0; k < cfg.n_bins; ++k) {
        (*phase_out)(t, k) = std::atan2(a.im(t, k), a.re(t, k));
      }
    }
  }

  const int wave_idx = wave.index();
  // Adjoint: magnitude -> complex bins -> per-frame inverse transform ->
  // window -> overlap-add -> reflect-pad fold-back.
  auto back = [wave_idx, cfg, len, re = a.re, im = a.im, mag](ad::Tape& t,
                                                              const Mat& gout) {
    const long t_frames = gout.rows();
    const int pad = cfg.win_length / 2;
    const int full = cfg.full_bins();
    const Vec win = make_window(cfg);
    Vec gpad = Vec::Zero(len + 2 * pad);
    RealFft& fft = fft_for(cfg.fft_size);
    for (long fr = 0; fr < t_frames; ++fr) {
      for (int k = 0; k < full; ++k) {
        double dre = 0.0, dim = 0.0;
        if (k < cfg.n_bins && mag(fr, k) > 1e-300) {
          const double gm = gout(fr, k) / mag(fr, k);
          dre = gm * re(fr, k);
          dim = gm * im(fr, k);
        }
        const double w = (k == 0 || k == full - 1) ? 1.0 : 0.5;
        fft.out()[k][0] = w * dre;
        fft.out()[k][1] = w * dim;
      }
      fft.inverse();
      const long off = fr * cfg.hop_length;
      for (int n = 0; n < cfg.win_length; ++n) {
        gpad[off + n] += win[n] * fft.in()[n];
      }
    }
    Mat gw = Mat::Zero(len, 1);
    for (long i = 0; i < gpad.size(); ++i) {
      gw(reflect_index(i - pad, len), 0) += gpad[i];
    }
    t.add_grad(wave_idx, gw);
  };
  return tape.custom(std::move(mag), std::move(back));
}

ad::Var log_filterbank_graph(ad::Tape& tape, ad::Var magnitude, const Mat& mel_matrix,
                             double log_floor) {
  ad::Var power = tape.square(magnitude);
  ad::Var mel = tape.matmul(power, tape.constant(mel_matrix.transpose()));
  return tape.log(tape.clamp_min(mel, log_floor));
}

}  // namespace veil::signal
