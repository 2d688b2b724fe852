#pragma once

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <vector>

#include "voiceveil/autodiff.hpp"
#include "voiceveil/signal.hpp"

namespace testutil {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat random_mat(long rows, long cols, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Mat m(rows, cols);
  for (long c = 0; c < cols; ++c) {
    for (long r = 0; r < rows; ++r) m(r, c) = d(rng);
  }
  return m;
}

inline Vec random_vec(long n, std::mt19937_64& rng, double scale = 1.0) {
  return random_mat(n, 1, rng, scale).col(0);
}

/// Central-difference gradient of a scalar-valued function of a matrix.
inline Mat fd_grad(const Mat& x, const std::function<double(const Mat&)>& f,
                   double h = 1e-5) {
  Mat g(x.rows(), x.cols());
  Mat probe = x;
  for (long c = 0; c < x.cols(); ++c) {
    for (long r = 0; r < x.rows(); ++r) {
      probe(r, c) = x(r, c) + h;
      const double fp = f(probe);
      probe(r, c) = x(r, c) - h;
      const double fm = f(probe);
      probe(r, c) = x(r, c);
      g(r, c) = (fp - fm) / (2.0 * h);
    }
  }
  return g;
}

inline double rel_err(const Mat& got, const Mat& want) {
  const double denom = std::max(want.norm(), 1e-12);
  return (got - want).norm() / denom;
}

/// Checks d(build(x))/dx against central differences. `build` must place x on
/// the tape as its leaf and return a scalar node.
inline double grad_check(
    const Mat& x,
    const std::function<veil::ad::Var(veil::ad::Tape&, veil::ad::Var)>& build,
    double h = 1e-5) {
  veil::ad::Tape tape;
  veil::ad::Var leaf = tape.leaf(x);
  veil::ad::Var root = build(tape, leaf);
  tape.backward(root);
  const Mat analytic = leaf.grad();
  const Mat fd = fd_grad(x, [&](const Mat& probe) {
    veil::ad::Tape t2;
    return build(t2, t2.leaf(probe)).scalar();
  }, h);
  return rel_err(analytic, fd);
}

/// O(N^2) reference DFT of one windowed frame; the oracle behind the FFT path.
inline void naive_dft(const std::vector<double>& frame, int n_out, std::vector<double>& re,
                      std::vector<double>& im) {
  const size_t n = frame.size();
  re.assign(static_cast<size_t>(n_out), 0.0);
  im.assign(static_cast<size_t>(n_out), 0.0);
  for (int k = 0; k < n_out; ++k) {
    double sr = 0.0, si = 0.0;
    for (size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * k * static_cast<double>(t) / static_cast<double>(n);
      sr += frame[t] * std::cos(ang);
      si += frame[t] * std::sin(ang);
    }
    re[static_cast<size_t>(k)] = sr;
    im[static_cast<size_t>(k)] = si;
  }
}

/// Brute-force EER: walks every distinct threshold with naive counting and
/// interpolates at the sign change of FAR - FRR. Independent of the fast path.
inline double eer_oracle(std::vector<double> tar, std::vector<double> non) {
  std::vector<double> thresholds;
  thresholds.insert(thresholds.end(), tar.begin(), tar.end());
  thresholds.insert(thresholds.end(), non.begin(), non.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  auto op_point = [&](double x, double& far, double& frr) {
    long fa = 0, fr = 0;
    for (double s : non) fa += s >= x ? 1 : 0;
    for (double s : tar) fr += s < x ? 1 : 0;
    far = static_cast<double>(fa) / static_cast<double>(non.size());
    frr = static_cast<double>(fr) / static_cast<double>(tar.size());
  };

  double far_prev = 1.0, frr_prev = 0.0;
  for (double x : thresholds) {
    double far, frr;
    op_point(x, far, frr);
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
  const double d_prev = far_prev - frr_prev;
  const double s = d_prev / (d_prev + 1.0);
  return far_prev + s * (0.0 - far_prev);
}

/// Band-limited random test signal: a sum of sinusoids below max_hz.
inline veil::signal::Waveform random_tone_mix(long n, std::mt19937_64& rng,
                                              double max_hz = 6000.0, int n_tones = 12,
                                              int sample_rate = 16000) {
  std::uniform_real_distribution<double> freq(40.0, max_hz);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> amp(0.02, 0.12);
  veil::signal::Waveform w;
  w.sample_rate = sample_rate;
  w.samples = Vec::Zero(n);
  for (int t = 0; t < n_tones; ++t) {
    const double f = freq(rng), p = phase(rng), a = amp(rng);
    for (long i = 0; i < n; ++i) {
      w.samples[i] += a * std::sin(2.0 * M_PI * f * i / sample_rate + p);
    }
  }
  return w;
}

/// Uniform white noise in [-amp, amp].
inline veil::signal::Waveform random_noise(long n, std::mt19937_64& rng, double amp = 0.5,
                                           int sample_rate = 16000) {
  veil::signal::Waveform w;
  w.sample_rate = sample_rate;
  w.samples = random_vec(n, rng, amp);
  return w;
}

// Small configs keep unit tests fast; the paper-scale defaults are exercised
// by the acceptance suite.
inline veil::signal::StftConfig micro_stft() {
  veil::signal::StftConfig c;
  c.fft_size = 128;
  c.win_length = 128;
  c.hop_length = 32;
  c.n_bins = 64;
  return c;
}

inline veil::signal::FbankConfig micro_fbank() {
  veil::signal::FbankConfig c;
  c.n_mels = 20;
  return c;
}

}  // namespace testutil
