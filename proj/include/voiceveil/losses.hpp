#pragma once

#include <utility>
#include <vector>

#include "voiceveil/autodiff.hpp"

namespace veil::losses {

using Mat = ad::Mat;
using Vec = ad::Vec;

struct LossWeights {
  double alpha = 0.5;   // perceptual
  double beta = 0.15;   // angular
  double gamma = 0.35;  // batch mean

  void validate() const;
};

struct BatchLossBreakdown {
  double perceptual = 0.0;
  double angular = 0.0;
  double batch_mean = 0.0;
  double total = 0.0;
  Vec pseudo_speaker;
  int batch_size = 0;
};

// ---------------------------------------------------------------------------
// Plain evaluations over paired batches. Z/Zt are embeddings paired by index;
// F/Ft are feature matrices [T_k x n_mels] with matching frame counts.

/// (1/K) sum_k cos(z_k, zt_k). Minimizing separates adversarial embeddings
/// from their originals.
double angular_loss(const std::vector<Vec>& z, const std::vector<Vec>& zt);

/// -(1/sum T_k) sum_k sum_t cos(f_{k,t}, ft_{k,t}), pooled over all frames.
double perceptual_loss(const std::vector<Mat>& f, const std::vector<Mat>& ft);

/// Pseudo-speaker mu = mean of zt; loss = -(1/K) sum_k cos(zt_k, mu).
/// K = 1 returns -1 (a single embedding is its own mean). Throws when the
/// batch is antipodal-degenerate (|mu| < 1e-8).
std::pair<double, Vec> batch_mean_loss(const std::vector<Vec>& zt);

BatchLossBreakdown total_loss(const std::vector<Mat>& f, const std::vector<Mat>& ft,
                              const std::vector<Vec>& z, const std::vector<Vec>& zt,
                              const LossWeights& w);

// ---------------------------------------------------------------------------
// Graph-building variants. Embeddings are [1 x D] rows on the tape; values
// match the plain evaluations exactly, and gradients flow to the perturbed
// inputs only when the originals entered the tape as constants.

ad::Var angular_loss_graph(ad::Tape& t, const std::vector<ad::Var>& z,
                           const std::vector<ad::Var>& zt);
ad::Var perceptual_loss_graph(ad::Tape& t, const std::vector<ad::Var>& f,
                              const std::vector<ad::Var>& ft);
ad::Var batch_mean_loss_graph(ad::Tape& t, const std::vector<ad::Var>& zt,
                              Vec* pseudo_out = nullptr);

struct TotalLossGraph {
  ad::Var total;
  ad::Var perceptual;
  ad::Var angular;
  ad::Var batch_mean;
  Vec pseudo_speaker;
};

TotalLossGraph total_loss_graph(ad::Tape& t, const std::vector<ad::Var>& f,
                                const std::vector<ad::Var>& ft, const std::vector<ad::Var>& z,
                                const std::vector<ad::Var>& zt, const LossWeights& w);

}  // namespace veil::losses
