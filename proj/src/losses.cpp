#include "voiceveil/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace veil::losses {

namespace {

constexpr double kDegenerateNorm = 1e-8;

double cosine(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": dim mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument(std::string(what) + ": zero-norm vector");
  }
  return a.dot(b) / (na * nb);
}

// cos between two [1 x D] rows on the tape.
ad::Var cosine_graph(ad::Tape& t, ad::Var a, ad::Var b) {
  ad::Var dot = t.sum(t.mul(a, b));
  ad::Var na = t.sqrt(t.sum(t.square(a)));
  ad::Var nb = t.sqrt(t.sum(t.square(b)));
  return t.div(dot, t.mul(na, nb));
}

}  // namespace

void LossWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw std::invalid_argument("LossWeights: weights must be nonnegative");
  }
  if (std::abs(alpha + beta + gamma - 1.0) > 1e-9) {
    throw std::invalid_argument("LossWeights: weights must sum to 1");
  }
}

double angular_loss(const std::vector<Vec>& z, const std::vector<Vec>& zt) {
  if (z.empty() || z.size() != zt.size()) {
    throw std::invalid_argument("angular_loss: need K >= 1 paired embeddings");
  }
  double acc = 0.0;
  for (size_t k = 0; k < z.size(); ++k) acc += cosine(z[k], zt[k], "angular_loss");
  return acc / static_cast<double>(z.size());
}

double perceptual_loss(const std::vector<Mat>& f, const std::vector<Mat>& ft) {
  if (f.empty() || f.size() != ft.size()) {
    throw std::invalid_argument("perceptual_loss: need K >= 1 paired feature sets");
  }
  double acc = 0.0;
  long total_frames = 0;
  for (size_t k = 0; k < f.size(); ++k) {
    if (f[k].rows() != ft[k].rows() || f[k].cols() != ft[k].cols()) {
      throw std::invalid_argument("perceptual_loss: frame-count mismatch in pair " +
                                  std::to_string(k));
    }
    for (long t = 0; t < f[k].rows(); ++t) {
      acc += cosine(f[k].row(t).transpose(), ft[k].row(t).transpose(), "perceptual_loss");
    }
    total_frames += f[k].rows();
  }
  return -acc / static_cast<double>(total_frames);
}

std::pair<double, Vec> batch_mean_loss(const std::vector<Vec>& zt) {
  if (zt.empty()) throw std::invalid_argument("batch_mean_loss: empty batch");
  Vec mu = Vec::Zero(zt[0].size());
  for (const Vec& v : zt) {
    if (v.size() != mu.size()) throw std::invalid_argument("batch_mean_loss: dim mismatch");
    mu += v;
  }
  mu /= static_cast<double>(zt.size());
  if (zt.size() == 1) return {-1.0, mu};
  if (mu.norm() < kDegenerateNorm) {
    throw std::runtime_error("batch_mean_loss: degenerate pseudo-speaker (zero mean)");
  }
  double acc = 0.0;
  for (const Vec& v : zt) acc += cosine(v, mu, "batch_mean_loss");
  return {-acc / static_cast<double>(zt.size()), mu};
}

BatchLossBreakdown total_loss(const std::vector<Mat>& f, const std::vector<Mat>& ft,
                              const std::vector<Vec>& z, const std::vector<Vec>& zt,
                              const LossWeights& w) {
  w.validate();
  if (f.size() != zt.size() || z.size() != zt.size()) {
    throw std::invalid_argument("total_loss: inconsistent batch");
  }
  BatchLossBreakdown out;
  out.batch_size = static_cast<int>(zt.size());
  out.perceptual = perceptual_loss(f, ft);
  out.angular = angular_loss(z, zt);
  auto [bm, mu] = batch_mean_loss(zt);
  out.batch_mean = bm;
  out.pseudo_speaker = std::move(mu);
  out.total = w.alpha * out.perceptual + w.beta * out.angular + w.gamma * out.batch_mean;
  return out;
}

// ---------------------------------------------------------------------------

ad::Var angular_loss_graph(ad::Tape& t, const std::vector<ad::Var>& z,
                           const std::vector<ad::Var>& zt) {
  if (z.empty() || z.size() != zt.size()) {
    throw std::invalid_argument("angular_loss_graph: need K >= 1 paired embeddings");
  }
  ad::Var acc;
  for (size_t k = 0; k < z.size(); ++k) {
    ad::Var c = cosine_graph(t, z[k], zt[k]);
    acc = acc.valid() ? t.add(acc, c) : c;
  }
  return t.cmul(acc, 1.0 / static_cast<double>(z.size()));
}

ad::Var perceptual_loss_graph(ad::Tape& t, const std::vector<ad::Var>& f,
                              const std::vector<ad::Var>& ft) {
  if (f.empty() || f.size() != ft.size()) {
    throw std::invalid_argument("perceptual_loss_graph: need K >= 1 paired feature sets");
  }
  ad::Var acc;
  long total_frames = 0;
  for (size_t k = 0; k < f.size(); ++k) {
    if (f[k].rows() != ft[k].rows()) {
      throw std::invalid_argument("perceptual_loss_graph: frame-count mismatch in pair " +
                                  std::to_string(k));
    }
    ad::Var dots = t.row_sum(t.mul(f[k], ft[k]));  // [T x 1]
    ad::Var na = t.sqrt(t.row_sum(t.square(f[k])));
    ad::Var nb = t.sqrt(t.row_sum(t.square(ft[k])));
    ad::Var frame_cos = t.div(dots, t.mul(na, nb));
    ad::Var s = t.sum(frame_cos);
    acc = acc.valid() ? t.add(acc, s) : s;
    total_frames += f[k].rows();
  }
  return t.cmul(acc, -1.0 / static_cast<double>(total_frames));
}

ad::Var batch_mean_loss_graph(ad::Tape& t, const std::vector<ad::Var>& zt, Vec* pseudo_out) {
  if (zt.empty()) throw std::invalid_argument("batch_mean_loss_graph: empty batch");
  const double k = static_cast<double>(zt.size());
  ad::Var mu_sum;
  for (const ad::Var& v : zt) mu_sum = mu_sum.valid() ? t.add(mu_sum, v) : v;
  ad::Var mu = t.cmul(mu_sum, 1.0 / k);
  if (pseudo_out) *pseudo_out = mu.value().row(0).transpose();
  if (zt.size() == 1) return t.constant((Mat(1, 1) << -1.0).finished());
  if (mu.value().norm() < kDegenerateNorm) {
    throw std::runtime_error("batch_mean_loss_graph: degenerate pseudo-speaker (zero mean)");
  }
  ad::Var acc;
  for (const ad::Var& v : zt) {
    ad::Var c = cosine_graph(t, v, mu);
    acc = acc.valid() ? t.add(acc, c) : c;
  }
  return t.cmul(acc, -1.0 / k);
}

TotalLossGraph total_loss_graph(ad::Tape& t, const std::vector<ad::Var>& f,
                                const std::vector<ad::Var>& ft, const std::vector<ad::Var>& z,
                                const std::vector<ad::Var>& zt, const LossWeights& w) {
  w.validate();
  TotalLossGraph g;
  g.perceptual = perceptual_loss_graph(t, f, ft);
  g.angular = angular_loss_graph(t, z, zt);
  g.batch_mean = batch_mean_loss_graph(t, zt, &g.pseudo_speaker);
  g.total = t.add(t.add(t.cmul(g.perceptual, w.alpha), t.cmul(g.angular, w.beta)),
                  t.cmul(g.batch_mean, w.gamma));
  return g;
}

}  // namespace veil::losses
