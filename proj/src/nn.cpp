#include "voiceveil/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace veil::nn {

Mat& ParamStore::create(const std::string& name, long rows, long cols) {
  if (tensors_.count(name)) throw std::logic_error("ParamStore: duplicate tensor " + name);
  return tensors_[name] = Mat::Zero(rows, cols);
}

Mat& ParamStore::get(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::logic_error("ParamStore: missing tensor " + name);
  return it->second;
}

const Mat& ParamStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::logic_error("ParamStore: missing tensor " + name);
  return it->second;
}

long ParamStore::total_size() const {
  long n = 0;
  for (const auto& [name, m] : tensors_) n += m.size();
  return n;
}

uint64_t ParamStore::content_hash() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, m] : tensors_) {
    mix(name.data(), name.size());
    mix(m.data(), sizeof(double) * static_cast<size_t>(m.size()));
  }
  return h;
}

ad::Var Binder::operator()(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  Mat& tensor = store_.get(name);
  ad::Var v = tape_.leaf(tensor);
  cache_.emplace(name, v);
  if (trainable_) bound_.push_back(BoundParam{name, &tensor, v});
  return v;
}

// ---------------------------------------------------------------------------

Mat uniform_init(long rows, long cols, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Mat m(rows, cols);
  for (long c = 0; c < cols; ++c) {
    for (long r = 0; r < rows; ++r) m(r, c) = dist(rng);
  }
  return m;
}

void init_linear(ParamStore& p, const std::string& prefix, long in, long out,
                 std::mt19937_64& rng, bool zero) {
  if (zero) {
    p.create(prefix + ".weight", in, out);
  } else {
    p.create(prefix + ".weight", in, out) = uniform_init(in, out, std::sqrt(1.0 / in), rng);
  }
  p.create(prefix + ".bias", 1, out);
}

void init_layer_norm(ParamStore& p, const std::string& prefix, long width) {
  p.create(prefix + ".gamma", 1, width).setOnes();
  p.create(prefix + ".beta", 1, width);
}

void init_conv1d(ParamStore& p, const std::string& prefix, long in, long out, int kernel,
                 std::mt19937_64& rng) {
  p.create(prefix + ".weight", in * kernel, out) =
      uniform_init(in * kernel, out, std::sqrt(1.0 / (in * kernel)), rng);
  p.create(prefix + ".bias", 1, out);
}

void init_depthwise_conv(ParamStore& p, const std::string& prefix, long channels, int kernel,
                         std::mt19937_64& rng) {
  p.create(prefix + ".weight", kernel, channels) =
      uniform_init(kernel, channels, std::sqrt(1.0 / kernel), rng);
}

void init_mhsa(ParamStore& p, const std::string& prefix, long width, int n_heads, int radius,
               std::mt19937_64& rng) {
  init_layer_norm(p, prefix + ".norm", width);
  init_linear(p, prefix + ".q", width, width, rng);
  init_linear(p, prefix + ".k", width, width, rng);
  init_linear(p, prefix + ".v", width, width, rng);
  init_linear(p, prefix + ".out", width, width, rng);
  for (int h = 0; h < n_heads; ++h) {
    p.create(prefix + ".rel_bias." + std::to_string(h), 1, 2 * radius + 1);
  }
}

// ---------------------------------------------------------------------------

ad::Var linear(ad::Tape& t, Binder& b, const std::string& prefix, ad::Var x) {
  return t.row_broadcast_add(t.matmul(x, b(prefix + ".weight")), b(prefix + ".bias"));
}

ad::Var layer_norm(ad::Tape& t, Binder& b, const std::string& prefix, ad::Var x, double eps) {
  const long c = x.cols();
  ad::Var mu = t.cmul(t.row_sum(x), 1.0 / c);                       // [T x 1]
  ad::Var centered = t.sub(x, t.matmul(mu, t.constant(Mat::Ones(1, c))));
  ad::Var var = t.cmul(t.row_sum(t.square(centered)), 1.0 / c);     // [T x 1]
  ad::Var inv_std = t.inv(t.sqrt(t.cadd(var, eps)));
  ad::Var normed = t.col_broadcast_mul(centered, inv_std);
  return t.row_broadcast_add(t.row_broadcast_mul(normed, b(prefix + ".gamma")),
                             b(prefix + ".beta"));
}

ad::Var conv1d(ad::Tape& t, Binder& b, const std::string& prefix, ad::Var x, int kernel,
               int dilation) {
  ad::Var cols = t.im2col(x, kernel, dilation);
  return t.row_broadcast_add(t.matmul(cols, b(prefix + ".weight")), b(prefix + ".bias"));
}

ad::Var mhsa_relpos(ad::Tape& t, Binder& b, const std::string& prefix, ad::Var x, int n_heads,
                    int radius) {
  const long d = x.cols();
  if (d % n_heads != 0) throw std::invalid_argument("mhsa: heads must divide width");
  const long dh = d / n_heads;
  const int t_frames = static_cast<int>(x.rows());

  ad::Var normed = layer_norm(t, b, prefix + ".norm", x);
  ad::Var q = linear(t, b, prefix + ".q", normed);
  ad::Var k = linear(t, b, prefix + ".k", normed);
  ad::Var v = linear(t, b, prefix + ".v", normed);

  std::vector<ad::Var> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    ad::Var qh = t.slice_cols(q, static_cast<int>(h * dh), static_cast<int>(dh));
    ad::Var kh = t.slice_cols(k, static_cast<int>(h * dh), static_cast<int>(dh));
    ad::Var vh = t.slice_cols(v, static_cast<int>(h * dh), static_cast<int>(dh));
    ad::Var logits = t.cmul(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    logits = t.add(logits, t.rel_bias(b(prefix + ".rel_bias." + std::to_string(h)), t_frames));
    ad::Var attn = t.softmax_rows(logits);
    heads.push_back(t.matmul(attn, vh));
  }
  ad::Var merged = n_heads == 1 ? heads[0] : t.concat_cols(heads);
  return t.add(x, linear(t, b, prefix + ".out", merged));
}

// ---------------------------------------------------------------------------

double Adam::step(const std::vector<BoundParam>& bound, double lr, double clip_norm,
                  bool* clipped) {
  double sq_norm = 0.0;
  for (const BoundParam& p : bound) sq_norm += p.var.grad().squaredNorm();
  const double norm = std::sqrt(sq_norm);
  double factor = 1.0;
  if (clip_norm > 0.0 && norm > clip_norm) {
    factor = clip_norm / norm;
    if (clipped) *clipped = true;
  } else if (clipped) {
    *clipped = false;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const BoundParam& p : bound) {
    Mat g = p.var.grad() * factor;
    auto& [m, v] = moments_[p.name];
    if (m.size() == 0) {
      m = Mat::Zero(g.rows(), g.cols());
      v = Mat::Zero(g.rows(), g.cols());
    }
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Mat m_hat = m / bc1;
    Mat v_hat = v / bc2;
    p.tensor->array() -= lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
  }
  return norm;
}

std::map<std::string, Mat> Adam::state() const {
  std::map<std::string, Mat> out;
  for (const auto& [name, mv] : moments_) {
    out["adam.m." + name] = mv.first;
    out["adam.v." + name] = mv.second;
  }
  return out;
}

void Adam::load_state(const std::map<std::string, Mat>& state, long step_count) {
  t_ = step_count;
  moments_.clear();
  for (const auto& [key, m] : state) {
    if (key.rfind("adam.m.", 0) == 0) {
      moments_[key.substr(7)].first = m;
    } else if (key.rfind("adam.v.", 0) == 0) {
      moments_[key.substr(7)].second = m;
    }
  }
}

}  // namespace veil::nn
