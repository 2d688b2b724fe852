#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "voiceveil/autodiff.hpp"

namespace veil::nn {

using Mat = ad::Mat;

/// Ordered collection of named parameter tensors owned by a model.
class ParamStore {
 public:
  Mat& create(const std::string& name, long rows, long cols);
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  Mat& get(const std::string& name);
  const Mat& get(const std::string& name) const;
  std::map<std::string, Mat>& tensors() { return tensors_; }
  const std::map<std::string, Mat>& tensors() const { return tensors_; }
  size_t count() const { return tensors_.size(); }
  long total_size() const;

  /// FNV-1a over names and raw tensor bytes; used to assert immutability.
  uint64_t content_hash() const;

 private:
  std::map<std::string, Mat> tensors_;
};

/// A parameter bound onto a tape for one forward/backward pass.
struct BoundParam {
  std::string name;
  Mat* tensor;
  ad::Var var;
};

/// Places store tensors onto a tape, once per name. When trainable, records
/// the bound parameters so the optimizer can read gradients after backward;
/// a frozen binder records nothing, so no update can ever reach the store.
class Binder {
 public:
  Binder(ad::Tape& tape, ParamStore& store, bool trainable)
      : tape_(tape), store_(store), trainable_(trainable) {}

  ad::Var operator()(const std::string& name);
  const std::vector<BoundParam>& bound() const { return bound_; }
  bool trainable() const { return trainable_; }

 private:
  ad::Tape& tape_;
  ParamStore& store_;
  bool trainable_;
  std::map<std::string, ad::Var> cache_;
  std::vector<BoundParam> bound_;
};

// ---------------------------------------------------------------------------
// Parameter initialization

Mat uniform_init(long rows, long cols, double limit, std::mt19937_64& rng);

void init_linear(ParamStore& p, const std::string& prefix, long in, long out,
                 std::mt19937_64& rng, bool zero = false);
void init_layer_norm(ParamStore& p, const std::string& prefix, long width);
void init_conv1d(ParamStore& p, const std::string& prefix, long in, long out, int kernel,
                 std::mt19937_64& rng);
void init_depthwise_conv(ParamStore& p, const std::string& prefix, long channels, int kernel,
                         std::mt19937_64& rng);
void init_mhsa(ParamStore& p, const std::string& prefix, long width, int n_heads, int radius,
               std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Graph builders. x is [T x C]; prefixes address the store.

ad::Var linear(ad::Tape& t, Binder& b, const std::string& prefix, ad::Var x);
ad::Var layer_norm(ad::Tape& t, Binder& b, const std::string& prefix, ad::Var x,
                   double eps = 1e-5);
ad::Var conv1d(ad::Tape& t, Binder& b, const std::string& prefix, ad::Var x, int kernel,
               int dilation);
/// Pre-norm relative-position multi-head self-attention with residual.
ad::Var mhsa_relpos(ad::Tape& t, Binder& b, const std::string& prefix, ad::Var x, int n_heads,
                    int radius);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update over the bound parameters. Returns the global gradient norm
  /// before clipping; when clip_norm > 0 and exceeded, the update is scaled
  /// down and *clipped is set.
  double step(const std::vector<BoundParam>& bound, double lr, double clip_norm = 0.0,
              bool* clipped = nullptr);

  long step_count() const { return t_; }

  /// Flat view of the moment estimates for checkpointing.
  std::map<std::string, Mat> state() const;
  void load_state(const std::map<std::string, Mat>& state, long step_count);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments_;  // name -> (m, v)
};

}  // namespace veil::nn
