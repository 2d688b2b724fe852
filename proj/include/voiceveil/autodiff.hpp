#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

namespace veil::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; invalid when default-constructed.
class Var {
 public:
  Var() = default;
  bool valid() const { return tape_ != nullptr; }
  const Mat& value() const;
  const Mat& grad() const;
  double scalar() const;
  long rows() const;
  long cols() const;
  int index() const { return idx_; }

 private:
  friend class Tape;
  Var(Tape* tape, int idx) : tape_(tape), idx_(idx) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

/// Reverse-mode tape over dense double matrices. One tape per forward pass;
/// nodes are append-only and backward() walks them in reverse. Not
/// thread-safe: a tape has a single owner.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. Constants and leaves behave identically in backward; leaves are
  // the ones whose grad the caller intends to read afterwards.
  Var constant(Mat v);
  Var leaf(Mat v) { return constant(std::move(v)); }

  // Arithmetic (elementwise ops require equal shapes).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var cmul(Var a, double c);
  Var cadd(Var a, double c);
  Var scale(Var a, Var s);  // s is 1x1
  Var matmul(Var a, Var b);
  Var transpose(Var a);

  // Elementwise functions.
  Var relu(Var a);
  Var sigmoid(Var a);
  Var log(Var a);
  Var exp(Var a);
  Var sqrt(Var a);
  Var square(Var a);
  Var inv(Var a);
  Var clamp_min(Var a, double lo);  // subgradient: 1 where x > lo, else 0

  // Reductions.
  Var sum(Var a);       // -> 1x1
  Var mean(Var a);      // -> 1x1
  Var row_sum(Var a);   // [R x C] -> [R x 1]
  Var col_mean(Var a);  // [R x C] -> [1 x C]

  // Shape.
  Var slice_cols(Var a, int c0, int n);
  Var concat_cols(const std::vector<Var>& vs);
  Var concat_rows(const std::vector<Var>& vs);

  // Broadcast helpers.
  Var row_broadcast_mul(Var x, Var g);  // g [1 x C], scales each row
  Var row_broadcast_add(Var x, Var b);  // b [1 x C]
  Var col_broadcast_mul(Var x, Var s);  // s [R x 1], scales each column entrywise per row

  // Neural-net specific.
  Var softmax_rows(Var a);
  // Gathers a [T x C] sequence into [T x C*k] rows of dilated context with
  // zero padding, kernel taps ordered slowest-to-fastest (tap-major).
  Var im2col(Var x, int kernel, int dilation);
  // Depthwise temporal convolution, w [k x C], zero-padded same output.
  Var depthwise_conv(Var x, Var w);
  // Expands a [1 x (2*radius+1)] bias table to a [T x T] matrix of
  // b[j - i + radius] with the offset clamped to the table range.
  Var rel_bias(Var table, int t_frames);
  // Mean negative log-likelihood of labels under row-wise softmax of logits.
  Var cross_entropy_rows(Var logits, const std::vector<int>& labels);

  // Escape hatch for ops with bespoke backward passes (e.g. the STFT).
  // `back` receives the tape and the node's accumulated output gradient.
  Var custom(Mat value, std::function<void(Tape&, const Mat&)> back);

  // Accumulate into a node's gradient (for custom backward closures).
  void add_grad(int idx, const Mat& g);

  const Mat& value_of(int idx) const { return nodes_[idx].val; }
  const Mat& grad_of(int idx) const { return nodes_[idx].grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. Root must be 1x1.
  void backward(Var root);

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&, const Mat&)> back;
  };
  std::vector<Node> nodes_;
  Var push(Mat v, std::function<void(Tape&, const Mat&)> back);
  friend class Var;
};

}  // namespace veil::ad
