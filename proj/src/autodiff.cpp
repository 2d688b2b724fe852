#include "voiceveil/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace veil::ad {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

}  // namespace

const Mat& Var::value() const { return tape_->value_of(idx_); }
const Mat& Var::grad() const { return tape_->grad_of(idx_); }
double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar on non-1x1 value");
  return v(0, 0);
}
long Var::rows() const { return value().rows(); }
long Var::cols() const { return value().cols(); }

Var Tape::push(Mat v, std::function<void(Tape&, const Mat&)> back) {
  nodes_.push_back(Node{std::move(v), Mat(), std::move(back)});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::add_grad(int idx, const Mat& g) {
  Mat& dst = nodes_[idx].grad;
  if (dst.size() == 0) {
    dst = g;
  } else {
    dst += g;
  }
}

Var Tape::constant(Mat v) { return push(std::move(v), nullptr); }

Var Tape::add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  int ia = a.idx_, ib = b.idx_;
  return push(a.value() + b.value(), [ia, ib](Tape& t, const Mat& g) {
    t.add_grad(ia, g);
    t.add_grad(ib, g);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  int ia = a.idx_, ib = b.idx_;
  return push(a.value() - b.value(), [ia, ib](Tape& t, const Mat& g) {
    t.add_grad(ia, g);
    t.add_grad(ib, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "mul");
  int ia = a.idx_, ib = b.idx_;
  return push(a.value().cwiseProduct(b.value()), [ia, ib](Tape& t, const Mat& g) {
    t.add_grad(ia, g.cwiseProduct(t.value_of(ib)));
    t.add_grad(ib, g.cwiseProduct(t.value_of(ia)));
  });
}

Var Tape::div(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "div");
  int ia = a.idx_, ib = b.idx_;
  return push(a.value().cwiseQuotient(b.value()), [ia, ib](Tape& t, const Mat& g) {
    const Mat& bv = t.value_of(ib);
    t.add_grad(ia, g.cwiseQuotient(bv));
    t.add_grad(ib, -g.cwiseProduct(t.value_of(ia)).cwiseQuotient(bv.cwiseProduct(bv)));
  });
}

Var Tape::neg(Var a) {
  int ia = a.idx_;
  return push(-a.value(), [ia](Tape& t, const Mat& g) { t.add_grad(ia, -g); });
}

Var Tape::cmul(Var a, double c) {
  int ia = a.idx_;
  return push(a.value() * c, [ia, c](Tape& t, const Mat& g) { t.add_grad(ia, g * c); });
}

Var Tape::cadd(Var a, double c) {
  int ia = a.idx_;
  return push(a.value().array() + c, [ia](Tape& t, const Mat& g) { t.add_grad(ia, g); });
}

Var Tape::scale(Var a, Var s) {
  if (s.value().size() != 1) throw std::invalid_argument("scale: s must be 1x1");
  int ia = a.idx_, is = s.idx_;
  return push(a.value() * s.value()(0, 0), [ia, is](Tape& t, const Mat& g) {
    double sv = t.value_of(is)(0, 0);
    t.add_grad(ia, g * sv);
    Mat gs(1, 1);
    gs(0, 0) = g.cwiseProduct(t.value_of(ia)).sum();
    t.add_grad(is, gs);
  });
}

Var Tape::matmul(Var a, Var b) {
  if (a.value().cols() != b.value().rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch");
  }
  int ia = a.idx_, ib = b.idx_;
  return push(a.value() * b.value(), [ia, ib](Tape& t, const Mat& g) {
    t.add_grad(ia, g * t.value_of(ib).transpose());
    t.add_grad(ib, t.value_of(ia).transpose() * g);
  });
}

Var Tape::transpose(Var a) {
  int ia = a.idx_;
  return push(a.value().transpose(),
              [ia](Tape& t, const Mat& g) { t.add_grad(ia, g.transpose()); });
}

Var Tape::relu(Var a) {
  int ia = a.idx_;
  return push(a.value().cwiseMax(0.0), [ia](Tape& t, const Mat& g) {
    t.add_grad(ia, (t.value_of(ia).array() > 0.0).cast<double>().matrix().cwiseProduct(g));
  });
}

Var Tape::sigmoid(Var a) {
  Mat s = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  int ia = a.idx_;
  Var out = push(std::move(s), nullptr);
  int io = out.idx_;
  nodes_[io].back = [ia, io](Tape& t, const Mat& g) {
    const Mat& sv = t.value_of(io);
    t.add_grad(ia, g.cwiseProduct(sv.cwiseProduct((1.0 - sv.array()).matrix())));
  };
  return out;
}

Var Tape::log(Var a) {
  int ia = a.idx_;
  return push(a.value().array().log().matrix(), [ia](Tape& t, const Mat& g) {
    t.add_grad(ia, g.cwiseQuotient(t.value_of(ia)));
  });
}

Var Tape::exp(Var a) {
  int ia = a.idx_;
  Var out = push(a.value().array().exp().matrix(), nullptr);
  int io = out.idx_;
  nodes_[io].back = [ia, io](Tape& t, const Mat& g) {
    t.add_grad(ia, g.cwiseProduct(t.value_of(io)));
  };
  return out;
}

Var Tape::sqrt(Var a) {
  int ia = a.idx_;
  Var out = push(a.value().array().sqrt().matrix(), nullptr);
  int io = out.idx_;
  nodes_[io].back = [ia, io](Tape& t, const Mat& g) {
    t.add_grad(ia, (g.array() * 0.5 / t.value_of(io).array()).matrix());
  };
  return out;
}

Var Tape::square(Var a) {
  int ia = a.idx_;
  return push(a.value().cwiseProduct(a.value()), [ia](Tape& t, const Mat& g) {
    t.add_grad(ia, 2.0 * g.cwiseProduct(t.value_of(ia)));
  });
}

Var Tape::inv(Var a) {
  int ia = a.idx_;
  Var out = push(a.value().cwiseInverse(), nullptr);
  int io = out.idx_;
  nodes_[io].back = [ia, io](Tape& t, const Mat& g) {
    const Mat& ov = t.value_of(io);
    t.add_grad(ia, -g.cwiseProduct(ov).cwiseProduct(ov));
  };
  return out;
}

Var Tape::clamp_min(Var a, double lo) {
  int ia = a.idx_;
  return push(a.value().cwiseMax(lo), [ia, lo](Tape& t, const Mat& g) {
    t.add_grad(ia, (t.value_of(ia).array() > lo).cast<double>().matrix().cwiseProduct(g));
  });
}

Var Tape::sum(Var a) {
  int ia = a.idx_;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return push(std::move(out), [ia](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    t.add_grad(ia, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
  });
}

Var Tape::mean(Var a) {
  int ia = a.idx_;
  double n = static_cast<double>(a.value().size());
  Mat out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return push(std::move(out), [ia, n](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    t.add_grad(ia, Mat::Constant(av.rows(), av.cols(), g(0, 0) / n));
  });
}

Var Tape::row_sum(Var a) {
  int ia = a.idx_;
  return push(a.value().rowwise().sum(), [ia](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    t.add_grad(ia, g * Mat::Ones(1, av.cols()));
  });
}

Var Tape::col_mean(Var a) {
  int ia = a.idx_;
  double n = static_cast<double>(a.value().rows());
  return push(a.value().colwise().mean(), [ia, n](Tape& t, const Mat& g) {
    t.add_grad(ia, Mat::Ones(static_cast<long>(n), 1) * (g / n));
  });
}

Var Tape::slice_cols(Var a, int c0, int n) {
  if (c0 < 0 || c0 + n > a.value().cols()) {
    throw std::invalid_argument("slice_cols: out of range");
  }
  int ia = a.idx_;
  return push(a.value().middleCols(c0, n), [ia, c0, n](Tape& t, const Mat& g) {
    const Mat& av = t.value_of(ia);
    Mat full = Mat::Zero(av.rows(), av.cols());
    full.middleCols(c0, n) = g;
    t.add_grad(ia, full);
  });
}

Var Tape::concat_cols(const std::vector<Var>& vs) {
  if (vs.empty()) throw std::invalid_argument("concat_cols: empty");
  long rows = vs[0].value().rows(), cols = 0;
  std::vector<int> idx;
  std::vector<long> widths;
  for (const Var& v : vs) {
    if (v.value().rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    idx.push_back(v.idx_);
    widths.push_back(v.value().cols());
    cols += v.value().cols();
  }
  Mat out(rows, cols);
  long c = 0;
  for (const Var& v : vs) {
    out.middleCols(c, v.value().cols()) = v.value();
    c += v.value().cols();
  }
  return push(std::move(out), [idx, widths](Tape& t, const Mat& g) {
    long c = 0;
    for (size_t k = 0; k < idx.size(); ++k) {
      t.add_grad(idx[k], g.middleCols(c, widths[k]));
      c += widths[k];
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& vs) {
  if (vs.empty()) throw std::invalid_argument("concat_rows: empty");
  long cols = vs[0].value().cols(), rows = 0;
  std::vector<int> idx;
  std::vector<long> heights;
  for (const Var& v : vs) {
    if (v.value().cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
    idx.push_back(v.idx_);
    heights.push_back(v.value().rows());
    rows += v.value().rows();
  }
  Mat out(rows, cols);
  long r = 0;
  for (const Var& v : vs) {
    out.middleRows(r, v.value().rows()) = v.value();
    r += v.value().rows();
  }
  return push(std::move(out), [idx, heights](Tape& t, const Mat& g) {
    long r = 0;
    for (size_t k = 0; k < idx.size(); ++k) {
      t.add_grad(idx[k], g.middleRows(r, heights[k]));
      r += heights[k];
    }
  });
}

Var Tape::row_broadcast_mul(Var x, Var g) {
  if (g.value().rows() != 1 || g.value().cols() != x.value().cols()) {
    throw std::invalid_argument("row_broadcast_mul: g must be [1 x C]");
  }
  int ix = x.idx_, ig = g.idx_;
  Mat out = x.value().array().rowwise() * g.value().row(0).array();
  return push(std::move(out), [ix, ig](Tape& t, const Mat& go) {
    const Mat& xv = t.value_of(ix);
    const Mat& gv = t.value_of(ig);
    t.add_grad(ix, (go.array().rowwise() * gv.row(0).array()).matrix());
    t.add_grad(ig, go.cwiseProduct(xv).colwise().sum());
  });
}

Var Tape::row_broadcast_add(Var x, Var b) {
  if (b.value().rows() != 1 || b.value().cols() != x.value().cols()) {
    throw std::invalid_argument("row_broadcast_add: b must be [1 x C]");
  }
  int ix = x.idx_, ib = b.idx_;
  Mat out = x.value().array().rowwise() + b.value().row(0).array();
  return push(std::move(out), [ix, ib](Tape& t, const Mat& go) {
    t.add_grad(ix, go);
    t.add_grad(ib, go.colwise().sum());
  });
}

Var Tape::col_broadcast_mul(Var x, Var s) {
  if (s.value().cols() != 1 || s.value().rows() != x.value().rows()) {
    throw std::invalid_argument("col_broadcast_mul: s must be [R x 1]");
  }
  int ix = x.idx_, is = s.idx_;
  Mat out = x.value().array().colwise() * s.value().col(0).array();
  return push(std::move(out), [ix, is](Tape& t, const Mat& go) {
    const Mat& xv = t.value_of(ix);
    const Mat& sv = t.value_of(is);
    t.add_grad(ix, (go.array().colwise() * sv.col(0).array()).matrix());
    t.add_grad(is, go.cwiseProduct(xv).rowwise().sum());
  });
}

Var Tape::softmax_rows(Var a) {
  const Mat& av = a.value();
  Mat out(av.rows(), av.cols());
  for (long i = 0; i < av.rows(); ++i) {
    Eigen::ArrayXd row = av.row(i).array();
    row -= row.maxCoeff();
    Eigen::ArrayXd e = row.exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  int ia = a.idx_;
  Var v = push(std::move(out), nullptr);
  int io = v.idx_;
  nodes_[io].back = [ia, io](Tape& t, const Mat& g) {
    const Mat& s = t.value_of(io);
    Mat gi(s.rows(), s.cols());
    for (long i = 0; i < s.rows(); ++i) {
      double dot = g.row(i).dot(s.row(i));
      gi.row(i) = s.row(i).cwiseProduct(g.row(i)) - dot * s.row(i);
    }
    t.add_grad(ia, gi);
  };
  return v;
}

Var Tape::im2col(Var x, int kernel, int dilation) {
  const Mat& xv = x.value();
  const long t_len = xv.rows(), c = xv.cols();
  const int half = (kernel - 1) / 2;
  Mat out = Mat::Zero(t_len, c * kernel);
  for (int j = 0; j < kernel; ++j) {
    const long shift = static_cast<long>(j - half) * dilation;
    for (long t = 0; t < t_len; ++t) {
      const long src = t + shift;
      if (src >= 0 && src < t_len) out.block(t, j * c, 1, c) = xv.row(src);
    }
  }
  int ix = x.idx_;
  return push(std::move(out), [ix, kernel, dilation, c](Tape& t, const Mat& g) {
    const long t_len = g.rows();
    const int half = (kernel - 1) / 2;
    Mat gi = Mat::Zero(t_len, c);
    for (int j = 0; j < kernel; ++j) {
      const long shift = static_cast<long>(j - half) * dilation;
      for (long r = 0; r < t_len; ++r) {
        const long src = r + shift;
        if (src >= 0 && src < t_len) gi.row(src) += g.block(r, j * c, 1, c);
      }
    }
    t.add_grad(ix, gi);
  });
}

Var Tape::depthwise_conv(Var x, Var w) {
  const Mat& xv = x.value();
  const Mat& wv = w.value();
  if (wv.cols() != xv.cols()) throw std::invalid_argument("depthwise_conv: channel mismatch");
  const long t_len = xv.rows(), c = xv.cols();
  const int kernel = static_cast<int>(wv.rows());
  const int half = (kernel - 1) / 2;
  Mat out = Mat::Zero(t_len, c);
  for (int j = 0; j < kernel; ++j) {
    const long shift = static_cast<long>(j) - half;
    const long lo = std::max<long>(0, -shift), hi = std::min<long>(t_len, t_len - shift);
    if (hi <= lo) continue;
    out.middleRows(lo, hi - lo).array() +=
        xv.middleRows(lo + shift, hi - lo).array().rowwise() * wv.row(j).array();
  }
  int ix = x.idx_, iw = w.idx_;
  return push(std::move(out), [ix, iw, kernel, half](Tape& t, const Mat& g) {
    const Mat& xv = t.value_of(ix);
    const Mat& wv = t.value_of(iw);
    const long t_len = xv.rows(), c = xv.cols();
    Mat gx = Mat::Zero(t_len, c);
    Mat gw = Mat::Zero(kernel, c);
    for (int j = 0; j < kernel; ++j) {
      const long shift = static_cast<long>(j) - half;
      const long lo = std::max<long>(0, -shift), hi = std::min<long>(t_len, t_len - shift);
      if (hi <= lo) continue;
      gx.middleRows(lo + shift, hi - lo).array() +=
          g.middleRows(lo, hi - lo).array().rowwise() * wv.row(j).array();
      gw.row(j) = g.middleRows(lo, hi - lo)
                      .cwiseProduct(xv.middleRows(lo + shift, hi - lo))
                      .colwise()
                      .sum();
    }
    t.add_grad(ix, gx);
    t.add_grad(iw, gw);
  });
}

Var Tape::rel_bias(Var table, int t_frames) {
  const Mat& tab = table.value();
  if (tab.rows() != 1 || tab.cols() % 2 == 0) {
    throw std::invalid_argument("rel_bias: table must be [1 x odd]");
  }
  const int radius = static_cast<int>(tab.cols() / 2);
  Mat out(t_frames, t_frames);
  for (int i = 0; i < t_frames; ++i) {
    for (int j = 0; j < t_frames; ++j) {
      int d = std::min(std::max(j - i, -radius), radius);
      out(i, j) = tab(0, d + radius);
    }
  }
  int it = table.idx_;
  return push(std::move(out), [it, radius](Tape& t, const Mat& g) {
    Mat gt = Mat::Zero(1, 2 * radius + 1);
    for (long i = 0; i < g.rows(); ++i) {
      for (long j = 0; j < g.cols(); ++j) {
        int d = std::min(std::max(static_cast<int>(j - i), -radius), radius);
        gt(0, d + radius) += g(i, j);
      }
    }
    t.add_grad(it, gt);
  });
}

Var Tape::cross_entropy_rows(Var logits, const std::vector<int>& labels) {
  const Mat& lv = logits.value();
  if (static_cast<long>(labels.size()) != lv.rows()) {
    throw std::invalid_argument("cross_entropy_rows: label count mismatch");
  }
  const long n = lv.rows();
  double loss = 0.0;
  for (long i = 0; i < n; ++i) {
    Eigen::ArrayXd row = lv.row(i).array();
    double m = row.maxCoeff();
    double lse = m + std::log((row - m).exp().sum());
    loss += lse - lv(i, labels[i]);
  }
  Mat out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  int il = logits.idx_;
  return push(std::move(out), [il, labels, n](Tape& t, const Mat& g) {
    const Mat& lv = t.value_of(il);
    Mat gi(lv.rows(), lv.cols());
    for (long i = 0; i < n; ++i) {
      Eigen::ArrayXd row = lv.row(i).array();
      row -= row.maxCoeff();
      Eigen::ArrayXd e = row.exp();
      gi.row(i) = (e / e.sum()).matrix();
      gi(i, labels[i]) -= 1.0;
    }
    t.add_grad(il, gi * (g(0, 0) / static_cast<double>(n)));
  });
}

Var Tape::custom(Mat value, std::function<void(Tape&, const Mat&)> back) {
  return push(std::move(value), std::move(back));
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::logic_error("backward: root from another tape");
  if (nodes_[root.idx_].val.size() != 1) {
    throw std::logic_error("backward: root must be scalar");
  }
  for (Node& n : nodes_) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  nodes_[root.idx_].grad(0, 0) = 1.0;
  for (int i = root.idx_; i >= 0; --i) {
    if (nodes_[i].back && nodes_[i].grad.size() > 0) nodes_[i].back(*this, nodes_[i].grad);
  }
}

}  // namespace veil::ad
