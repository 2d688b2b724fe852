#include "voiceveil/nn.hpp"

#include <random>

#include "doctest.h"
#include "helpers.hpp"

using namespace veil;
using testutil::random_mat;

namespace {

// FD check of a layer's gradient w.r.t. one named parameter.
double param_grad_err(nn::ParamStore& store, const std::string& name,
                      const std::function<ad::Var(ad::Tape&, nn::Binder&)>& build) {
  ad::Tape tape;
  nn::Binder b(tape, store, true);
  ad::Var root = build(tape, b);
  tape.backward(root);
  ad::Mat analytic;
  for (const auto& p : b.bound()) {
    if (p.name == name) analytic = p.var.grad();
  }
  REQUIRE(analytic.size() > 0);

  ad::Mat& target = store.get(name);
  const ad::Mat fd = testutil::fd_grad(target, [&](const ad::Mat& probe) {
    const ad::Mat saved = target;
    target = probe;
    ad::Tape t2;
    nn::Binder b2(t2, store, false);
    const double v = build(t2, b2).scalar();
    target = saved;
    return v;
  });
  return testutil::rel_err(analytic, fd);
}

}  // namespace

TEST_CASE("nn: layer_norm normalizes rows and matches finite differences") {
  std::mt19937_64 rng(61);
  nn::ParamStore store;
  nn::init_layer_norm(store, "ln", 6);

  const ad::Mat x = random_mat(5, 6, rng, 2.0);
  {
    ad::Tape t;
    nn::Binder b(t, store, false);
    ad::Var out = nn::layer_norm(t, b, "ln", t.constant(x));
    // Unit gamma, zero beta: every row has mean ~0 and variance ~1.
    for (long i = 0; i < out.rows(); ++i) {
      CHECK(out.value().row(i).mean() == doctest::Approx(0.0).epsilon(1e-9));
      const double var = out.value().row(i).squaredNorm() / 6.0;
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  store.get("ln.gamma") = random_mat(1, 6, rng);
  store.get("ln.beta") = random_mat(1, 6, rng);
  auto build_from_x = [&](ad::Tape& t, ad::Var v) {
    nn::Binder b(t, store, false);
    std::mt19937_64 pr(62);
    return t.sum(t.mul(nn::layer_norm(t, b, "ln", v), t.constant(random_mat(5, 6, pr))));
  };
  CHECK(testutil::grad_check(x, build_from_x) < 1e-6);

  auto build_from_params = [&](ad::Tape& t, nn::Binder& b) {
    std::mt19937_64 pr(62);
    return t.sum(t.mul(nn::layer_norm(t, b, "ln", t.constant(x)),
                       t.constant(random_mat(5, 6, pr))));
  };
  CHECK(param_grad_err(store, "ln.gamma", build_from_params) < 1e-6);
  CHECK(param_grad_err(store, "ln.beta", build_from_params) < 1e-6);
}

TEST_CASE("nn: conv1d with dilation matches a direct convolution") {
  std::mt19937_64 rng(63);
  nn::ParamStore store;
  nn::init_conv1d(store, "c", 3, 2, 3, rng);
  const ad::Mat x = random_mat(7, 3, rng);

  ad::Tape t;
  nn::Binder b(t, store, false);
  ad::Var out = nn::conv1d(t, b, "c", t.constant(x), 3, 2);
  REQUIRE(out.rows() == 7);
  REQUIRE(out.cols() == 2);

  const ad::Mat& w = store.get("c.weight");  // [in*k x out], tap-major
  const ad::Mat& bias = store.get("c.bias");
  for (long ti = 0; ti < 7; ++ti) {
    for (long co = 0; co < 2; ++co) {
      double acc = bias(0, co);
      for (int tap = 0; tap < 3; ++tap) {
        const long src = ti + (tap - 1) * 2;  // dilation 2
        if (src < 0 || src >= 7) continue;
        for (long ci = 0; ci < 3; ++ci) acc += x(src, ci) * w(tap * 3 + ci, co);
      }
      CHECK(out.value()(ti, co) == doctest::Approx(acc).epsilon(1e-12));
    }
  }

  auto build = [&](ad::Tape& tp, nn::Binder& bp) {
    std::mt19937_64 pr(64);
    return tp.sum(tp.mul(nn::conv1d(tp, bp, "c", tp.constant(x), 3, 2),
                         tp.constant(random_mat(7, 2, pr))));
  };
  CHECK(param_grad_err(store, "c.weight", build) < 1e-6);
  CHECK(param_grad_err(store, "c.bias", build) < 1e-6);
}

TEST_CASE("nn: self-attention is frame-synchronous and differentiable") {
  std::mt19937_64 rng(65);
  nn::ParamStore store;
  nn::init_mhsa(store, "sa", 8, 2, 4, rng);
  // Nonzero bias table so the relative-position path is exercised.
  store.get("sa.rel_bias.0") = random_mat(1, 9, rng, 0.3);
  store.get("sa.rel_bias.1") = random_mat(1, 9, rng, 0.3);

  for (int frames : {1, 3, 9}) {
    ad::Tape t;
    nn::Binder b(t, store, false);
    const ad::Mat x = random_mat(frames, 8, rng);
    ad::Var out = nn::mhsa_relpos(t, b, "sa", t.constant(x), 2, 4);
    CHECK(out.rows() == frames);
    CHECK(out.cols() == 8);
  }

  const ad::Mat x = random_mat(6, 8, rng);
  auto build_from_x = [&](ad::Tape& t, ad::Var v) {
    nn::Binder b(t, store, false);
    std::mt19937_64 pr(66);
    return t.sum(t.mul(nn::mhsa_relpos(t, b, "sa", v, 2, 4), t.constant(random_mat(6, 8, pr))));
  };
  CHECK(testutil::grad_check(x, build_from_x) < 1e-6);

  auto build_from_params = [&](ad::Tape& t, nn::Binder& b) {
    std::mt19937_64 pr(66);
    return t.sum(t.mul(nn::mhsa_relpos(t, b, "sa", t.constant(x), 2, 4),
                       t.constant(random_mat(6, 8, pr))));
  };
  CHECK(param_grad_err(store, "sa.q.weight", build_from_params) < 1e-6);
  CHECK(param_grad_err(store, "sa.rel_bias.0", build_from_params) < 1e-6);
  CHECK(param_grad_err(store, "sa.out.bias", build_from_params) < 1e-6);
}

TEST_CASE("nn: adam converges on a quadratic and clips gradients") {
  nn::ParamStore store;
  store.create("w", 1, 4) = (ad::Mat(1, 4) << 4.0, -3.0, 2.0, -1.0).finished();
  nn::Adam opt;
  for (int i = 0; i < 400; ++i) {
    ad::Tape t;
    nn::Binder b(t, store, true);
    ad::Var loss = t.sum(t.square(b("w")));
    t.backward(loss);
    opt.step(b.bound(), 0.05);
  }
  CHECK(store.get("w").cwiseAbs().maxCoeff() < 1e-3);

  bool clipped = false;
  ad::Tape t;
  nn::Binder b(t, store, true);
  store.get("w")(0, 0) = 100.0;
  ad::Var loss = t.sum(t.square(b("w")));
  t.backward(loss);
  const double norm = opt.step(b.bound(), 0.0, 1.0, &clipped);
  CHECK(norm > 1.0);
  CHECK(clipped);
}

TEST_CASE("nn: param store hashing tracks content") {
  std::mt19937_64 rng(67);
  nn::ParamStore a;
  a.create("x", 2, 2) = random_mat(2, 2, rng);
  const uint64_t h0 = a.content_hash();
  CHECK(a.content_hash() == h0);
  a.get("x")(0, 0) += 1e-15;
  CHECK(a.content_hash() != h0);
  CHECK_THROWS_AS((void)a.get("missing"), std::logic_error);
  CHECK_THROWS_AS((void)a.create("x", 1, 1), std::logic_error);
}

TEST_CASE("nn: frozen binder records nothing") {
  std::mt19937_64 rng(68);
  nn::ParamStore store;
  store.create("w", 2, 2) = random_mat(2, 2, rng);
  ad::Tape t;
  nn::Binder frozen(t, store, false);
  ad::Var loss = t.sum(t.square(frozen("w")));
  t.backward(loss);
  CHECK(frozen.bound().empty());
  // Gradient still flows through the node itself.
  CHECK(frozen("w").grad().cwiseAbs().maxCoeff() > 0.0);
}
