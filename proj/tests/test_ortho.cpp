// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// The Cayley map must produce proper rotations for arbitrary parameters,
// agree between the graph and tape-free implementations, and carry usable
// gradients back to the unconstrained parameter.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "onionlab/graph.hpp"
#include "onionlab/ortho.hpp"
#include "onionlab/rng.hpp"

using namespace onionlab;

namespace {
using GD = Graph<double>;
using TD = Tensor<double>;

TD random_square(Rng& rng, int64_t n, double scale) {
  TD t({n, n});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

double max_abs_diff(const TD& a, const TD& b) {
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

TD matmul_t(const TD& A, const TD& B) {  // A^T B
  TD C({A.cols(), B.cols()});
  for (int64_t r = 0; r < C.rows(); ++r)
    for (int64_t c = 0; c < C.cols(); ++c) {
      double acc = 0;
      for (int64_t k = 0; k < A.rows(); ++k) acc += A.at(k, r) * B.at(k, c);
      C.at(r, c) = acc;
    }
  return C;
}
}  // namespace

TEST_CASE("two by two closed form") {
  // P = [[0, a], [0, 0]] gives S = [[0, a/2], [-a/2, 0]]; with t = a/2 the
  // Cayley image is [[1-t^2, -2t], [2t, 1-t^2]] / (1+t^2).
  const double a = 0.8, t = a / 2, d = 1 + t * t;
  TD P({2, 2});
  P.at(0, 1) = a;
  const TD R = cayley_rotation(P);
  CHECK(R.at(0, 0) == doctest::Approx((1 - t * t) / d).epsilon(1e-12));
  CHECK(R.at(0, 1) == doctest::Approx(-2 * t / d).epsilon(1e-12));
  CHECK(R.at(1, 0) == doctest::Approx(2 * t / d).epsilon(1e-12));
  CHECK(R.at(1, 1) == doctest::Approx((1 - t * t) / d).epsilon(1e-12));
}

TEST_CASE("images are orthogonal across sizes and scales") {
  Rng rng(31);
  for (int64_t n : {1, 2, 3, 8, 16}) {
    for (double scale : {0.01, 1.0, 10.0}) {
      CAPTURE(n);
      CAPTURE(scale);
      const TD P = random_square(rng, n, scale);
      const TD R = cayley_rotation(P);
      const TD G = matmul_t(R, R);
      for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < n; ++c)
          CHECK(G.at(r, c) == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("identity parameter maps to the identity rotation") {
  // Any symmetric P (including I and 0) projects to S = 0.
  TD P({4, 4});
  for (int64_t i = 0; i < 4; ++i) P.at(i, i) = 3.7;
  const TD R = cayley_rotation(P);
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 4; ++c)
      CHECK(R.at(r, c) == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-12));
}

TEST_CASE("graph and tape-free implementations agree") {
  Rng rng(32);
  const TD P = random_square(rng, 6, 1.3);
  const TD direct = cayley_rotation(P);
  ParamStore<double> st;
  auto& p = st.add("P", P);
  GD g;
  const TD graphed = g.value(orthogonalize(g, g.param(p)));
  CHECK(max_abs_diff(direct, graphed) < 1e-10);
}

TEST_CASE("rotation applied then transposed is a lossless roundtrip") {
  Rng rng(33);
  const TD P = random_square(rng, 8, 1.0);
  const TD R = cayley_rotation(P);
  TD x({1, 8});
  for (int64_t i = 0; i < 8; ++i) x[i] = rng.uniform(-2, 2);
  // y = x R, back = y R^T
  TD y({1, 8}), back({1, 8});
  for (int64_t c = 0; c < 8; ++c) {
    double acc = 0;
    for (int64_t k = 0; k < 8; ++k) acc += x[k] * R.at(k, c);
    y[c] = acc;
  }
  for (int64_t c = 0; c < 8; ++c) {
    double acc = 0;
    for (int64_t k = 0; k < 8; ++k) acc += y[k] * R.at(c, k);
    back[c] = acc;
  }
  CHECK(max_abs_diff(x, back) < 1e-12);
}

TEST_CASE("gradients flow through the map and match finite differences") {
  Rng rng(34);
  ParamStore<double> st;
  auto& p = st.add("P", random_square(rng, 4, 0.7));
  TD W({4, 4});
  for (int64_t i = 0; i < W.numel(); ++i) W[i] = rng.uniform(-1, 1);

  auto loss_of = [&](GD& g) {
    return g.sum_all(g.mul(orthogonalize(g, g.param(p)), g.input(W)));
  };
  st.zero_grads();
  {
    GD g;
    g.backward(loss_of(g));
  }
  const TD ana = p.grad;
  const double eps = 1e-6;
  for (int64_t i = 0; i < p.value.numel(); ++i) {
    const double keep = p.value[i];
    p.value[i] = keep + eps;
    double lp;
    {
      GD g;
      lp = g.scalar_value(loss_of(g));
    }
    p.value[i] = keep - eps;
    double lm;
    {
      GD g;
      lm = g.scalar_value(loss_of(g));
    }
    p.value[i] = keep;
    const double num = (lp - lm) / (2 * eps);
    CAPTURE(i);
    CHECK(std::abs(num - ana[i]) / std::max({1e-4, std::abs(num), std::abs(ana[i])}) < 1e-4);
  }
}

TEST_CASE("float path stays orthogonal within single precision") {
  Rng rng(35);
  Tensor<float> P({12, 12});
  for (int64_t i = 0; i < P.numel(); ++i)
    P[i] = static_cast<float>(rng.uniform(-1, 1));
  const Tensor<float> R = cayley_rotation(P);
  for (int64_t r = 0; r < 12; ++r)
    for (int64_t c = 0; c < 12; ++c) {
      double acc = 0;
      for (int64_t k = 0; k < 12; ++k)
        acc += static_cast<double>(R.at(k, r)) * R.at(k, c);
      CHECK(acc == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(2e-5));
    }
}
