// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Forward-value semantics of the graph ops against hand-computed oracles,
// plus the structural contracts the training code leans on: masked losses
// with explicit normalizers, empty masks as exact no-ops, biased layer norm
// variance, straight-through sampling frequencies.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "onionlab/graph.hpp"
#include "onionlab/rng.hpp"

using namespace onionlab;

namespace {
using GD = Graph<double>;
using TD = Tensor<double>;

TD make(std::vector<int64_t> shape, std::vector<double> v) {
  TD t(shape);
  REQUIRE(t.numel() == static_cast<int64_t>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i];
  return t;
}
}  // namespace

TEST_CASE("softmax and log softmax agree with closed forms") {
  GD g;
  const double l2 = std::log(2.0), l4 = std::log(4.0);
  auto x = g.input(make({1, 3}, {0.0, l2, l4}));
  const TD p = g.value(g.softmax_rows(x));  // copy: later pushes reallocate
  CHECK(p.at(0, 0) == doctest::Approx(1.0 / 7).epsilon(1e-12));
  CHECK(p.at(0, 1) == doctest::Approx(2.0 / 7).epsilon(1e-12));
  CHECK(p.at(0, 2) == doctest::Approx(4.0 / 7).epsilon(1e-12));
  const TD& lp = g.value(g.log_softmax_rows(x));
  for (int64_t c = 0; c < 3; ++c)
    CHECK(lp.at(0, c) == doctest::Approx(std::log(p.at(0, c))).epsilon(1e-12));
}

TEST_CASE("masked nll averages only masked rows") {
  GD g;
  auto lp = g.input(make({3, 3}, {-1.0, -2.0, -3.0,   //
                                  -0.5, -1.5, -2.5,   //
                                  -0.1, -0.2, -0.3}));
  // Default normalizer is the mask count.
  auto loss = g.masked_nll(lp, {2, 0, 1}, {1, 0, 1});
  CHECK(g.scalar_value(loss) == doctest::Approx((3.0 + 0.2) / 2).epsilon(1e-12));
  // An explicit normalizer overrides the count.
  auto loss2 = g.masked_nll(lp, {2, 0, 1}, {1, 0, 1}, 8.0);
  CHECK(g.scalar_value(loss2) == doctest::Approx((3.0 + 0.2) / 8).epsilon(1e-12));
}

TEST_CASE("masked nll with an empty mask is an exact no-op") {
  ParamStore<double> st;
  auto& X = st.add("X", make({2, 3}, {0.3, -0.4, 1.0, 0.2, 0.1, -0.9}));
  st.zero_grads();
  GD g;
  auto lp = g.log_softmax_rows(g.param(X));
  auto loss = g.masked_nll(lp, {0, 0}, {0, 0});
  CHECK(g.scalar_value(loss) == 0.0);
  g.backward(loss);
  for (int64_t i = 0; i < X.grad.numel(); ++i) CHECK(X.grad[i] == 0.0);
}

TEST_CASE("layer norm uses biased variance with epsilon inside the root") {
  GD g;
  auto x = g.input(make({1, 4}, {1.0, 2.0, 3.0, 4.0}));
  const TD& y = g.value(g.layer_norm_rows(x));
  const double mean = 2.5, var = 1.25, eps = 1e-5;
  for (int64_t c = 0; c < 4; ++c) {
    const double want = ((c + 1.0) - mean) / std::sqrt(var + eps);
    CHECK(y.at(0, c) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("broadcast ops apply per row and per column") {
  GD g;
  auto x = g.input(make({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto v = g.input(make({3}, {10, 20, 30}));
  auto c = g.input(make({2, 1}, {100, 200}));
  const TD a = g.value(g.add_rowvec(x, v));
  CHECK(a.at(0, 0) == 11);
  CHECK(a.at(1, 2) == 36);
  const TD m = g.value(g.mul_rowvec(x, v));
  CHECK(m.at(0, 1) == 40);
  CHECK(m.at(1, 0) == 40);
  const TD& s = g.value(g.add_colvec(x, c));
  CHECK(s.at(0, 2) == 103);
  CHECK(s.at(1, 0) == 204);
}

TEST_CASE("structural ops rearrange values without arithmetic") {
  GD g;
  auto e = g.input(make({3, 2}, {1, 2, 3, 4, 5, 6}));
  const TD gth = g.value(g.gather_rows(e, {2, 0, 2}));
  CHECK(gth.at(0, 0) == 5);
  CHECK(gth.at(1, 1) == 2);
  CHECK(gth.at(2, 1) == 6);

  auto x = g.input(make({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
  const TD sc = g.value(g.slice_cols(x, 1, 3));
  CHECK(sc.rows() == 2);
  CHECK(sc.cols() == 2);
  CHECK(sc.at(0, 0) == 2);
  CHECK(sc.at(1, 1) == 7);
  const TD sr = g.value(g.slice_rows(x, 1, 2));
  CHECK(sr.rows() == 1);
  CHECK(sr.at(0, 3) == 8);

  auto y = g.input(make({2, 1}, {9, 10}));
  const TD cc = g.value(g.concat_cols(x, y));
  CHECK(cc.cols() == 5);
  CHECK(cc.at(0, 4) == 9);
  CHECK(cc.at(1, 0) == 5);

  const TD& tr = g.value(g.transpose(x));
  CHECK(tr.rows() == 4);
  CHECK(tr.at(3, 1) == 8);
}

TEST_CASE("matrix products and the transposed-weight variant agree") {
  Rng rng(5);
  TD A({4, 3}), B({3, 5});
  for (int64_t i = 0; i < A.numel(); ++i) A[i] = rng.uniform(-1, 1);
  for (int64_t i = 0; i < B.numel(); ++i) B[i] = rng.uniform(-1, 1);
  GD g;
  auto a = g.input(A), b = g.input(B);
  auto direct = g.matmul(a, b);
  auto viabt = g.matmul_bt(a, g.transpose(b));
  const TD& D = g.value(direct);
  const TD& V = g.value(viabt);
  for (int64_t i = 0; i < D.numel(); ++i)
    CHECK(D[i] == doctest::Approx(V[i]).epsilon(1e-12));
}

TEST_CASE("inverse satisfies the defining identity") {
  Rng rng(6);
  TD A({4, 4});
  for (int64_t i = 0; i < A.numel(); ++i) A[i] = rng.uniform(-0.2, 0.2);
  for (int64_t i = 0; i < 4; ++i) A.at(i, i) += 1.0;
  GD g;
  auto inv = g.inverse(g.input(A));
  const TD& Ai = g.value(inv);
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 4; ++c) {
      double acc = 0;
      for (int64_t k = 0; k < 4; ++k) acc += A.at(r, k) * Ai.at(k, c);
      CHECK(acc == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-10));
    }
}

TEST_CASE("integer powers broadcast a base row per exponent") {
  GD g;
  auto base = g.input(make({2}, {0.5, 2.0}));
  const TD y = g.value(g.pow_int_rows(base, {0, 1, 3}));
  CHECK(y.rows() == 3);
  CHECK(y.at(0, 0) == 1.0);
  CHECK(y.at(0, 1) == 1.0);
  CHECK(y.at(1, 0) == 0.5);
  CHECK(y.at(2, 0) == 0.125);
  CHECK(y.at(2, 1) == 8.0);

  auto x = g.input(make({1, 2}, {-1.5, 0.0}));
  const TD& p = g.value(g.pow_int(x, 3));
  CHECK(p.at(0, 0) == doctest::Approx(-3.375).epsilon(1e-12));
  CHECK(p.at(0, 1) == 0.0);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  ParamStore<double> st;
  auto& X = st.add("X", make({1, 2}, {0.7, -0.3}));
  st.zero_grads();
  GD g;
  auto x = g.param(X);
  // param() must return the same node on rebinding.
  CHECK(g.param(X).id == x.id);
  g.backward(g.sum_all(g.add(x, x)));
  CHECK(X.grad[0] == 2.0);
  CHECK(X.grad[1] == 2.0);
}

TEST_CASE("straight-through sampling follows the perturbed logits") {
  // With equal logits each column should be picked about equally often.
  const int64_t R = 4000, C = 4;
  GD g;
  auto logits = g.input(TD({R, C}));
  Rng noise(123);
  const TD& y = g.value(g.gumbel_hard_rows(logits, 1.0, noise));
  std::vector<double> freq(C, 0.0);
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) freq[static_cast<size_t>(c)] += y.at(r, c);
  for (int64_t c = 0; c < C; ++c)
    CHECK(freq[static_cast<size_t>(c)] / R == doctest::Approx(0.25).epsilon(0.15));

  // A dominant logit wins essentially always.
  GD g2;
  TD L({64, 3});
  for (int64_t r = 0; r < 64; ++r) L.at(r, 1) = 50.0;
  Rng noise2(7);
  const TD& h = g2.value(g2.gumbel_hard_rows(g2.input(L), 1.0, noise2));
  for (int64_t r = 0; r < 64; ++r) CHECK(h.at(r, 1) == 1.0);
}

TEST_CASE("reductions and scaling agree with definitions") {
  GD g;
  auto x = g.input(make({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(g.scalar_value(g.sum_all(x)) == 21.0);
  CHECK(g.scalar_value(g.mean_all(x)) == 3.5);
  const TD& s = g.value(g.scale(x, -2.0));
  CHECK(s.at(1, 2) == -12.0);
}
