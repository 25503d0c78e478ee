// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW against a hand-rolled reference: bias correction, decoupled weight
// decay, frozen parameters, and convergence on a tiny quadratic.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "onionlab/optim.hpp"
#include "onionlab/rng.hpp"

using namespace onionlab;

namespace {
using TD = Tensor<double>;

TD make1(std::vector<double> v) {
  TD t({static_cast<int64_t>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i];
  return t;
}
}  // namespace

TEST_CASE("single update matches the closed form") {
  ParamStore<double> st;
  auto& p = st.add("w", make1({1.0, -2.0, 0.5}));
  p.grad = make1({0.3, -0.1, 0.0});

  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamWState<double> state;
  adamw_step(st, state, cfg);

  // After the first step mhat = g and vhat = g^2 exactly, so the update is
  // lr * g / (|g| + eps): a signed step of almost exactly lr.
  for (int64_t i = 0; i < 3; ++i) {
    const double g = (i == 0 ? 0.3 : i == 1 ? -0.1 : 0.0);
    const double want =
        (i == 0 ? 1.0 : i == 1 ? -2.0 : 0.5) -
        cfg.lr * (g == 0.0 ? 0.0 : g / (std::abs(g) + cfg.eps));
    CHECK(p.value[i] == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("several updates match an independent reference implementation") {
  ParamStore<double> st;
  auto& p = st.add("w", make1({0.7, -1.3}));

  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.beta1 = 0.8;
  cfg.beta2 = 0.95;
  cfg.eps = 1e-8;
  cfg.weight_decay = 0.2;
  AdamWState<double> state;

  // Reference trajectory maintained by hand.
  std::vector<double> w = {0.7, -1.3}, m = {0, 0}, v = {0, 0};
  Rng rng(77);
  for (int step = 1; step <= 25; ++step) {
    std::vector<double> g = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (int i = 0; i < 2; ++i) p.grad[i] = g[static_cast<size_t>(i)];

    adamw_step(st, state, cfg);

    for (int i = 0; i < 2; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(cfg.beta1, step));
      const double vhat = v[i] / (1 - std::pow(cfg.beta2, step));
      w[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                        cfg.weight_decay * w[i]);
      CHECK(p.value[i] == doctest::Approx(w[static_cast<size_t>(i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("weight decay is decoupled from the gradient") {
  // With zero gradient the adaptive term vanishes; only the decay shrinks
  // the parameter, by exactly (1 - lr*wd) per step.
  ParamStore<double> st;
  auto& p = st.add("w", make1({2.0}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamWState<double> state;
  double want = 2.0;
  for (int step = 0; step < 4; ++step) {
    p.grad[0] = 0.0;
    adamw_step(st, state, cfg);
    want *= 1.0 - cfg.lr * cfg.weight_decay;
    CHECK(p.value[0] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("frozen parameters are never touched") {
  ParamStore<double> st;
  auto& frozen = st.add("frozen", make1({0.4, 0.6}), /*trainable=*/false);
  auto& live = st.add("live", make1({0.4, 0.6}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.3;
  AdamWState<double> state;
  for (int step = 0; step < 5; ++step) {
    frozen.grad[0] = live.grad[0] = 1.0;
    frozen.grad[1] = live.grad[1] = -1.0;
    adamw_step(st, state, cfg);
  }
  CHECK(frozen.value[0] == 0.4);
  CHECK(frozen.value[1] == 0.6);
  CHECK(live.value[0] != 0.4);
  CHECK(live.value[1] != 0.6);
}

TEST_CASE("minimizes a simple quadratic") {
  ParamStore<double> st;
  auto& p = st.add("w", make1({5.0, -4.0}));
  const double target0 = 1.5, target1 = -0.5;
  AdamWConfig cfg;
  cfg.lr = 0.05;
  AdamWState<double> state;
  for (int step = 0; step < 2000; ++step) {
    p.grad[0] = 2 * (p.value[0] - target0);
    p.grad[1] = 2 * (p.value[1] - target1);
    adamw_step(st, state, cfg);
  }
  CHECK(p.value[0] == doctest::Approx(target0).epsilon(1e-3));
  CHECK(p.value[1] == doctest::Approx(target1).epsilon(1e-3));
}

TEST_CASE("state slots are keyed per parameter") {
  ParamStore<double> st;
  auto& a = st.add("a", make1({1.0}));
  auto& b = st.add("b", make1({1.0}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  AdamWState<double> state;
  // Different gradient histories must produce different moment estimates.
  a.grad[0] = 1.0;
  b.grad[0] = -1.0;
  adamw_step(st, state, cfg);
  a.grad[0] = 1.0;
  b.grad[0] = -1.0;
  adamw_step(st, state, cfg);
  CHECK(a.value[0] == doctest::Approx(1.0 - 2 * 0.1).epsilon(1e-6));
  CHECK(b.value[0] == doctest::Approx(1.0 + 2 * 0.1).epsilon(1e-6));
  CHECK(state.slots.size() == 2);
}
