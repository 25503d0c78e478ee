// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>

#include "onionlab/graph.hpp"

namespace onionlab {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Per-parameter first/second moment slots plus the shared step counter.
template <typename T>
struct AdamWState {
  int64_t step = 0;
  std::map<const Parameter<T>*, std::pair<Tensor<T>, Tensor<T>>> slots;

  std::pair<Tensor<T>, Tensor<T>>& slot_for(const Parameter<T>& p) {
    auto it = slots.find(&p);
    if (it == slots.end()) {
      it = slots.emplace(&p, std::make_pair(Tensor<T>(p.value.shape()),
                                            Tensor<T>(p.value.shape())))
               .first;
    }
    return it->second;
  }
};

// One decoupled-weight-decay Adam update for a single parameter:
//   m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
//   p <- p - lr * ( mhat / (sqrt(vhat) + eps) + wd * p )
// with bias-corrected mhat/vhat. state.step must already be advanced by the
// caller for this update round (all parameters share one counter).
template <typename T>
void adamw_update_param(Parameter<T>& p, AdamWState<T>& state,
                        const AdamWConfig& cfg) {
  if (!p.grad.same_shape(p.value))
    throw ContractError("adamw: gradient shape mismatch for " + p.name);
  auto& [m, v] = state.slot_for(p);
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (int64_t i = 0; i < p.value.numel(); ++i) {
    const double g = static_cast<double>(p.grad[i]);
    const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
    const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    const double upd = mhat / (std::sqrt(vhat) + cfg.eps) +
                       cfg.weight_decay * static_cast<double>(p.value[i]);
    p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - cfg.lr * upd);
  }
}

// Updates every trainable parameter in the store from its accumulated
// gradient, then leaves gradients untouched (call zero_grads separately).
template <typename T>
void adamw_step(ParamStore<T>& params, AdamWState<T>& state,
                const AdamWConfig& cfg) {
  ++state.step;
  for (auto& p : params)
    if (p.trainable) adamw_update_param(p, state, cfg);
}

}  // namespace onionlab
