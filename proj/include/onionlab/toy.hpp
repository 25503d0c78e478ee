// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "onionlab/gru.hpp"
#include "onionlab/taskgen.hpp"
#include "onionlab/trainer.hpp"

namespace onionlab {

// Minimal magnitude-layered memory: a scalar scale state walks down powers of
// gamma during encoding, flips sign at the boundary, and walks down again
// while the model's own (teacher-forced in training) outputs are subtracted.
//   s_1 = 1;  s_{L+1} = -1;  s_t = gamma * s_{t-1} otherwise
//   h_{t+1} = h_t + s_t * E[x_t],   y_t = argmax(h_t W_o + b_o)
// Only E, W_o, b_o train; gamma stays fixed.
struct ToyParams {
  int n = 0;
  int n_symbols = 0;
  int l_max = 0;
  float gamma = 0.4f;
  ParamStore<float> store;
  Parameter<float>* emb = nullptr;  // [n_symbols x n]
  Parameter<float>* Wo = nullptr;   // [n x n_symbols]
  Parameter<float>* bo = nullptr;   // [n_symbols]

  void build(const TaskConfig& task, int hidden, float gamma_ = 0.4f);
  void init(Rng& rng);
};

// The 2L scale values: encode scales then the negated decode scales.
std::vector<float> toy_scale_trace(float gamma, int length);

// Greedy run: encode the sequence, then emit L tokens, subtracting each
// emitted token's embedding at the matching scale.
Seq toy_run(const ToyParams& p, const Seq& tokens);

double toy_exact_match(const ToyParams& p, const Corpus& c, int64_t limit = -1);

struct ToyTrainConfig {
  int hidden = 64;
  int steps = 10000;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 0.1;
  uint64_t seed = 0;
  int eval_every = 500;
  int64_t eval_limit = 2000;
  double stop_at = 1.0;  // stop once validation reaches this; <= 0 disables
};

struct ToyOutcome {
  ToyParams params;
  std::vector<RunRecord> records;
  double final_eval = 0;
  int steps_run = 0;
};

// Teacher-forced cross-entropy over the decode emissions; training sequences
// are sampled online, validation uses the supplied corpus.
ToyOutcome toy_train(const TaskConfig& task, const ToyTrainConfig& cfg,
                     const Corpus& validation, const MetricSink& sink);

void save_toy(const std::string& path, const ToyParams& p, Json extra);
ToyParams load_toy(const std::string& path);

}  // namespace onionlab
