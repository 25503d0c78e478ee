// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "onionlab/gru.hpp"
#include "onionlab/io.hpp"
#include "onionlab/optim.hpp"
#include "onionlab/taskgen.hpp"

namespace onionlab {

// Base-model training configuration. Defaults are the paper-scale schedule;
// the desk profile swaps in 10K steps and a 200K-sequence corpus.
struct TrainConfig {
  int batch_size = 256;
  int max_steps = 40000;
  double lr = 1e-3;
  double weight_decay = 0.1;
  uint64_t seed = 0;
  int eval_every = 1000;
  int64_t eval_limit = -1;  // -1: full test corpus
  int hidden = 64;
  DecodeMode mode = DecodeMode::Autoregressive;
  Feedback feedback = Feedback::SelfFed;
};

struct RunRecord {
  int step = 0;
  double train_loss = 0;
  double eval_accuracy = 0;
  double wall_time_s = 0;
};

// Called once per logged record; used by the CLI to stream metrics.jsonl.
using MetricSink = std::function<void(const Json&)>;

Json record_to_json(const RunRecord& r);

struct TrainOutcome {
  GruParams params;
  std::vector<RunRecord> records;
  double final_eval = 0;
  int first_step_99 = -1;  // first eval step reaching 0.99, -1 if never
  bool aborted = false;    // numeric failure; params hold the last good state
  std::string abort_reason;
};

// AdamW on the decode-phase cross-entropy; batches are drawn with replacement
// from the train corpus. Deterministic given cfg.seed. On numeric failure the
// most recent evaluation snapshot is restored instead of propagating.
TrainOutcome train_model(const TrainConfig& cfg, const TaskConfig& task,
                         const Corpus& train, const Corpus& test,
                         const MetricSink& sink = {});

// Shared by the auxiliary training loops: one AdamW configured like the base
// run but with the caller's learning rate and decay.
AdamWConfig make_adamw(double lr, double weight_decay);

// Dispatcher used by tests to assert the freeze contract uniformly. Runs the
// named auxiliary objective against a frozen model with small-budget settings
// and returns the weights hash before/after.
struct FreezeCheck {
  std::string hash_before;
  std::string hash_after;
};
FreezeCheck run_auxiliary_freeze_check(const std::string& objective,
                                       GruParams& frozen, uint64_t seed);

}  // namespace onionlab
