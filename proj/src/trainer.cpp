// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#include "onionlab/trainer.hpp"

#include <chrono>

#include "onionlab/interventions.hpp"
#include "onionlab/probes.hpp"

namespace onionlab {

namespace {
double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}
}  // namespace

Json record_to_json(const RunRecord& r) {
  return Json{{"step", r.step},
              {"train_loss", r.train_loss},
              {"eval_accuracy", r.eval_accuracy},
              {"wall_time_s", r.wall_time_s}};
}

AdamWConfig make_adamw(double lr, double weight_decay) {
  AdamWConfig cfg;
  cfg.lr = lr;
  cfg.weight_decay = weight_decay;
  return cfg;
}

TrainOutcome train_model(const TrainConfig& cfg, const TaskConfig& task,
                         const Corpus& train, const Corpus& test,
                         const MetricSink& sink) {
  if (cfg.batch_size < 1 || cfg.max_steps < 0 || cfg.hidden < 1)
    throw ContractError("train_model: bad config");
  if (train.size() == 0) throw ContractError("train_model: empty train corpus");
  const auto t0 = std::chrono::steady_clock::now();

  Rng root(cfg.seed);
  Rng rng_init = root.fork(kStreamInit);
  Rng rng_batch = root.fork(kStreamBatch);

  TrainOutcome out;
  out.params.build(task, cfg.hidden);
  out.params.init_weights(rng_init);

  AdamWState<float> opt_state;
  const AdamWConfig opt_cfg = make_adamw(cfg.lr, cfg.weight_decay);

  // Snapshot for the abort path: weights as of the last finished eval point.
  std::vector<TensorF> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (Parameter<float>* p : out.params.arrays()) snapshot.push_back(p->value);
  };
  auto restore_snapshot = [&] {
    auto ps = out.params.arrays();
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = snapshot[i];
  };
  take_snapshot();

  auto evaluate = [&](int step, double loss_avg) {
    RunRecord rec;
    rec.step = step;
    rec.train_loss = loss_avg;
    rec.eval_accuracy = exact_match(out.params, test, cfg.mode, cfg.eval_limit);
    rec.wall_time_s = seconds_since(t0);
    out.records.push_back(rec);
    out.final_eval = rec.eval_accuracy;
    if (out.first_step_99 < 0 && rec.eval_accuracy >= 0.99)
      out.first_step_99 = step;
    if (sink) sink(record_to_json(rec));
    take_snapshot();
  };

  double loss_acc = 0;
  int loss_cnt = 0;
  std::vector<const Seq*> batch(static_cast<size_t>(cfg.batch_size));
  try {
    for (int step = 1; step <= cfg.max_steps; ++step) {
      for (int b = 0; b < cfg.batch_size; ++b)
        batch[static_cast<size_t>(b)] =
            &train.seqs[static_cast<size_t>(rng_batch.bounded(
                static_cast<uint64_t>(train.size())))];
      Graph<float> g;
      auto cell = GruCell<float>::bind(g, out.params);
      auto loss =
          batch_program_loss(g, cell, task, batch, cfg.mode, cfg.feedback);
      out.params.store.zero_grads();
      g.backward(loss);
      adamw_step(out.params.store, opt_state, opt_cfg);
      loss_acc += static_cast<double>(g.value(loss)[0]);
      ++loss_cnt;
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
        evaluate(step, loss_acc / loss_cnt);
        loss_acc = 0;
        loss_cnt = 0;
      }
    }
    if (out.records.empty() || out.records.back().step != cfg.max_steps) {
      // Final point when the schedule did not land on an eval boundary
      // (includes max_steps == 0: evaluate the untouched init).
      evaluate(cfg.max_steps, loss_cnt ? loss_acc / loss_cnt : 0.0);
    }
  } catch (const NumericError& e) {
    restore_snapshot();
    out.aborted = true;
    out.abort_reason = e.what();
  }
  return out;
}

FreezeCheck run_auxiliary_freeze_check(const std::string& objective,
                                       GruParams& frozen, uint64_t seed) {
  FreezeCheck fc;
  fc.hash_before = weights_hash(frozen);
  if (objective == "das-unigram" || objective == "das-bigram") {
    DasTrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 8;
    cfg.eval_every = 0;
    cfg.seed = seed;
    train_das(frozen,
              objective == "das-unigram" ? DasGranularity::Unigram
                                         : DasGranularity::Bigram,
              cfg, nullptr, {});
  } else if (objective == "onion") {
    OnionTrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 8;
    cfg.eval_every = 0;
    cfg.seed = seed;
    train_onion(frozen, cfg, OnionConstraint::Free, nullptr, {});
  } else if (objective == "probe-linear" || objective == "probe-mlp" ||
             objective == "probe-gru-ar" || objective == "probe-gru-noinput" ||
             objective == "probe-onion") {
    ProbeTrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 8;
    cfg.eval_every = 0;
    cfg.seed = seed;
    train_probe(probe_kind_from_string(objective.substr(6)), frozen, cfg,
                nullptr, {});
  } else {
    throw ContractError("unknown auxiliary objective: " + objective);
  }
  fc.hash_after = weights_hash(frozen);
  return fc;
}

}  // namespace onionlab
