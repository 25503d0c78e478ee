// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training-loop contracts: bit-level determinism across reruns, the
// zero-step evaluation path, metric streaming, loss improvement on a tiny
// task, and the frozen-model guarantee of every auxiliary objective.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "onionlab/trainer.hpp"

using namespace onionlab;

namespace {

TaskConfig tiny_task() {
  TaskConfig t;
  t.n_symbols = 6;
  t.l_max = 3;
  return t;
}

struct Corpora {
  Corpus train, test;
};

Corpora tiny_corpora(uint64_t seed) {
  TaskConfig t = tiny_task();
  Rng rng(seed);
  Corpora c;
  c.train = build_corpus(t, 400, rng);
  c.test = build_corpus(t, 120, rng, &c.train);
  return c;
}

}  // namespace

TEST_CASE("reruns with one seed are bit-identical") {
  const TaskConfig task = tiny_task();
  const Corpora c = tiny_corpora(7);
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.batch_size = 16;
  cfg.max_steps = 30;
  cfg.eval_every = 10;
  cfg.seed = 99;

  TrainOutcome a = train_model(cfg, task, c.train, c.test);
  TrainOutcome b = train_model(cfg, task, c.train, c.test);

  CHECK(weights_hash(a.params) == weights_hash(b.params));
  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].step == b.records[i].step);
    CHECK(a.records[i].train_loss == b.records[i].train_loss);
    CHECK(a.records[i].eval_accuracy == b.records[i].eval_accuracy);
  }
  CHECK(a.final_eval == b.final_eval);
  CHECK(a.first_step_99 == b.first_step_99);
  CHECK(!a.aborted);

  // A different seed must actually change the trajectory.
  cfg.seed = 100;
  TrainOutcome d = train_model(cfg, task, c.train, c.test);
  CHECK(weights_hash(a.params) != weights_hash(d.params));
}

TEST_CASE("zero steps evaluates the untouched initialization") {
  const TaskConfig task = tiny_task();
  const Corpora c = tiny_corpora(8);
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.max_steps = 0;
  cfg.seed = 5;

  TrainOutcome out = train_model(cfg, task, c.train, c.test);
  REQUIRE(out.records.size() == 1);
  CHECK(out.records[0].step == 0);
  CHECK(out.records[0].train_loss == 0.0);

  // The weights must equal a fresh draw from the init stream of the seed.
  GruParams fresh;
  fresh.build(task, cfg.hidden);
  Rng root(cfg.seed);
  Rng init = root.fork(kStreamInit);
  fresh.init_weights(init);
  CHECK(weights_hash(out.params) == weights_hash(fresh));
  CHECK(out.records[0].eval_accuracy ==
        exact_match(fresh, c.test, cfg.mode, cfg.eval_limit));
}

TEST_CASE("metric sink streams one record per evaluation") {
  const TaskConfig task = tiny_task();
  const Corpora c = tiny_corpora(9);
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.batch_size = 8;
  cfg.max_steps = 25;
  cfg.eval_every = 10;
  cfg.seed = 3;

  std::vector<Json> seen;
  TrainOutcome out =
      train_model(cfg, task, c.train, c.test, [&](const Json& j) {
        seen.push_back(j);
      });
  // Evals at 10, 20 and the trailing 25.
  REQUIRE(out.records.size() == 3);
  REQUIRE(seen.size() == 3);
  CHECK(seen[0]["step"] == 10);
  CHECK(seen[2]["step"] == 25);
  for (const Json& j : seen) {
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("eval_accuracy"));
    CHECK(j.contains("wall_time_s"));
  }
  CHECK(record_to_json(out.records[0])["train_loss"] ==
        out.records[0].train_loss);
}

TEST_CASE("short training lowers the loss on a tiny task") {
  const TaskConfig task = tiny_task();
  const Corpora c = tiny_corpora(10);
  TrainConfig cfg;
  cfg.hidden = 16;
  cfg.batch_size = 32;
  cfg.max_steps = 200;
  cfg.eval_every = 50;
  cfg.seed = 1;
  cfg.mode = DecodeMode::Autoregressive;
  cfg.feedback = Feedback::SelfFed;

  TrainOutcome out = train_model(cfg, task, c.train, c.test);
  REQUIRE(!out.records.empty());
  // First window averages near the uniform loss ln(8); the last window must
  // sit clearly below it.
  CHECK(out.records.front().train_loss < std::log(8.0) + 0.1);
  CHECK(out.records.back().train_loss < 0.75 * out.records.front().train_loss);
  CHECK(!out.aborted);
}

TEST_CASE("invalid configurations are rejected") {
  const TaskConfig task = tiny_task();
  const Corpora c = tiny_corpora(11);
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train_model(cfg, task, c.train, c.test), ContractError);
  cfg = TrainConfig{};
  Corpus empty;
  CHECK_THROWS_AS(train_model(cfg, task, empty, c.test), ContractError);
}

TEST_CASE("every auxiliary objective leaves the model untouched") {
  TaskConfig task;  // full-size symbol table, auxiliary heads need it
  GruParams frozen;
  frozen.build(task, 8);
  Rng rng(77);
  frozen.init_weights(rng);

  for (const std::string objective :
       {"das-unigram", "das-bigram", "onion", "probe-linear", "probe-mlp",
        "probe-gru-ar", "probe-gru-noinput", "probe-onion"}) {
    CAPTURE(objective);
    FreezeCheck fc = run_auxiliary_freeze_check(objective, frozen, 13);
    CHECK(fc.hash_before == fc.hash_after);
  }
  CHECK_THROWS_AS(run_auxiliary_freeze_check("bogus", frozen, 1),
                  ContractError);
}

TEST_CASE("non-finite weights surface as numeric errors in evaluation") {
  TaskConfig task = tiny_task();
  GruParams p;
  p.build(task, 4);
  Rng rng(2);
  p.init_weights(rng);
  p.bz->value[0] = std::numeric_limits<float>::quiet_NaN();
  Corpus c;
  c.seqs = {{1, 2}};
  CHECK_THROWS_AS(exact_match(p, c, DecodeMode::Autoregressive), NumericError);
}
