// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Algebraic properties of the two intervention families: identity edits are
// exact no-ops, full replacements copy the source, rotations round-trip, and
// the variable bookkeeping matches the pair-variable convention. Training
// smoke runs assert determinism and the frozen-model contract.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "onionlab/interventions.hpp"
#include "onionlab/rng.hpp"

using namespace onionlab;
namespace fs = std::filesystem;

namespace {

TensorF random_vec(Rng& rng, int n, double scale = 1.0) {
  TensorF v({n});
  for (int i = 0; i < n; ++i)
    v[i] = static_cast<float>(rng.uniform(-scale, scale));
  return v;
}

DasParams random_das(Rng& rng, int hidden, int l_max, DasGranularity g) {
  TaskConfig task;
  task.l_max = l_max;
  DasParams das;
  das.build(task, hidden, g);
  for (int64_t i = 0; i < das.skew->value.numel(); ++i)
    das.skew->value[i] = static_cast<float>(rng.uniform(-1, 1));
  for (int64_t i = 0; i < das.logits->value.numel(); ++i)
    das.logits->value[i] = static_cast<float>(rng.uniform(-1, 1));
  return das;
}

float max_abs_diff(const TensorF& a, const TensorF& b) {
  float worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("empty variable sets return the base state bitwise") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    DasParams das = random_das(rng, 16, 9, DasGranularity::Unigram);
    const TensorF hb = random_vec(rng, 16), hs = random_vec(rng, 16);
    const TensorF out = subspace_replace(das, hb, hs, {});
    for (int i = 0; i < 16; ++i) REQUIRE(out[i] == hb[i]);
  }
}

TEST_CASE("full replacement copies the source state") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed * 31 + 7);
    DasParams das = random_das(rng, 16, 9, DasGranularity::Unigram);
    // Assign every neuron to some live variable so the full set covers all
    // rotated coordinates.
    for (int i = 0; i < 16; ++i) {
      for (int c = 0; c <= das.n_vars; ++c) das.logits->value.at(i, c) = 0.0f;
      das.logits->value.at(i, 1 + (i % das.n_vars)) = 5.0f;
    }
    const TensorF hb = random_vec(rng, 16), hs = random_vec(rng, 16);
    std::vector<int> all_vars;
    for (int v = 1; v <= das.n_vars; ++v) all_vars.push_back(v);
    const TensorF out = subspace_replace(das, hb, hs, all_vars);
    REQUIRE(max_abs_diff(out, hs) < 1e-5f);
  }
}

TEST_CASE("replacing from an identical source is a rotation roundtrip") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed * 17 + 3);
    DasParams das = random_das(rng, 16, 9, DasGranularity::Unigram);
    const TensorF h = random_vec(rng, 16);
    const TensorF out = subspace_replace(das, h, h, {1, 4, 9});
    REQUIRE(max_abs_diff(out, h) < 1e-5f);
  }
}

TEST_CASE("zero skew replaces assigned neurons directly") {
  TaskConfig task;
  task.l_max = 4;
  DasParams das;
  das.build(task, 6, DasGranularity::Unigram);  // skew = 0, rotation = I
  // Neurons 0,1 -> var 1; neurons 2,3 -> var 2; neurons 4,5 unassigned.
  for (int i = 0; i < 4; ++i) das.logits->value.at(i, 1 + i / 2) = 9.0f;
  Rng rng(5);
  const TensorF hb = random_vec(rng, 6), hs = random_vec(rng, 6);

  const TensorF r1 = subspace_replace(das, hb, hs, {1});
  for (int i = 0; i < 6; ++i)
    CHECK(r1[i] == doctest::Approx(i < 2 ? hs[i] : hb[i]).epsilon(1e-6));

  const TensorF r12 = subspace_replace(das, hb, hs, {1, 2});
  for (int i = 0; i < 6; ++i)
    CHECK(r12[i] == doctest::Approx(i < 4 ? hs[i] : hb[i]).epsilon(1e-6));

  // Variable 3 owns no neurons: nothing changes beyond roundtrip error.
  const TensorF r3 = subspace_replace(das, hb, hs, {3});
  for (int i = 0; i < 6; ++i) CHECK(r3[i] == doctest::Approx(hb[i]).epsilon(1e-6));
}

TEST_CASE("variable index bounds are enforced") {
  Rng rng(6);
  DasParams das = random_das(rng, 8, 4, DasGranularity::Unigram);
  const TensorF hb = random_vec(rng, 8), hs = random_vec(rng, 8);
  CHECK_THROWS_AS(subspace_replace(das, hb, hs, {0}), ContractError);
  CHECK_THROWS_AS(subspace_replace(das, hb, hs, {5}), ContractError);
  const TensorF short_h = random_vec(rng, 7);
  CHECK_THROWS_AS(subspace_replace(das, short_h, short_h, {1}), ContractError);
}

TEST_CASE("pair variables cover an edit position") {
  CHECK(bigram_variables_for_position(2, 4) == std::vector<int>{1, 2});
  CHECK(bigram_variables_for_position(1, 4) == std::vector<int>{1});
  CHECK(bigram_variables_for_position(4, 4) == std::vector<int>{3});
  CHECK(bigram_variables_for_position(1, 1).empty());

  CounterfactualExample ex;
  ex.target = {1, 2, 3, 4};
  ex.base = ex.source = ex.target;
  ex.positions = {2};
  CHECK(das_variables_for(ex, DasGranularity::Unigram) == std::vector<int>{2});
  CHECK(das_variables_for(ex, DasGranularity::Bigram) == std::vector<int>{1, 2});
  ex.positions = {1, 2};
  // Overlapping pair sets must merge without duplicates.
  CHECK(das_variables_for(ex, DasGranularity::Bigram) == std::vector<int>{1, 2});
}

TEST_CASE("granularities size the variable table") {
  TaskConfig task;
  task.l_max = 9;
  DasParams uni, bi;
  uni.build(task, 8, DasGranularity::Unigram);
  bi.build(task, 8, DasGranularity::Bigram);
  CHECK(uni.n_vars == 9);
  CHECK(bi.n_vars == 8);
  CHECK(uni.logits->value.cols() == 10);
  CHECK(bi.logits->value.cols() == 9);
  TaskConfig degenerate;
  degenerate.l_max = 1;
  DasParams bad;
  CHECK_THROWS_AS(bad.build(degenerate, 8, DasGranularity::Bigram),
                  ContractError);
  CHECK(std::string(to_string(DasGranularity::Unigram)) == "unigram");
  CHECK(std::string(to_string(DasGranularity::Bigram)) == "bigram");
}

TEST_CASE("identity edits leave the state bitwise unchanged") {
  TaskConfig task;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 1000);
    OnionParams op;
    op.build(task, 12);
    op.init(rng);
    const TensorF h = random_vec(rng, 12);
    OnionEditExample edit;
    edit.seq = {3, 8, 2};
    edit.edited = edit.seq;
    edit.pos = 2;
    edit.new_token = 8;  // same token: E'[new] - E'[old] = 0 exactly
    const TensorF out = onion_intervene(op, h, edit);
    for (int i = 0; i < 12; ++i) REQUIRE(out[i] == h[i]);
  }
}

TEST_CASE("scale schedule follows the geometric law") {
  TaskConfig task;
  OnionParams op;
  op.build(task, 4);
  Rng rng(9);
  op.init(rng);
  // Defaults: g = 1, gamma = 0.5, beta = b = 0 -> s(j) = 0.5^j.
  for (int j : {1, 2, 3}) {
    const TensorF s = onion_scale(op, j);
    for (int i = 0; i < 4; ++i)
      CHECK(s[i] == doctest::Approx(std::pow(0.5, j)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(onion_scale(op, 0), ContractError);

  // The control constraint pins gamma and beta at one and freezes them.
  op.apply_constraint(OnionConstraint::FixedGammaBetaOne);
  CHECK(!op.gamma->trainable);
  CHECK(!op.beta->trainable);
  CHECK(op.g->trainable);
  const TensorF s2 = onion_scale(op, 3);
  for (int i = 0; i < 4; ++i)
    CHECK(s2[i] == doctest::Approx(1.0 + 3.0).epsilon(1e-6));
  CHECK(std::string(to_string(OnionConstraint::Free)) == "free");
  CHECK(std::string(to_string(OnionConstraint::FixedGammaBetaOne)) ==
        "fixed_gamma_beta_one");
}

TEST_CASE("edit interventions add the scaled embedding difference") {
  TaskConfig task;
  OnionParams op;
  op.build(task, 3);
  Rng rng(10);
  op.init(rng);
  const TensorF h = random_vec(rng, 3);
  OnionEditExample edit;
  edit.seq = {4, 7};
  edit.edited = {4, 11};
  edit.pos = 2;
  edit.new_token = 11;
  const TensorF out = onion_intervene(op, h, edit);
  const TensorF s = onion_scale(op, 2);
  for (int i = 0; i < 3; ++i) {
    const float want = h[i] + s[i] * (op.emb->value.at(11, i) -
                                      op.emb->value.at(7, i));
    CHECK(out[i] == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("edit sets cycle the corpus and stay valid") {
  TaskConfig task;
  Corpus c;
  c.seqs = {{1, 2, 3}, {4}};
  Rng rng(11);
  auto set = make_edit_set(task, c, 5, rng);
  REQUIRE(set.size() == 5);
  for (size_t i = 0; i < set.size(); ++i) {
    const auto& e = set[i];
    CHECK(e.seq == c.seqs[i % 2]);
    CHECK(e.pos >= 1);
    CHECK(e.pos <= static_cast<int>(e.seq.size()));
    CHECK(e.new_token != e.seq[static_cast<size_t>(e.pos - 1)]);
  }
}

TEST_CASE("saved intervention parameters roundtrip") {
  Rng rng(12);
  DasParams das = random_das(rng, 8, 9, DasGranularity::Bigram);
  const fs::path dpath = fs::temp_directory_path() / "onionlab-das-rt.bin";
  save_das(dpath.string(), das, Json{{"note", 1}});
  DasParams das2 = load_das(dpath.string());
  fs::remove(dpath);
  CHECK(das2.granularity == DasGranularity::Bigram);
  CHECK(das2.n == das.n);
  CHECK(das2.n_vars == das.n_vars);
  CHECK(max_abs_diff(das2.skew->value, das.skew->value) == 0.0f);
  CHECK(max_abs_diff(das2.logits->value, das.logits->value) == 0.0f);

  TaskConfig task;
  OnionParams op;
  op.build(task, 5);
  op.init(rng);
  const fs::path opath = fs::temp_directory_path() / "onionlab-onion-rt.bin";
  save_onion(opath.string(), op, Json{});
  OnionParams op2 = load_onion(opath.string());
  fs::remove(opath);
  CHECK(op2.n == 5);
  CHECK(op2.n_symbols == op.n_symbols);
  CHECK(max_abs_diff(op2.emb->value, op.emb->value) == 0.0f);
  CHECK(max_abs_diff(op2.gamma->value, op.gamma->value) == 0.0f);
}

TEST_CASE("training smoke runs are deterministic and frozen") {
  TaskConfig task;
  GruParams frozen;
  frozen.build(task, 8);
  Rng rng(13);
  frozen.init_weights(rng);
  const std::string before = weights_hash(frozen);

  DasTrainConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 8;
  cfg.eval_every = 2;
  cfg.seed = 21;
  Rng eval_rng(22);
  auto eval_set = make_counterfactual_set(task, DasGranularity::Unigram, 32,
                                          eval_rng);
  DasOutcome a = train_das(frozen, DasGranularity::Unigram, cfg, &eval_set, {});
  DasOutcome b = train_das(frozen, DasGranularity::Unigram, cfg, &eval_set, {});
  CHECK(weights_hash(frozen) == before);
  CHECK(max_abs_diff(a.das.skew->value, b.das.skew->value) == 0.0f);
  CHECK(max_abs_diff(a.das.logits->value, b.das.logits->value) == 0.0f);
  CHECK(a.final_accuracy == b.final_accuracy);
  CHECK(a.final_accuracy >= 0.0);
  CHECK(a.final_accuracy <= 1.0);
  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i)
    CHECK(a.records[i].train_loss == b.records[i].train_loss);

  OnionTrainConfig ocfg;
  ocfg.steps = 4;
  ocfg.batch_size = 8;
  ocfg.eval_every = 2;
  ocfg.seed = 23;
  Corpus small;
  small.seqs = {{1, 2, 3, 4}, {5, 6}, {7}};
  Rng edit_rng(24);
  auto edits = make_edit_set(task, small, 16, edit_rng);
  OnionOutcome oa = train_onion(frozen, ocfg, OnionConstraint::Free, &edits, {});
  OnionOutcome ob = train_onion(frozen, ocfg, OnionConstraint::Free, &edits, {});
  CHECK(weights_hash(frozen) == before);
  CHECK(max_abs_diff(oa.op.emb->value, ob.op.emb->value) == 0.0f);
  CHECK(max_abs_diff(oa.op.gamma->value, ob.op.gamma->value) == 0.0f);
  CHECK(oa.final_accuracy == ob.final_accuracy);

  // The control constraint must hold after training.
  OnionOutcome oc =
      train_onion(frozen, ocfg, OnionConstraint::FixedGammaBetaOne, &edits, {});
  for (int i = 0; i < 8; ++i) {
    CHECK(oc.op.gamma->value[i] == 1.0f);
    CHECK(oc.op.beta->value[i] == 1.0f);
  }
}
