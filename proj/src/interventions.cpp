// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#include "onionlab/interventions.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "onionlab/kernels.hpp"
#include "onionlab/ortho.hpp"

namespace onionlab {

const char* to_string(DasGranularity g) {
  return g == DasGranularity::Unigram ? "unigram" : "bigram";
}
const char* to_string(OnionConstraint c) {
  return c == OnionConstraint::Free ? "free" : "fixed_gamma_beta_one";
}

// ------------------------------------------------------ subspace exchange ----

void DasParams::build(const TaskConfig& task, int hidden, DasGranularity gr) {
  granularity = gr;
  n = hidden;
  n_vars = gr == DasGranularity::Unigram ? task.l_max : task.l_max - 1;
  if (n_vars < 1) throw ContractError("DasParams: no variables for this task");
  skew = &store.add("das.skew", TensorF({n, n}));
  logits = &store.add("das.logits", TensorF({n, n_vars + 1}));
}

TensorF DasParams::rotation() const { return cayley_rotation(skew->value); }

std::vector<int> DasParams::hard_assignment() const {
  std::vector<int> out(static_cast<size_t>(n), 0);
  const TensorF& L = logits->value;
  for (int r = 0; r < n; ++r) {
    int best = 0;
    for (int c = 1; c <= n_vars; ++c)
      if (L.at(r, c) > L.at(r, best)) best = c;
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

std::vector<int> bigram_variables_for_position(int j, int len) {
  std::vector<int> vars;
  if (j - 1 >= 1) vars.push_back(j - 1);
  if (j <= len - 1) vars.push_back(j);
  return vars;
}

std::vector<int> das_variables_for(const CounterfactualExample& ex,
                                   DasGranularity g) {
  if (g == DasGranularity::Unigram) return ex.positions;
  std::vector<int> vars;
  for (int j : ex.positions)
    for (int v : bigram_variables_for_position(j, ex.length()))
      if (std::find(vars.begin(), vars.end(), v) == vars.end())
        vars.push_back(v);
  std::sort(vars.begin(), vars.end());
  return vars;
}

namespace {

void check_variables(const std::vector<int>& vars, int n_vars) {
  for (int v : vars)
    if (v < 1 || v > n_vars)
      throw ContractError("variable index out of range: " + std::to_string(v));
}

// Batched deterministic replacement. rows' variable sets index the hard
// assignment; rows with empty sets are copied through untouched.
TensorF replace_batch(const TensorF& R, const std::vector<int>& assignment,
                      const TensorF& Hb, const TensorF& Hs,
                      const std::vector<std::vector<int>>& vars) {
  const int B = static_cast<int>(Hb.rows()), n = static_cast<int>(Hb.cols());
  TensorF barb({B, n}), bars({B, n}), barn({B, n}), out({B, n});
  kern::gemm_acc_bt<float>(barb.data(), Hb.data(), R.data(), B, n, n);
  kern::gemm_acc_bt<float>(bars.data(), Hs.data(), R.data(), B, n, n);
  std::vector<uint8_t> in_set;
  for (int r = 0; r < B; ++r) {
    const std::vector<int>& vs = vars[static_cast<size_t>(r)];
    in_set.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      const int a = assignment[static_cast<size_t>(i)];
      if (a > 0 && std::find(vs.begin(), vs.end(), a) != vs.end())
        in_set[static_cast<size_t>(i)] = 1;
    }
    for (int i = 0; i < n; ++i)
      barn.at(r, i) = in_set[static_cast<size_t>(i)] ? bars.at(r, i)
                                                     : barb.at(r, i);
  }
  kern::gemm_acc<float>(out.data(), barn.data(), R.data(), B, n, n);
  for (int r = 0; r < B; ++r)
    if (vars[static_cast<size_t>(r)].empty())
      std::memcpy(out.data() + static_cast<int64_t>(r) * n,
                  Hb.data() + static_cast<int64_t>(r) * n,
                  sizeof(float) * static_cast<size_t>(n));
  return out;
}

double now_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

TensorF subspace_replace(const DasParams& das, const TensorF& h_base,
                         const TensorF& h_source,
                         const std::vector<int>& variables) {
  if (h_base.rank() != 1 || h_base.numel() != das.n ||
      !h_base.same_shape(h_source))
    throw ContractError("subspace_replace: expected two length-" +
                        std::to_string(das.n) + " vectors");
  check_variables(variables, das.n_vars);
  if (variables.empty()) return h_base;
  TensorF Hb({1, das.n}), Hs({1, das.n});
  std::memcpy(Hb.data(), h_base.data(), sizeof(float) * h_base.numel());
  std::memcpy(Hs.data(), h_source.data(), sizeof(float) * h_source.numel());
  TensorF out2 =
      replace_batch(das.rotation(), das.hard_assignment(), Hb, Hs, {variables});
  TensorF out({das.n});
  std::memcpy(out.data(), out2.data(), sizeof(float) * out.numel());
  return out;
}

std::vector<CounterfactualExample> make_counterfactual_set(
    const TaskConfig& task, DasGranularity g, int count, Rng& rng) {
  std::vector<CounterfactualExample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(g == DasGranularity::Unigram
                      ? make_unigram_counterfactual(task, rng)
                      : make_bigram_counterfactual(task, rng));
  return out;
}

double eval_das(const GruParams& frozen, const DasParams& das,
                const std::vector<CounterfactualExample>& set,
                DecodeMode mode) {
  if (set.empty()) throw ContractError("eval_das: empty dataset");
  if (das.n != frozen.n) throw ContractError("eval_das: width mismatch");
  const TensorF R = das.rotation();
  const std::vector<int> assignment = das.hard_assignment();
  constexpr size_t kChunk = 512;
  int64_t hits = 0;
  for (size_t base = 0; base < set.size(); base += kChunk) {
    const size_t nb = std::min(kChunk, set.size() - base);
    std::vector<const Seq*> bases, sources;
    std::vector<std::vector<int>> vars;
    std::vector<int> lens;
    for (size_t i = 0; i < nb; ++i) {
      const CounterfactualExample& ex = set[base + i];
      bases.push_back(&ex.base);
      sources.push_back(&ex.source);
      vars.push_back(das_variables_for(ex, das.granularity));
      check_variables(vars.back(), das.n_vars);
      lens.push_back(ex.length());
    }
    const TensorF Hb = encode_batch(frozen, bases).boundary;
    const TensorF Hs = encode_batch(frozen, sources).boundary;
    const TensorF Hn = replace_batch(R, assignment, Hb, Hs, vars);
    const std::vector<Seq> outs = decode_batch(frozen, Hn, lens, mode);
    for (size_t i = 0; i < nb; ++i)
      if (outs[i] == set[base + i].target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

DasOutcome train_das(GruParams& frozen, DasGranularity gr,
                     const DasTrainConfig& cfg,
                     const std::vector<CounterfactualExample>* eval_set,
                     const MetricSink& sink) {
  if (cfg.steps < 0 || cfg.batch_size < 1)
    throw ContractError("train_das: bad config");
  const auto t0 = std::chrono::steady_clock::now();
  frozen.set_trainable(false);

  Rng root(cfg.seed);
  Rng rng_data = root.fork(kStreamData);
  Rng rng_gumbel = root.fork(kStreamGumbel);

  DasOutcome out;
  out.das.build(frozen.task, frozen.n, gr);

  AdamWState<float> opt_state;
  const AdamWConfig opt_cfg = make_adamw(cfg.lr, cfg.weight_decay);

  double loss_acc = 0;
  int loss_cnt = 0;
  auto log_point = [&](int step) {
    RunRecord rec;
    rec.step = step;
    rec.train_loss = loss_cnt ? loss_acc / loss_cnt : 0.0;
    rec.eval_accuracy =
        eval_set ? eval_das(frozen, out.das, *eval_set, cfg.mode) : 0.0;
    rec.wall_time_s = now_s(t0);
    out.records.push_back(rec);
    out.final_accuracy = rec.eval_accuracy;
    if (sink) sink(record_to_json(rec));
    loss_acc = 0;
    loss_cnt = 0;
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<CounterfactualExample> batch =
        make_counterfactual_set(frozen.task, gr, cfg.batch_size, rng_data);
    std::vector<const Seq*> bases, sources, targets;
    for (const auto& ex : batch) {
      bases.push_back(&ex.base);
      sources.push_back(&ex.source);
      targets.push_back(&ex.target);
    }
    const TensorF HbT = encode_batch(frozen, bases).boundary;
    const TensorF HsT = encode_batch(frozen, sources).boundary;

    Graph<float> g;
    auto cell = GruCell<float>::bind(g, frozen);
    auto skew = g.param(*out.das.skew);
    auto logits = g.param(*out.das.logits);
    auto R = orthogonalize(g, skew);
    auto A = g.gumbel_hard_rows(logits, 1.0, rng_gumbel);
    auto Hb = g.input(HbT);
    auto Hs = g.input(HsT);
    auto barb = g.matmul_bt(Hb, R);
    auto bars = g.matmul_bt(Hs, R);
    TensorF SelT({cfg.batch_size, out.das.n_vars + 1});
    for (int r = 0; r < cfg.batch_size; ++r) {
      const auto vars = das_variables_for(batch[static_cast<size_t>(r)], gr);
      check_variables(vars, out.das.n_vars);
      for (int v : vars) SelT.at(r, v) = 1.0f;
    }
    auto Sel = g.input(std::move(SelT));
    auto M = g.matmul(Sel, g.transpose(A));
    auto barn = g.add(barb, g.mul(M, g.sub(bars, barb)));
    auto Hn = g.matmul(barn, R);
    auto loss = decode_loss_from_state(g, cell, frozen.task, Hn, targets,
                                       cfg.mode, Feedback::TeacherForced);
    out.das.store.zero_grads();
    g.backward(loss);
    adamw_step(out.das.store, opt_state, opt_cfg);
    loss_acc += static_cast<double>(g.value(loss)[0]);
    ++loss_cnt;
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) log_point(step);
  }
  if (out.records.empty() || out.records.back().step != cfg.steps)
    log_point(cfg.steps);
  return out;
}

void save_das(const std::string& path, const DasParams& das, Json extra) {
  NamedArrays arrays;
  arrays.add("skew", das.skew->value);
  arrays.add("logits", das.logits->value);
  Json meta = std::move(extra);
  meta["objective"] = std::string("das-") + to_string(das.granularity);
  meta["n"] = das.n;
  meta["n_vars"] = das.n_vars;
  save_container(path, kAuxMagic, std::move(meta), arrays);
}

DasParams load_das(const std::string& path) {
  auto [meta, arrays] = load_container(path, kAuxMagic);
  const std::string obj = meta.value("objective", "");
  if (obj != "das-unigram" && obj != "das-bigram")
    throw IoError("not a subspace-intervention bundle: " + path);
  TaskConfig task;  // infer l_max back from the stored variable count
  const int n_vars = meta.at("n_vars").get<int>();
  task.l_max = obj == "das-unigram" ? n_vars : n_vars + 1;
  DasParams das;
  das.build(task, meta.at("n").get<int>(),
            obj == "das-unigram" ? DasGranularity::Unigram
                                 : DasGranularity::Bigram);
  if (!arrays.get("skew").same_shape(das.skew->value) ||
      !arrays.get("logits").same_shape(das.logits->value))
    throw IoError("subspace bundle arrays do not match metadata: " + path);
  das.skew->value = arrays.get("skew");
  das.logits->value = arrays.get("logits");
  return das;
}

// ------------------------------------------------ scaled-embedding edits ----

void OnionParams::build(const TaskConfig& task, int hidden) {
  n = hidden;
  n_symbols = task.n_symbols;
  emb = &store.add("onion.emb", TensorF({n_symbols, n}));
  g = &store.add("onion.g", TensorF({n}));
  gamma = &store.add("onion.gamma", TensorF({n}));
  beta = &store.add("onion.beta", TensorF({n}));
  b = &store.add("onion.b", TensorF({n}));
}

void OnionParams::init(Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(n));
  for (int64_t i = 0; i < emb->value.numel(); ++i)
    emb->value[i] = static_cast<float>(rng.normal(0.0, s));
  g->value.fill(1.0f);
  gamma->value.fill(0.5f);
  beta->value.zero();
  b->value.zero();
}

void OnionParams::apply_constraint(OnionConstraint c) {
  if (c == OnionConstraint::Free) return;
  gamma->value.fill(1.0f);
  beta->value.fill(1.0f);
  gamma->trainable = false;
  beta->trainable = false;
}

TensorF onion_scale(const OnionParams& op, int j) {
  if (j < 1) throw ContractError("onion_scale: position must be >= 1");
  TensorF s({op.n});
  for (int i = 0; i < op.n; ++i) {
    float p = 1.0f;
    for (int k = 0; k < j; ++k) p *= op.gamma->value[i];
    s[i] = op.g->value[i] * p + op.beta->value[i] * static_cast<float>(j) +
           op.b->value[i];
  }
  return s;
}

TensorF onion_intervene(const OnionParams& op, const TensorF& h,
                        const OnionEditExample& edit) {
  if (h.rank() != 1 || h.numel() != op.n)
    throw ContractError("onion_intervene: expected a length-" +
                        std::to_string(op.n) + " state");
  if (edit.new_token < 0 || edit.new_token >= op.n_symbols)
    throw ContractError("onion_intervene: token out of range");
  const int old_token = edit.seq[static_cast<size_t>(edit.pos - 1)];
  if (edit.new_token == old_token) return h;
  const TensorF s = onion_scale(op, edit.pos);
  TensorF out = h;
  const float* en = op.emb->value.data() +
                    static_cast<int64_t>(edit.new_token) * op.n;
  const float* eo =
      op.emb->value.data() + static_cast<int64_t>(old_token) * op.n;
  for (int i = 0; i < op.n; ++i) out[i] += s[i] * (en[i] - eo[i]);
  return out;
}

std::vector<OnionEditExample> make_edit_set(const TaskConfig& task,
                                            const Corpus& from, int count,
                                            Rng& rng) {
  if (from.size() == 0) throw ContractError("make_edit_set: empty corpus");
  std::vector<OnionEditExample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(make_onion_edit(
        task, from.seqs[static_cast<size_t>(i) % from.seqs.size()], rng));
  return out;
}

double eval_onion(const GruParams& frozen, const OnionParams& op,
                  const std::vector<OnionEditExample>& set, DecodeMode mode) {
  if (set.empty()) throw ContractError("eval_onion: empty dataset");
  if (op.n != frozen.n) throw ContractError("eval_onion: width mismatch");
  constexpr size_t kChunk = 512;
  int64_t hits = 0;
  for (size_t base = 0; base < set.size(); base += kChunk) {
    const size_t nb = std::min(kChunk, set.size() - base);
    std::vector<const Seq*> seqs;
    std::vector<int> lens;
    for (size_t i = 0; i < nb; ++i) {
      seqs.push_back(&set[base + i].seq);
      lens.push_back(static_cast<int>(set[base + i].seq.size()));
    }
    TensorF H = encode_batch(frozen, seqs).boundary;
    for (size_t i = 0; i < nb; ++i) {
      const OnionEditExample& ed = set[base + i];
      const TensorF s = onion_scale(op, ed.pos);
      const int old_token = ed.seq[static_cast<size_t>(ed.pos - 1)];
      const float* en =
          op.emb->value.data() + static_cast<int64_t>(ed.new_token) * op.n;
      const float* eo =
          op.emb->value.data() + static_cast<int64_t>(old_token) * op.n;
      float* row = H.data() + static_cast<int64_t>(i) * op.n;
      for (int c = 0; c < op.n; ++c) row[c] += s[c] * (en[c] - eo[c]);
    }
    const std::vector<Seq> outs = decode_batch(frozen, H, lens, mode);
    for (size_t i = 0; i < nb; ++i)
      if (outs[i] == set[base + i].edited) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

OnionOutcome train_onion(GruParams& frozen, const OnionTrainConfig& cfg,
                         OnionConstraint constraint,
                         const std::vector<OnionEditExample>* eval_set,
                         const MetricSink& sink) {
  if (cfg.steps < 0 || cfg.batch_size < 1)
    throw ContractError("train_onion: bad config");
  const auto t0 = std::chrono::steady_clock::now();
  frozen.set_trainable(false);

  Rng root(cfg.seed);
  Rng rng_init = root.fork(kStreamInit);
  Rng rng_data = root.fork(kStreamData);

  OnionOutcome out;
  out.op.build(frozen.task, frozen.n);
  out.op.init(rng_init);
  out.op.apply_constraint(constraint);

  AdamWState<float> opt_state;
  const AdamWConfig opt_cfg = make_adamw(cfg.lr, cfg.weight_decay);

  double loss_acc = 0;
  int loss_cnt = 0;
  auto log_point = [&](int step) {
    RunRecord rec;
    rec.step = step;
    rec.train_loss = loss_cnt ? loss_acc / loss_cnt : 0.0;
    rec.eval_accuracy =
        eval_set ? eval_onion(frozen, out.op, *eval_set, cfg.mode) : 0.0;
    rec.wall_time_s = now_s(t0);
    out.records.push_back(rec);
    out.final_accuracy = rec.eval_accuracy;
    if (sink) sink(record_to_json(rec));
    loss_acc = 0;
    loss_cnt = 0;
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<OnionEditExample> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) {
      RepeatExample ex = sample_repeat_example(frozen.task, rng_data);
      batch.push_back(make_onion_edit(frozen.task, ex.tokens, rng_data));
    }
    std::vector<const Seq*> seqs, targets;
    std::vector<int> old_ids, new_ids, exps;
    for (const auto& ed : batch) {
      seqs.push_back(&ed.seq);
      targets.push_back(&ed.edited);
      old_ids.push_back(ed.seq[static_cast<size_t>(ed.pos - 1)]);
      new_ids.push_back(ed.new_token);
      exps.push_back(ed.pos);
    }
    const TensorF HT = encode_batch(frozen, seqs).boundary;

    Graph<float> g;
    auto cell = GruCell<float>::bind(g, frozen);
    auto emb = g.param(*out.op.emb);
    auto gv = g.param(*out.op.g);
    auto gammav = g.param(*out.op.gamma);
    auto betav = g.param(*out.op.beta);
    auto bv = g.param(*out.op.b);
    auto H = g.input(HT);
    auto G = g.pow_int_rows(gammav, exps);
    TensorF Jm({cfg.batch_size, frozen.n});
    for (int r = 0; r < cfg.batch_size; ++r)
      for (int c = 0; c < frozen.n; ++c)
        Jm.at(r, c) = static_cast<float>(exps[static_cast<size_t>(r)]);
    auto J = g.input(std::move(Jm));
    auto s = g.add_rowvec(
        g.add(g.mul_rowvec(G, gv), g.mul_rowvec(J, betav)), bv);
    auto delta = g.sub(g.gather_rows(emb, new_ids), g.gather_rows(emb, old_ids));
    auto Hn = g.add(H, g.mul(s, delta));
    auto loss = decode_loss_from_state(g, cell, frozen.task, Hn, targets,
                                       cfg.mode, Feedback::TeacherForced);
    out.op.store.zero_grads();
    g.backward(loss);
    adamw_step(out.op.store, opt_state, opt_cfg);
    loss_acc += static_cast<double>(g.value(loss)[0]);
    ++loss_cnt;
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) log_point(step);
  }
  if (out.records.empty() || out.records.back().step != cfg.steps)
    log_point(cfg.steps);
  for (int64_t i = 0; i < out.op.gamma->value.numel(); ++i)
    if (out.op.gamma->value[i] < 0.0f) out.gamma_went_negative = true;
  return out;
}

void save_onion(const std::string& path, const OnionParams& op, Json extra) {
  NamedArrays arrays;
  arrays.add("emb", op.emb->value);
  arrays.add("g", op.g->value);
  arrays.add("gamma", op.gamma->value);
  arrays.add("beta", op.beta->value);
  arrays.add("b", op.b->value);
  Json meta = std::move(extra);
  meta["objective"] = "onion";
  meta["n"] = op.n;
  meta["n_symbols"] = op.n_symbols;
  save_container(path, kAuxMagic, std::move(meta), arrays);
}

OnionParams load_onion(const std::string& path) {
  auto [meta, arrays] = load_container(path, kAuxMagic);
  if (meta.value("objective", "") != "onion")
    throw IoError("not a scaled-embedding bundle: " + path);
  TaskConfig task;
  task.n_symbols = meta.at("n_symbols").get<int>();
  OnionParams op;
  op.build(task, meta.at("n").get<int>());
  for (const char* name : {"emb", "g", "gamma", "beta", "b"}) {
    Parameter<float>& p = op.store.get(std::string("onion.") + name);
    if (!arrays.get(name).same_shape(p.value))
      throw IoError(std::string("scaled-embedding bundle array ") + name +
                    " does not match metadata: " + path);
    p.value = arrays.get(name);
  }
  return op;
}

}  // namespace onionlab
