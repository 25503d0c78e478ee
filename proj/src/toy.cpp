// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0

#include "onionlab/toy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <utility>

#include "onionlab/graph.hpp"
#include "onionlab/io.hpp"
#include "onionlab/optim.hpp"

namespace onionlab {

// ---------------------------------------------------------------------------
// parameters

void ToyParams::build(const TaskConfig& task, int hidden, float gamma_) {
  n = hidden;
  n_symbols = task.n_symbols;
  l_max = task.l_max;
  gamma = gamma_;
  emb = &store.add("toy.emb", TensorF({n_symbols, n}));
  Wo = &store.add("toy.Wo", TensorF({n, n_symbols}));
  bo = &store.add("toy.bo", TensorF({n_symbols}));
}

void ToyParams::init(Rng& rng) {
  for (int64_t i = 0; i < emb->value.numel(); ++i)
    emb->value.data()[i] =
        static_cast<float>(rng.normal() / std::sqrt(static_cast<double>(n)));
  const float lim = 1.0f / std::sqrt(static_cast<float>(n));
  for (int64_t i = 0; i < Wo->value.numel(); ++i)
    Wo->value.data()[i] = static_cast<float>(rng.uniform() * 2.0 - 1.0) * lim;
  bo->value.zero();
}

std::vector<float> toy_scale_trace(float gamma, int length) {
  std::vector<float> s;
  s.reserve(2 * static_cast<size_t>(length));
  float v = 1.0f;
  for (int t = 0; t < length; ++t) {
    s.push_back(v);
    v *= gamma;
  }
  v = -1.0f;
  for (int t = 0; t < length; ++t) {
    s.push_back(v);
    v *= gamma;
  }
  return s;
}

// Scale at global step t (1-based) for a sequence of this length; zero once
// the program is over.
static float scale_at(float gamma, int length, int t) {
  if (t <= length) return std::pow(gamma, static_cast<float>(t - 1));
  if (t <= 2 * length) return -std::pow(gamma, static_cast<float>(t - length - 1));
  return 0.0f;
}

// ---------------------------------------------------------------------------
// raw run

Seq toy_run(const ToyParams& p, const Seq& tokens) {
  const int L = static_cast<int>(tokens.size());
  std::vector<float> h(static_cast<size_t>(p.n), 0.0f);
  const float* E = p.emb->value.data();
  const float* W = p.Wo->value.data();
  const float* b = p.bo->value.data();
  Seq out;
  out.reserve(static_cast<size_t>(L));
  for (int t = 1; t <= 2 * L; ++t) {
    int tok;
    if (t <= L) {
      tok = tokens[static_cast<size_t>(t - 1)];
    } else {
      // Emit from the current state, then subtract what was emitted.
      int best = 0;
      float best_v = 0;
      for (int k = 0; k < p.n_symbols; ++k) {
        float v = b[k];
        for (int i = 0; i < p.n; ++i) v += h[static_cast<size_t>(i)] * W[i * p.n_symbols + k];
        if (k == 0 || v > best_v) {
          best = k;
          best_v = v;
        }
      }
      out.push_back(static_cast<uint8_t>(best));
      tok = best;
    }
    const float s = scale_at(p.gamma, L, t);
    const float* row = E + static_cast<int64_t>(tok) * p.n;
    for (int i = 0; i < p.n; ++i) h[static_cast<size_t>(i)] += s * row[i];
  }
  return out;
}

double toy_exact_match(const ToyParams& p, const Corpus& c, int64_t limit) {
  int64_t count = static_cast<int64_t>(c.seqs.size());
  if (limit >= 0) count = std::min(count, limit);
  if (count == 0) return 0.0;
  int64_t hits = 0;
  for (int64_t i = 0; i < count; ++i)
    if (toy_run(p, c.seqs[static_cast<size_t>(i)]) == c.seqs[static_cast<size_t>(i)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// training

ToyOutcome toy_train(const TaskConfig& task, const ToyTrainConfig& cfg,
                     const Corpus& validation, const MetricSink& sink) {
  Rng root(cfg.seed);
  Rng rng_init = root.fork(kStreamInit);
  Rng rng_data = root.fork(kStreamData);

  ToyOutcome out;
  out.params.build(task, cfg.hidden);
  out.params.init(rng_init);
  ToyParams& p = out.params;

  AdamWConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  AdamWState<float> astate;

  const int B = cfg.batch_size;
  double last_loss = 0;
  const auto t0 = std::chrono::steady_clock::now();

  auto evaluate = [&](int step) {
    RunRecord rec;
    rec.step = step;
    rec.train_loss = last_loss;
    rec.eval_accuracy = toy_exact_match(p, validation, cfg.eval_limit);
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.records.push_back(rec);
    if (sink) sink(record_to_json(rec));
    return rec.eval_accuracy;
  };

  int step = 0;
  for (; step < cfg.steps; ++step) {
    std::vector<Seq> seqs(static_cast<size_t>(B));
    int64_t norm = 0;
    for (auto& s : seqs) {
      s = sample_repeat_example(task, rng_data).tokens;
      norm += static_cast<int64_t>(s.size());
    }

    Graph<float> g;
    auto embv = g.param(*p.emb);
    auto Wov = g.param(*p.Wo);
    auto bov = g.param(*p.bo);
    TensorF H0({B, p.n});
    H0.zero();
    auto H = g.input(std::move(H0));

    std::vector<Graph<float>::Val> loss_terms;
    for (int t = 1; t <= 2 * task.l_max; ++t) {
      // Emissions come from the state before this step's update.
      std::vector<int> targets(static_cast<size_t>(B), 0);
      std::vector<uint8_t> mask(static_cast<size_t>(B), 0);
      bool any = false;
      for (int r = 0; r < B; ++r) {
        const int L = static_cast<int>(seqs[static_cast<size_t>(r)].size());
        if (t > L && t <= 2 * L) {
          targets[static_cast<size_t>(r)] = seqs[static_cast<size_t>(r)][static_cast<size_t>(t - L - 1)];
          mask[static_cast<size_t>(r)] = 1;
          any = true;
        }
      }
      if (any) {
        auto logits = g.add_rowvec(g.matmul(H, Wov), bov);
        auto lp = g.log_softmax_rows(logits);
        loss_terms.push_back(g.masked_nll(lp, std::move(targets), std::move(mask),
                                          static_cast<double>(norm)));
      }

      // Teacher-forced update: encode feeds the input token, decode subtracts
      // the gold token at the mirrored scale.
      std::vector<int> feed(static_cast<size_t>(B), 0);
      TensorF S({B, p.n});
      for (int r = 0; r < B; ++r) {
        const Seq& s = seqs[static_cast<size_t>(r)];
        const int L = static_cast<int>(s.size());
        int tok = 0;
        if (t <= L) tok = s[static_cast<size_t>(t - 1)];
        else if (t <= 2 * L) tok = s[static_cast<size_t>(t - L - 1)];
        feed[static_cast<size_t>(r)] = tok;
        const float sv = scale_at(p.gamma, L, t);
        for (int i = 0; i < p.n; ++i) S.at(r, i) = sv;
      }
      auto X = g.gather_rows(embv, std::move(feed));
      auto Sv = g.input(std::move(S));
      H = g.add(H, g.mul(Sv, X));
    }

    auto loss = loss_terms[0];
    for (size_t i = 1; i < loss_terms.size(); ++i) loss = g.add(loss, loss_terms[i]);
    last_loss = static_cast<double>(g.value(loss).data()[0]);
    p.store.zero_grads();
    g.backward(loss);
    adamw_step(p.store, astate, acfg);

    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
      const double acc = evaluate(step + 1);
      if (cfg.stop_at > 0 && acc >= cfg.stop_at) {
        ++step;
        break;
      }
    }
  }
  out.steps_run = step;
  if (out.records.empty() || out.records.back().step != step) evaluate(step);
  out.final_eval = out.records.back().eval_accuracy;
  return out;
}

// ---------------------------------------------------------------------------
// persistence

void save_toy(const std::string& path, const ToyParams& p, Json extra) {
  NamedArrays arrays;
  arrays.add("emb", p.emb->value);
  arrays.add("Wo", p.Wo->value);
  arrays.add("bo", p.bo->value);
  Json meta;
  meta["objective"] = "toy";
  meta["n"] = p.n;
  meta["n_symbols"] = p.n_symbols;
  meta["l_max"] = p.l_max;
  meta["gamma"] = p.gamma;
  meta["extra"] = std::move(extra);
  save_container(path, kAuxMagic, meta, arrays);
}

ToyParams load_toy(const std::string& path) {
  auto [meta, arrays] = load_container(path, kAuxMagic);
  if (meta.value("objective", "") != "toy")
    throw ContractError("load_toy: objective mismatch in " + path);
  TaskConfig task;
  task.n_symbols = meta.at("n_symbols").get<int>();
  task.l_max = meta.at("l_max").get<int>();
  ToyParams p;
  p.build(task, meta.at("n").get<int>(), meta.at("gamma").get<float>());
  p.emb->value = arrays.get("emb");
  p.Wo->value = arrays.get("Wo");
  p.bo->value = arrays.get("bo");
  return p;
}

}  // namespace onionlab
