// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#include "onionlab/probes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "onionlab/kernels.hpp"

namespace onionlab {

const char* to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::Linear: return "linear";
    case ProbeKind::Mlp: return "mlp";
    case ProbeKind::GruAr: return "gru-ar";
    case ProbeKind::GruNoInput: return "gru-noinput";
    case ProbeKind::Onion: return "onion";
  }
  throw ContractError("bad probe kind");
}

ProbeKind probe_kind_from_string(const std::string& s) {
  if (s == "linear") return ProbeKind::Linear;
  if (s == "mlp") return ProbeKind::Mlp;
  if (s == "gru-ar") return ProbeKind::GruAr;
  if (s == "gru-noinput") return ProbeKind::GruNoInput;
  if (s == "onion") return ProbeKind::Onion;
  throw ContractError("unknown probe kind: " + s);
}

// ------------------------------------------------------------ flat probes ----

void FlatProbe::build(const TaskConfig& task, int hidden_n, ProbeKind k) {
  if (k != ProbeKind::Linear && k != ProbeKind::Mlp)
    throw ContractError("FlatProbe: kind must be linear or mlp");
  kind = k;
  n = hidden_n;
  n_symbols = task.n_symbols;
  l_max = task.l_max;
  const int64_t out = static_cast<int64_t>(n_symbols) * l_max;
  if (kind == ProbeKind::Linear) {
    W1 = &store.add("probe.W1", TensorF({n, out}));
    b1 = &store.add("probe.b1", TensorF({out}));
  } else {
    hidden = 4 * n;
    W1 = &store.add("probe.W1", TensorF({n, hidden}));
    b1 = &store.add("probe.b1", TensorF({hidden}));
    W2 = &store.add("probe.W2", TensorF({hidden, out}));
    b2 = &store.add("probe.b2", TensorF({out}));
  }
}

void FlatProbe::init(Rng& rng) {
  const double s1 = 1.0 / std::sqrt(static_cast<double>(n));
  for (int64_t i = 0; i < W1->value.numel(); ++i)
    W1->value[i] = static_cast<float>(rng.uniform(-s1, s1));
  if (kind == ProbeKind::Mlp) {
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (int64_t i = 0; i < W2->value.numel(); ++i)
      W2->value[i] = static_cast<float>(rng.uniform(-s2, s2));
  }
}

TensorF flat_probe_logits(const FlatProbe& p, const TensorF& h_rows) {
  if (h_rows.rank() != 2 || h_rows.cols() != p.n)
    throw ContractError("flat_probe_logits: bad state shape " +
                        h_rows.shape_str());
  const int B = static_cast<int>(h_rows.rows());
  const int out = static_cast<int>(p.W1->value.cols());
  TensorF y1({B, out});
  kern::gemm_acc<float>(y1.data(), h_rows.data(), p.W1->value.data(), B, p.n,
                        out);
  for (int r = 0; r < B; ++r)
    kern::add<float>(y1.data() + static_cast<int64_t>(r) * out,
                     y1.data() + static_cast<int64_t>(r) * out,
                     p.b1->value.data(), static_cast<size_t>(out));
  if (p.kind == ProbeKind::Linear) return y1;
  for (int64_t i = 0; i < y1.numel(); ++i)
    if (y1[i] < 0.0f) y1[i] = 0.0f;
  const int out2 = static_cast<int>(p.W2->value.cols());
  TensorF y2({B, out2});
  kern::gemm_acc<float>(y2.data(), y1.data(), p.W2->value.data(), B, p.hidden,
                        out2);
  for (int r = 0; r < B; ++r)
    kern::add<float>(y2.data() + static_cast<int64_t>(r) * out2,
                     y2.data() + static_cast<int64_t>(r) * out2,
                     p.b2->value.data(), static_cast<size_t>(out2));
  return y2;
}

Seq flat_probe_decode(const FlatProbe& p, const TensorF& h, int length) {
  if (h.rank() != 1 || h.numel() != p.n)
    throw ContractError("flat_probe_decode: bad state shape");
  if (length < 1 || length > p.l_max)
    throw ContractError("flat_probe_decode: bad length");
  TensorF row({1, p.n});
  std::memcpy(row.data(), h.data(), sizeof(float) * h.numel());
  const TensorF logits = flat_probe_logits(p, row);
  Seq out;
  for (int j = 0; j < length; ++j) {
    const float* blk = logits.data() + static_cast<int64_t>(j) * p.n_symbols;
    out.push_back(static_cast<uint8_t>(
        masked_argmax_row(blk, p.n_symbols)));
  }
  return out;
}

// -------------------------------------------------------- denoising probe ----

void OnionProbeParams::build(const TaskConfig& task, int hidden_n) {
  n = hidden_n;
  n_symbols = task.n_symbols;
  hidden = 4 * n;
  emb = &store.add("oprobe.emb", TensorF({n_symbols, n}));
  g = &store.add("oprobe.g", TensorF({n}));
  gamma = &store.add("oprobe.gamma", TensorF({n}));
  beta = &store.add("oprobe.beta", TensorF({n}));
  b = &store.add("oprobe.b", TensorF({n}));
  W1 = &store.add("oprobe.W1", TensorF({n, hidden}));
  b1 = &store.add("oprobe.b1", TensorF({hidden}));
  W2 = &store.add("oprobe.W2", TensorF({hidden, n_symbols}));
  b2 = &store.add("oprobe.b2", TensorF({n_symbols}));
}

void OnionProbeParams::init(Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(n));
  for (int64_t i = 0; i < emb->value.numel(); ++i)
    emb->value[i] = static_cast<float>(rng.normal(0.0, s));
  g->value.fill(1.0f);
  gamma->value.fill(0.5f);
  beta->value.zero();
  b->value.zero();
  for (int64_t i = 0; i < W1->value.numel(); ++i)
    W1->value[i] = static_cast<float>(rng.uniform(-s, s));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int64_t i = 0; i < W2->value.numel(); ++i)
    W2->value[i] = static_cast<float>(rng.uniform(-s2, s2));
}

TensorF OnionProbeParams::scale(int t) const {
  if (t < 1) throw ContractError("probe scale: step must be >= 1");
  TensorF s({n});
  for (int i = 0; i < n; ++i) {
    float p = 1.0f;
    for (int k = 0; k < t; ++k) p *= gamma->value[i];
    s[i] = g->value[i] * p + beta->value[i] * static_cast<float>(t) +
           b->value[i];
  }
  return s;
}

namespace {

void layer_norm_rows_raw(TensorF& x, double eps = 1e-5) {
  const int64_t R = x.rows(), C = x.cols();
  for (int64_t r = 0; r < R; ++r) {
    float* row = x.data() + r * C;
    float mean = kern::sum<float>(row, static_cast<size_t>(C)) /
                 static_cast<float>(C);
    float var = 0.0f;
    for (int64_t j = 0; j < C; ++j) {
      const float d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<float>(C);
    const float istd = 1.0f / std::sqrt(var + static_cast<float>(eps));
    for (int64_t j = 0; j < C; ++j) row[j] = (row[j] - mean) * istd;
  }
}

}  // namespace

TensorF onion_probe_classify(const OnionProbeParams& p, const TensorF& h_rows) {
  if (h_rows.rank() != 2 || h_rows.cols() != p.n)
    throw ContractError("onion_probe_classify: bad state shape " +
                        h_rows.shape_str());
  const int B = static_cast<int>(h_rows.rows());
  TensorF y1({B, p.hidden});
  kern::gemm_acc<float>(y1.data(), h_rows.data(), p.W1->value.data(), B, p.n,
                        p.hidden);
  for (int r = 0; r < B; ++r)
    kern::add<float>(y1.data() + static_cast<int64_t>(r) * p.hidden,
                     y1.data() + static_cast<int64_t>(r) * p.hidden,
                     p.b1->value.data(), static_cast<size_t>(p.hidden));
  layer_norm_rows_raw(y1);
  for (int64_t i = 0; i < y1.numel(); ++i)
    if (y1[i] < 0.0f) y1[i] = 0.0f;
  TensorF y2({B, p.n_symbols});
  kern::gemm_acc<float>(y2.data(), y1.data(), p.W2->value.data(), B, p.hidden,
                        p.n_symbols);
  for (int r = 0; r < B; ++r)
    kern::add<float>(y2.data() + static_cast<int64_t>(r) * p.n_symbols,
                     y2.data() + static_cast<int64_t>(r) * p.n_symbols,
                     p.b2->value.data(), static_cast<size_t>(p.n_symbols));
  return y2;
}

Seq onion_probe_decode(const OnionProbeParams& p, const TensorF& h,
                       int length) {
  if (h.rank() != 1 || h.numel() != p.n)
    throw ContractError("onion_probe_decode: bad state shape");
  if (length < 1) throw ContractError("onion_probe_decode: bad length");
  TensorF cur({1, p.n});
  std::memcpy(cur.data(), h.data(), sizeof(float) * h.numel());
  Seq out;
  for (int t = 1; t <= length; ++t) {
    const TensorF logits = onion_probe_classify(p, cur);
    const int y = masked_argmax_row(logits.data(), p.n_symbols);
    out.push_back(static_cast<uint8_t>(y));
    if (t == length) break;
    const TensorF s = p.scale(t);
    const float* e = p.emb->value.data() + static_cast<int64_t>(y) * p.n;
    for (int i = 0; i < p.n; ++i) cur[i] -= s[i] * e[i];
  }
  return out;
}

// --------------------------------------------------------------- training ----

namespace {

double now_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Shared batch source: corpus sampling when available, fresh random
// sequences otherwise.
std::vector<const Seq*> draw_batch(const Corpus* train, const TaskConfig& task,
                                   int batch, Rng& rng,
                                   std::vector<Seq>& scratch) {
  std::vector<const Seq*> out(static_cast<size_t>(batch));
  if (train) {
    for (int i = 0; i < batch; ++i)
      out[static_cast<size_t>(i)] = &train->seqs[static_cast<size_t>(
          rng.bounded(static_cast<uint64_t>(train->size())))];
  } else {
    scratch.clear();
    scratch.reserve(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i)
      scratch.push_back(sample_repeat_example(task, rng).tokens);
    for (int i = 0; i < batch; ++i)
      out[static_cast<size_t>(i)] = &scratch[static_cast<size_t>(i)];
  }
  return out;
}

// Per-position cross-entropy on position-major logit blocks.
Graph<float>::Val flat_positional_loss(Graph<float>& g,
                                       Graph<float>::Val logits,
                                       const std::vector<const Seq*>& seqs,
                                       int n_symbols) {
  const int B = static_cast<int>(seqs.size());
  int64_t norm = 0;
  int jmax = 0;
  for (const Seq* s : seqs) {
    norm += static_cast<int64_t>(s->size());
    jmax = std::max(jmax, static_cast<int>(s->size()));
  }
  Graph<float>::Val loss{};
  bool have = false;
  for (int j = 1; j <= jmax; ++j) {
    auto blk = g.slice_cols(logits, static_cast<int64_t>(j - 1) * n_symbols,
                            static_cast<int64_t>(j) * n_symbols);
    auto lp = g.log_softmax_rows(blk);
    std::vector<int> tg(static_cast<size_t>(B), 0);
    std::vector<uint8_t> mask(static_cast<size_t>(B), 0);
    for (int r = 0; r < B; ++r) {
      const Seq& s = *seqs[static_cast<size_t>(r)];
      if (j <= static_cast<int>(s.size())) {
        tg[static_cast<size_t>(r)] = s[static_cast<size_t>(j - 1)];
        mask[static_cast<size_t>(r)] = 1;
      }
    }
    auto sl = g.masked_nll(lp, std::move(tg), std::move(mask),
                           static_cast<double>(norm));
    loss = have ? g.add(loss, sl) : sl;
    have = true;
  }
  return loss;
}

ProbeEval eval_many(const std::function<Seq(const TensorF&, int)>& decode_one,
                    const GruParams& frozen, const Corpus& c, int64_t limit) {
  const int64_t total =
      limit < 0 ? c.size() : std::min<int64_t>(limit, c.size());
  if (total == 0) throw ContractError("probe eval: empty corpus");
  constexpr int64_t kChunk = 512;
  int64_t seq_hits = 0, tok_hits = 0, tok_total = 0;
  for (int64_t base = 0; base < total; base += kChunk) {
    const int64_t nb = std::min(kChunk, total - base);
    std::vector<const Seq*> seqs;
    for (int64_t i = 0; i < nb; ++i)
      seqs.push_back(&c.seqs[static_cast<size_t>(base + i)]);
    const TensorF H = encode_batch(frozen, seqs).boundary;
    for (int64_t i = 0; i < nb; ++i) {
      const Seq& truth = *seqs[static_cast<size_t>(i)];
      TensorF h({frozen.n});
      std::memcpy(h.data(), H.data() + i * frozen.n,
                  sizeof(float) * static_cast<size_t>(frozen.n));
      const Seq got = decode_one(h, static_cast<int>(truth.size()));
      if (got == truth) ++seq_hits;
      for (size_t t = 0; t < truth.size(); ++t)
        if (got[t] == truth[t]) ++tok_hits;
      tok_total += static_cast<int64_t>(truth.size());
    }
  }
  ProbeEval ev;
  ev.seq_exact = static_cast<double>(seq_hits) / static_cast<double>(total);
  ev.token_acc = static_cast<double>(tok_hits) / static_cast<double>(tok_total);
  return ev;
}

}  // namespace

ProbeEval eval_flat_probe(const GruParams& frozen, const FlatProbe& p,
                          const Corpus& c, int64_t limit) {
  return eval_many(
      [&](const TensorF& h, int len) { return flat_probe_decode(p, h, len); },
      frozen, c, limit);
}

ProbeEval eval_gru_probe(const GruParams& frozen, const GruParams& dec,
                         DecodeMode probe_mode, const Corpus& c,
                         int64_t limit) {
  return eval_many(
      [&](const TensorF& h, int len) {
        return decode(dec, h, len, probe_mode);
      },
      frozen, c, limit);
}

ProbeEval eval_onion_probe(const GruParams& frozen, const OnionProbeParams& p,
                           const Corpus& c, int64_t limit) {
  return eval_many(
      [&](const TensorF& h, int len) {
        return onion_probe_decode(p, h, len);
      },
      frozen, c, limit);
}

ProbeOutcome train_probe(ProbeKind kind, GruParams& frozen,
                         const ProbeTrainConfig& cfg, const Corpus* train,
                         const MetricSink& sink, const Corpus* test) {
  if (cfg.steps < 0 || cfg.batch_size < 1)
    throw ContractError("train_probe: bad config");
  const auto t0 = std::chrono::steady_clock::now();
  frozen.set_trainable(false);
  const TaskConfig& task = frozen.task;

  Rng root(cfg.seed);
  Rng rng_init = root.fork(kStreamInit);
  Rng rng_batch = root.fork(kStreamBatch);
  Rng rng_data = root.fork(kStreamData);

  ProbeOutcome out;
  out.kind = kind;
  ParamStore<float>* trained_store = nullptr;
  if (kind == ProbeKind::Linear || kind == ProbeKind::Mlp) {
    out.flat = std::make_unique<FlatProbe>();
    out.flat->build(task, frozen.n, kind);
    out.flat->init(rng_init);
    trained_store = &out.flat->store;
  } else if (kind == ProbeKind::GruAr || kind == ProbeKind::GruNoInput) {
    out.gru = std::make_unique<GruParams>();
    out.gru->build(task, frozen.n);
    out.gru->init_weights(rng_init);
    trained_store = &out.gru->store;
  } else {
    out.onion = std::make_unique<OnionProbeParams>();
    out.onion->build(task, frozen.n);
    out.onion->init(rng_init);
    trained_store = &out.onion->store;
  }

  AdamWState<float> opt_state;
  const AdamWConfig opt_cfg = make_adamw(cfg.lr, cfg.weight_decay);

  auto evaluate = [&]() -> ProbeEval {
    const Corpus* ev = test ? test : train;
    if (!ev) return {};
    switch (kind) {
      case ProbeKind::Linear:
      case ProbeKind::Mlp:
        return eval_flat_probe(frozen, *out.flat, *ev, cfg.eval_limit);
      case ProbeKind::GruAr:
        return eval_gru_probe(frozen, *out.gru, DecodeMode::Autoregressive,
                              *ev, cfg.eval_limit);
      case ProbeKind::GruNoInput:
        return eval_gru_probe(frozen, *out.gru, DecodeMode::NoInput, *ev,
                              cfg.eval_limit);
      case ProbeKind::Onion:
        return eval_onion_probe(frozen, *out.onion, *ev, cfg.eval_limit);
    }
    return {};
  };

  double loss_acc = 0;
  int loss_cnt = 0;
  auto log_point = [&](int step) {
    const ProbeEval ev = evaluate();
    RunRecord rec;
    rec.step = step;
    rec.train_loss = loss_cnt ? loss_acc / loss_cnt : 0.0;
    rec.eval_accuracy = ev.seq_exact;
    rec.wall_time_s = now_s(t0);
    out.records.push_back(rec);
    out.final_eval = ev;
    if (sink) {
      Json j = record_to_json(rec);
      j["token_accuracy"] = ev.token_acc;
      sink(j);
    }
    loss_acc = 0;
    loss_cnt = 0;
  };

  std::vector<Seq> scratch;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<const Seq*> seqs =
        draw_batch(train, task, cfg.batch_size, train ? rng_batch : rng_data,
                   scratch);
    const TensorF HT = encode_batch(frozen, seqs).boundary;

    Graph<float> g;
    auto H = g.input(HT);
    Graph<float>::Val loss{};
    if (kind == ProbeKind::Linear || kind == ProbeKind::Mlp) {
      auto W1 = g.param(*out.flat->W1);
      auto b1 = g.param(*out.flat->b1);
      auto y1 = g.add_rowvec(g.matmul(H, W1), b1);
      Graph<float>::Val logits = y1;
      if (kind == ProbeKind::Mlp) {
        auto W2 = g.param(*out.flat->W2);
        auto b2 = g.param(*out.flat->b2);
        logits = g.add_rowvec(g.matmul(g.relu(y1), W2), b2);
      }
      loss = flat_positional_loss(g, logits, seqs, task.n_symbols);
    } else if (kind == ProbeKind::GruAr || kind == ProbeKind::GruNoInput) {
      auto cell = GruCell<float>::bind(g, *out.gru);
      loss = decode_loss_from_state(
          g, cell, task, H, seqs,
          kind == ProbeKind::GruAr ? DecodeMode::Autoregressive
                                   : DecodeMode::NoInput,
          Feedback::TeacherForced);
    } else {
      // Denoising recurrence, teacher-forced: classify, subtract the gold
      // token's scaled embedding, repeat.
      auto emb = g.param(*out.onion->emb);
      auto gv = g.param(*out.onion->g);
      auto gammav = g.param(*out.onion->gamma);
      auto betav = g.param(*out.onion->beta);
      auto bv = g.param(*out.onion->b);
      auto W1 = g.param(*out.onion->W1);
      auto b1 = g.param(*out.onion->b1);
      auto W2 = g.param(*out.onion->W2);
      auto b2 = g.param(*out.onion->b2);
      const int B = static_cast<int>(seqs.size());
      int jmax = 0;
      int64_t norm = 0;
      for (const Seq* s : seqs) {
        jmax = std::max(jmax, static_cast<int>(s->size()));
        norm += static_cast<int64_t>(s->size());
      }
      auto cur = H;
      bool have = false;
      for (int t = 1; t <= jmax; ++t) {
        auto hid = g.relu(g.layer_norm_rows(g.add_rowvec(g.matmul(cur, W1), b1)));
        auto logits = g.add_rowvec(g.matmul(hid, W2), b2);
        auto lp = g.log_softmax_rows(logits);
        std::vector<int> tg(static_cast<size_t>(B), 0);
        std::vector<uint8_t> mask(static_cast<size_t>(B), 0);
        std::vector<int> gold(static_cast<size_t>(B), 0);
        for (int r = 0; r < B; ++r) {
          const Seq& s = *seqs[static_cast<size_t>(r)];
          if (t <= static_cast<int>(s.size())) {
            tg[static_cast<size_t>(r)] = s[static_cast<size_t>(t - 1)];
            mask[static_cast<size_t>(r)] = 1;
            gold[static_cast<size_t>(r)] = s[static_cast<size_t>(t - 1)];
          }
        }
        auto sl = g.masked_nll(lp, std::move(tg), std::move(mask),
                               static_cast<double>(norm));
        loss = have ? g.add(loss, sl) : sl;
        have = true;
        if (t == jmax) break;
        auto st = g.add(g.add(g.mul(gv, g.pow_int(gammav, t)),
                              g.scale(betav, static_cast<double>(t))),
                        bv);
        auto sub = g.mul_rowvec(g.gather_rows(emb, gold), st);
        cur = g.sub(cur, sub);
      }
    }
    trained_store->zero_grads();
    g.backward(loss);
    adamw_step(*trained_store, opt_state, opt_cfg);
    loss_acc += static_cast<double>(g.value(loss)[0]);
    ++loss_cnt;
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) log_point(step);
  }
  if (out.records.empty() || out.records.back().step != cfg.steps)
    log_point(cfg.steps);
  return out;
}

// ------------------------------------------------------------ persistence ----

void save_flat_probe(const std::string& path, const FlatProbe& p, Json extra) {
  NamedArrays arrays;
  arrays.add("W1", p.W1->value);
  arrays.add("b1", p.b1->value);
  if (p.kind == ProbeKind::Mlp) {
    arrays.add("W2", p.W2->value);
    arrays.add("b2", p.b2->value);
  }
  Json meta = std::move(extra);
  meta["objective"] = std::string("probe-") + to_string(p.kind);
  meta["n"] = p.n;
  meta["n_symbols"] = p.n_symbols;
  meta["l_max"] = p.l_max;
  save_container(path, kAuxMagic, std::move(meta), arrays);
}

FlatProbe load_flat_probe(const std::string& path) {
  auto [meta, arrays] = load_container(path, kAuxMagic);
  const std::string obj = meta.value("objective", "");
  if (obj != "probe-linear" && obj != "probe-mlp")
    throw IoError("not a flat-probe bundle: " + path);
  TaskConfig task;
  task.n_symbols = meta.at("n_symbols").get<int>();
  task.l_max = meta.at("l_max").get<int>();
  FlatProbe p;
  p.build(task, meta.at("n").get<int>(),
          obj == "probe-linear" ? ProbeKind::Linear : ProbeKind::Mlp);
  for (auto& [name, t] : arrays.items) {
    Parameter<float>& dst = p.store.get("probe." + name);
    if (!t.same_shape(dst.value))
      throw IoError("flat-probe array " + name + " shape mismatch: " + path);
    dst.value = t;
  }
  return p;
}

void save_gru_probe(const std::string& path, const GruParams& dec,
                    ProbeKind kind, Json extra) {
  if (kind != ProbeKind::GruAr && kind != ProbeKind::GruNoInput)
    throw ContractError("save_gru_probe: wrong kind");
  Json meta = std::move(extra);
  meta["objective"] = std::string("probe-") + to_string(kind);
  save_checkpoint(path, dec, std::move(meta));
}

std::pair<GruParams, ProbeKind> load_gru_probe(const std::string& path) {
  LoadedCheckpoint lc = load_checkpoint(path);
  const std::string obj = lc.meta.value("objective", "");
  if (obj != "probe-gru-ar" && obj != "probe-gru-noinput")
    throw IoError("not a decoder-probe bundle: " + path);
  return {std::move(lc.params), probe_kind_from_string(obj.substr(6))};
}

void save_onion_probe(const std::string& path, const OnionProbeParams& p,
                      Json extra) {
  NamedArrays arrays;
  arrays.add("emb", p.emb->value);
  arrays.add("g", p.g->value);
  arrays.add("gamma", p.gamma->value);
  arrays.add("beta", p.beta->value);
  arrays.add("b", p.b->value);
  arrays.add("W1", p.W1->value);
  arrays.add("b1", p.b1->value);
  arrays.add("W2", p.W2->value);
  arrays.add("b2", p.b2->value);
  Json meta = std::move(extra);
  meta["objective"] = "probe-onion";
  meta["n"] = p.n;
  meta["n_symbols"] = p.n_symbols;
  save_container(path, kAuxMagic, std::move(meta), arrays);
}

OnionProbeParams load_onion_probe(const std::string& path) {
  auto [meta, arrays] = load_container(path, kAuxMagic);
  if (meta.value("objective", "") != "probe-onion")
    throw IoError("not a denoising-probe bundle: " + path);
  TaskConfig task;
  task.n_symbols = meta.at("n_symbols").get<int>();
  OnionProbeParams p;
  p.build(task, meta.at("n").get<int>());
  for (auto& [name, t] : arrays.items) {
    Parameter<float>& dst = p.store.get("oprobe." + name);
    if (!t.same_shape(dst.value))
      throw IoError("denoising-probe array " + name + " shape mismatch: " +
                    path);
    dst.value = t;
  }
  return p;
}

// ------------------------------------------------------------- featurizer ----

Featurization featurize(const TensorF& h, int length,
                        const OnionProbeParams& probe, const OnionParams& op,
                        FeaturizerMode mode) {
  if (h.rank() != 1 || h.numel() != op.n)
    throw ContractError("featurize: bad state shape");
  if (probe.n != op.n || probe.n_symbols != op.n_symbols)
    throw ContractError("featurize: probe/intervention size mismatch");
  Featurization ft;
  ft.predictions = onion_probe_decode(probe, h, length);
  ft.f.reserve(static_cast<size_t>(length));
  for (int j = 1; j <= length; ++j) {
    TensorF fj({op.n});
    std::memcpy(fj.data(),
                op.emb->value.data() +
                    static_cast<int64_t>(ft.predictions[static_cast<size_t>(
                        j - 1)]) * op.n,
                sizeof(float) * static_cast<size_t>(op.n));
    ft.f.push_back(std::move(fj));
  }
  ft.residual = h;
  const int j0 = mode == FeaturizerMode::Literal ? 2 : 1;
  for (int j = j0; j <= length; ++j) {
    const TensorF s = onion_scale(op, j);
    const TensorF& fj = ft.f[static_cast<size_t>(j - 1)];
    for (int i = 0; i < op.n; ++i) ft.residual[i] -= fj[i] * s[i];
  }
  return ft;
}

TensorF defeaturize(const Featurization& ft, const OnionParams& op) {
  TensorF out = ft.residual;
  for (size_t j = 1; j <= ft.f.size(); ++j) {
    const TensorF s = onion_scale(op, static_cast<int>(j));
    const TensorF& fj = ft.f[j - 1];
    for (int i = 0; i < op.n; ++i) out[i] += fj[i] * s[i];
  }
  return out;
}

InterchangeResult onion_interchange(const OnionParams& op,
                                    const OnionProbeParams& probe,
                                    const TensorF& h_a, const Seq& a_tokens,
                                    const TensorF& h_b, const Seq& b_tokens,
                                    int j, FeaturizerMode mode) {
  const int L = static_cast<int>(a_tokens.size());
  if (j < 1 || j > L || b_tokens.size() < static_cast<size_t>(j))
    throw ContractError("onion_interchange: position out of range");
  Featurization fa = featurize(h_a, L, probe, op, mode);
  Featurization fb =
      featurize(h_b, static_cast<int>(b_tokens.size()), probe, op, mode);
  InterchangeResult res;
  res.probe_ok_a =
      fa.predictions[static_cast<size_t>(j - 1)] == a_tokens[static_cast<size_t>(j - 1)];
  res.probe_ok_b =
      fb.predictions[static_cast<size_t>(j - 1)] == b_tokens[static_cast<size_t>(j - 1)];
  fa.f[static_cast<size_t>(j - 1)] = fb.f[static_cast<size_t>(j - 1)];
  res.featurized_route = defeaturize(fa, op);

  const TensorF s = onion_scale(op, j);
  const float* eb = op.emb->value.data() +
                    static_cast<int64_t>(b_tokens[static_cast<size_t>(j - 1)]) * op.n;
  const float* ea = op.emb->value.data() +
                    static_cast<int64_t>(a_tokens[static_cast<size_t>(j - 1)]) * op.n;
  res.direct_route = h_a;
  for (int i = 0; i < op.n; ++i)
    res.direct_route[i] += (eb[i] - ea[i]) * s[i];
  return res;
}

}  // namespace onionlab
