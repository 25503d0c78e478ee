// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#include "onionlab/gru.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <utility>

#include "onionlab/kernels.hpp"

namespace onionlab {

const char* to_string(DecodeMode m) {
  return m == DecodeMode::Autoregressive ? "autoregressive" : "noinput";
}
const char* to_string(Feedback f) {
  return f == Feedback::SelfFed ? "selffed" : "teacherforced";
}
DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "autoregressive" || s == "ar") return DecodeMode::Autoregressive;
  if (s == "noinput" || s == "ni") return DecodeMode::NoInput;
  throw ContractError("unknown decode mode: " + s);
}
Feedback feedback_from_string(const std::string& s) {
  if (s == "selffed") return Feedback::SelfFed;
  if (s == "teacherforced" || s == "tf") return Feedback::TeacherForced;
  throw ContractError("unknown feedback mode: " + s);
}

namespace {

// Tape-free batch stepper. Runs the exact kernel sequence that the graph ops
// emit so a forward pass here is bitwise identical to a taped one.
struct RawRunner {
  const GruParams& p;
  int B, N, V;
  TensorF X, a1, a2, s3, pre, z, r, rh, u, diff, zd, H, Hn, log0, logits;
  std::vector<int> last_argmax;

  RawRunner(const GruParams& pp, int b)
      : p(pp),
        B(b),
        N(pp.n),
        V(static_cast<int>(pp.task.vocab())),
        X({b, pp.n}),
        a1({b, pp.n}),
        a2({b, pp.n}),
        s3({b, pp.n}),
        pre({b, pp.n}),
        z({b, pp.n}),
        r({b, pp.n}),
        rh({b, pp.n}),
        u({b, pp.n}),
        diff({b, pp.n}),
        zd({b, pp.n}),
        H({b, pp.n}),
        Hn({b, pp.n}),
        log0({b, static_cast<int64_t>(V)}),
        logits({b, static_cast<int64_t>(V)}),
        last_argmax(static_cast<size_t>(b), -1) {}

  void set_state(const TensorF& h0) {
    if (h0.rows() != B || h0.cols() != N)
      throw ContractError("RawRunner: state shape mismatch, got " +
                          h0.shape_str());
    std::memcpy(H.data(), h0.data(), sizeof(float) * static_cast<size_t>(B) * N);
  }

  void preact(TensorF& out, const TensorF& hin, const TensorF& W,
              const TensorF& U, const TensorF& b) {
    a1.zero();
    kern::gemm_acc_bt<float>(a1.data(), X.data(), W.data(), B, N, N);
    a2.zero();
    kern::gemm_acc_bt<float>(a2.data(), hin.data(), U.data(), B, N, N);
    kern::add<float>(s3.data(), a1.data(), a2.data(),
                     static_cast<size_t>(B) * N);
    for (int row = 0; row < B; ++row)
      kern::add<float>(out.data() + static_cast<int64_t>(row) * N,
                       s3.data() + static_cast<int64_t>(row) * N, b.data(),
                       static_cast<size_t>(N));
  }

  void step(const std::vector<int>& toks) {
    const int64_t n64 = N;
    for (int row = 0; row < B; ++row) {
      const int tok = toks[static_cast<size_t>(row)];
      if (tok < 0 || tok >= V)
        throw ContractError("RawRunner: token out of range");
      kern::scale<float>(X.data() + row * n64, 1.0f,
                         p.E->value.data() + tok * n64,
                         static_cast<size_t>(N));
    }
    preact(pre, H, p.Wz->value, p.Uz->value, p.bz->value);
    kern::sigmoid<float>(z.data(), pre.data(), static_cast<size_t>(B) * N);
    preact(pre, H, p.Wr->value, p.Ur->value, p.br->value);
    kern::sigmoid<float>(r.data(), pre.data(), static_cast<size_t>(B) * N);
    a1.zero();
    kern::gemm_acc_bt<float>(a1.data(), X.data(), p.Wh->value.data(), B, N, N);
    kern::mul<float>(rh.data(), r.data(), H.data(),
                     static_cast<size_t>(B) * N);
    a2.zero();
    kern::gemm_acc_bt<float>(a2.data(), rh.data(), p.Uh->value.data(), B, N, N);
    kern::add<float>(s3.data(), a1.data(), a2.data(),
                     static_cast<size_t>(B) * N);
    for (int row = 0; row < B; ++row)
      kern::add<float>(pre.data() + static_cast<int64_t>(row) * N,
                       s3.data() + static_cast<int64_t>(row) * N,
                       p.bh->value.data(), static_cast<size_t>(N));
    kern::tanh_<float>(u.data(), pre.data(), static_cast<size_t>(B) * N);
    kern::sub<float>(diff.data(), u.data(), H.data(),
                     static_cast<size_t>(B) * N);
    kern::mul<float>(zd.data(), z.data(), diff.data(),
                     static_cast<size_t>(B) * N);
    kern::add<float>(Hn.data(), H.data(), zd.data(),
                     static_cast<size_t>(B) * N);
    std::swap(H, Hn);
    if (!H.all_finite())
      throw NumericError("gru state became non-finite during evaluation");
  }

  void head() {
    log0.zero();
    kern::gemm_acc<float>(log0.data(), H.data(), p.Wo->value.data(), B, N, V);
    for (int row = 0; row < B; ++row)
      kern::add<float>(logits.data() + static_cast<int64_t>(row) * V,
                       log0.data() + static_cast<int64_t>(row) * V,
                       p.bo->value.data(), static_cast<size_t>(V));
    if (!logits.all_finite())
      throw NumericError("gru logits became non-finite during evaluation");
    for (int row = 0; row < B; ++row)
      last_argmax[static_cast<size_t>(row)] = masked_argmax_row(
          logits.data() + static_cast<int64_t>(row) * V, p.task.n_symbols);
  }
};

int checked_len(const Seq& s) {
  if (s.empty()) throw ContractError("gru runner: empty sequence");
  return static_cast<int>(s.size());
}

}  // namespace

EncodeOutput encode_batch(const GruParams& p, const std::vector<const Seq*>& seqs,
                          bool want_traces) {
  const int B = static_cast<int>(seqs.size());
  if (B == 0) throw ContractError("encode_batch: empty batch");
  EncodeOutput out;
  out.boundary = TensorF({B, p.n});
  int tmax = 0;
  for (const Seq* s : seqs) tmax = std::max(tmax, checked_len(*s) + 1);
  if (want_traces) {
    out.traces.reserve(static_cast<size_t>(B));
    for (const Seq* s : seqs)
      out.traces.emplace_back(
          TensorF({p.n, static_cast<int64_t>(s->size()) + 1}));
  }
  RawRunner run(p, B);
  std::vector<int> fed(static_cast<size_t>(B));
  for (int t = 1; t <= tmax; ++t) {
    for (int row = 0; row < B; ++row) {
      const Seq& s = *seqs[static_cast<size_t>(row)];
      const int L = static_cast<int>(s.size());
      fed[static_cast<size_t>(row)] =
          t <= L ? s[static_cast<size_t>(t - 1)]
                 : (t == L + 1 ? p.task.s_token() : p.task.pad_token());
    }
    run.step(fed);
    for (int row = 0; row < B; ++row) {
      const Seq& s = *seqs[static_cast<size_t>(row)];
      const int L = static_cast<int>(s.size());
      if (want_traces && t <= L + 1) {
        TensorF& tr = out.traces[static_cast<size_t>(row)];
        for (int i = 0; i < p.n; ++i)
          tr.at(i, t - 1) = run.z.at(row, i);
      }
      if (t == L + 1)
        std::memcpy(out.boundary.data() + static_cast<int64_t>(row) * p.n,
                    run.H.data() + static_cast<int64_t>(row) * p.n,
                    sizeof(float) * static_cast<size_t>(p.n));
    }
  }
  return out;
}

std::vector<Seq> decode_batch(const GruParams& p, const TensorF& h0,
                              const std::vector<int>& lens, DecodeMode mode) {
  const int B = static_cast<int>(lens.size());
  if (B == 0) throw ContractError("decode_batch: empty batch");
  RawRunner run(p, B);
  run.set_state(h0);
  int jmax = 0;
  for (int L : lens) {
    if (L < 1) throw ContractError("decode_batch: length must be positive");
    jmax = std::max(jmax, L);
  }
  if (mode == DecodeMode::Autoregressive) run.head();
  std::vector<Seq> out(static_cast<size_t>(B));
  std::vector<int> fed(static_cast<size_t>(B));
  for (int j = 1; j <= jmax; ++j) {
    for (int row = 0; row < B; ++row) {
      const int L = lens[static_cast<size_t>(row)];
      fed[static_cast<size_t>(row)] =
          (j > L || mode == DecodeMode::NoInput)
              ? p.task.pad_token()
              : run.last_argmax[static_cast<size_t>(row)];
    }
    run.step(fed);
    run.head();
    for (int row = 0; row < B; ++row)
      if (j <= lens[static_cast<size_t>(row)])
        out[static_cast<size_t>(row)].push_back(static_cast<uint8_t>(
            run.last_argmax[static_cast<size_t>(row)]));
  }
  return out;
}

std::vector<Seq> run_batch(const GruParams& p, const std::vector<const Seq*>& seqs,
                           DecodeMode mode) {
  const int B = static_cast<int>(seqs.size());
  if (B == 0) throw ContractError("run_batch: empty batch");
  int tmax = 0;
  for (const Seq* s : seqs) tmax = std::max(tmax, 2 * checked_len(*s) + 1);
  RawRunner run(p, B);
  std::vector<Seq> out(static_cast<size_t>(B));
  std::vector<int> fed(static_cast<size_t>(B));
  for (int t = 1; t <= tmax; ++t) {
    bool any_window = false;
    for (int row = 0; row < B; ++row) {
      const Seq& s = *seqs[static_cast<size_t>(row)];
      const int L = static_cast<int>(s.size());
      int tok;
      if (t <= L) {
        tok = s[static_cast<size_t>(t - 1)];
      } else if (t == L + 1) {
        tok = p.task.s_token();
      } else if (t <= 2 * L + 1) {
        tok = mode == DecodeMode::NoInput
                  ? p.task.pad_token()
                  : run.last_argmax[static_cast<size_t>(row)];
      } else {
        tok = p.task.pad_token();
      }
      fed[static_cast<size_t>(row)] = tok;
      if (t >= L + 1 && t <= 2 * L + 1) any_window = true;
    }
    run.step(fed);
    if (!any_window) continue;
    run.head();
    for (int row = 0; row < B; ++row) {
      const Seq& s = *seqs[static_cast<size_t>(row)];
      const int L = static_cast<int>(s.size());
      if (t >= L + 2 && t <= 2 * L + 1)
        out[static_cast<size_t>(row)].push_back(static_cast<uint8_t>(
            run.last_argmax[static_cast<size_t>(row)]));
    }
  }
  return out;
}

double exact_match(const GruParams& p, const Corpus& c, DecodeMode mode,
                   int64_t limit) {
  const int64_t total = limit < 0
                            ? static_cast<int64_t>(c.seqs.size())
                            : std::min<int64_t>(limit, c.size());
  if (total == 0) throw ContractError("exact_match: empty corpus");
  constexpr int64_t kChunk = 512;
  int64_t hits = 0;
  for (int64_t base = 0; base < total; base += kChunk) {
    const int64_t n = std::min(kChunk, total - base);
    std::vector<const Seq*> batch;
    batch.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      batch.push_back(&c.seqs[static_cast<size_t>(base + i)]);
    std::vector<Seq> outs = run_batch(p, batch, mode);
    for (int64_t i = 0; i < n; ++i)
      if (outs[static_cast<size_t>(i)] == *batch[static_cast<size_t>(i)])
        ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::pair<TensorF, TensorF> gru_step(const GruParams& p, const TensorF& h,
                                     int token) {
  if (h.numel() != p.n) throw ContractError("gru_step: state size mismatch");
  RawRunner run(p, 1);
  TensorF h2({1, p.n});
  std::memcpy(h2.data(), h.data(), sizeof(float) * static_cast<size_t>(p.n));
  run.set_state(h2);
  run.step({token});
  TensorF hn({p.n}), zn({p.n});
  std::memcpy(hn.data(), run.H.data(), sizeof(float) * static_cast<size_t>(p.n));
  std::memcpy(zn.data(), run.z.data(), sizeof(float) * static_cast<size_t>(p.n));
  return {std::move(hn), std::move(zn)};
}

SingleEncode encode(const GruParams& p, const Seq& tokens) {
  EncodeOutput out = encode_batch(p, {&tokens}, true);
  SingleEncode se;
  se.h = TensorF({p.n});
  std::memcpy(se.h.data(), out.boundary.data(),
              sizeof(float) * static_cast<size_t>(p.n));
  se.trace = std::move(out.traces[0]);
  return se;
}

Seq decode(const GruParams& p, const TensorF& h, int length, DecodeMode mode) {
  if (h.numel() != p.n) throw ContractError("decode: state size mismatch");
  TensorF h2({1, p.n});
  std::memcpy(h2.data(), h.data(), sizeof(float) * static_cast<size_t>(p.n));
  return decode_batch(p, h2, {length}, mode)[0];
}

double sequence_loss(GruParams& p, const RepeatExample& ex, DecodeMode mode,
                     Feedback fb) {
  Graph<float> g;
  auto cell = GruCell<float>::bind(g, p);
  auto loss = batch_program_loss(g, cell, p.task, {&ex.tokens}, mode, fb);
  return static_cast<double>(g.value(loss)[0]);
}

void save_checkpoint(const std::string& path, const GruParams& p, Json extra) {
  NamedArrays arrays;
  const char* names[] = {"E",  "Wz", "Uz", "bz", "Wr", "Ur",
                         "br", "Wh", "Uh", "bh", "Wo", "bo"};
  auto ps = p.arrays();
  for (size_t i = 0; i < ps.size(); ++i) arrays.add(names[i], ps[i]->value);
  Json meta = std::move(extra);
  meta["kind"] = "gru";
  meta["n"] = p.n;
  meta["n_symbols"] = p.task.n_symbols;
  meta["l_max"] = p.task.l_max;
  save_container(path, kCheckpointMagic, std::move(meta), arrays);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto [meta, arrays] = load_container(path, kCheckpointMagic);
  if (!meta.contains("n") || !meta.contains("n_symbols") ||
      !meta.contains("l_max"))
    throw IoError("checkpoint missing n/n_symbols/l_max metadata: " + path);
  LoadedCheckpoint lc;
  lc.meta = meta;
  TaskConfig task;
  task.n_symbols = meta["n_symbols"].get<int>();
  task.l_max = meta["l_max"].get<int>();
  lc.params.build(task, meta["n"].get<int>());
  const char* names[] = {"E",  "Wz", "Uz", "bz", "Wr", "Ur",
                         "br", "Wh", "Uh", "bh", "Wo", "bo"};
  auto ps = lc.params.arrays();
  for (size_t i = 0; i < ps.size(); ++i) {
    const TensorF& src = arrays.get(names[i]);
    if (!src.same_shape(ps[i]->value))
      throw IoError(std::string("checkpoint array ") + names[i] +
                    " has unexpected shape " + src.shape_str());
    ps[i]->value = src;
  }
  return lc;
}

std::string weights_hash(const GruParams& p) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter<float>* q : p.arrays())
    h = fnv1a64(q->value.data(),
                sizeof(float) * static_cast<size_t>(q->value.numel()), h);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace onionlab
