// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onionlab/graph.hpp"
#include "onionlab/io.hpp"
#include "onionlab/taskgen.hpp"

namespace onionlab {

// How decode-phase inputs are produced when the model runs on its own.
enum class DecodeMode { Autoregressive, NoInput };
// How decode-phase inputs are produced while training with a loss attached.
enum class Feedback { SelfFed, TeacherForced };

const char* to_string(DecodeMode m);
const char* to_string(Feedback f);
DecodeMode decode_mode_from_string(const std::string& s);
Feedback feedback_from_string(const std::string& s);

// Gated recurrent unit with a tied linear head:
//   z = sigmoid(W_z x + U_z h + b_z)
//   r = sigmoid(W_r x + U_r h + b_r)
//   u = tanh(W_h x + U_h (r .* h) + b_h)
//   h' = (1 - z) .* h + z .* u          (computed as h + z .* (u - h))
//   logits = h' W_o + b_o
// Gate matrices act on column vectors (so batched rows multiply transposed);
// the head uses the row convention directly.
template <typename T>
struct GruParamsT {
  TaskConfig task;
  int n = 0;
  ParamStore<T> store;
  Parameter<T>* E = nullptr;   // [vocab x n]
  Parameter<T>* Wz = nullptr;  // [n x n]
  Parameter<T>* Uz = nullptr;  // [n x n]
  Parameter<T>* bz = nullptr;  // [n]
  Parameter<T>* Wr = nullptr;
  Parameter<T>* Ur = nullptr;
  Parameter<T>* br = nullptr;
  Parameter<T>* Wh = nullptr;
  Parameter<T>* Uh = nullptr;
  Parameter<T>* bh = nullptr;
  Parameter<T>* Wo = nullptr;  // [n x vocab]
  Parameter<T>* bo = nullptr;  // [vocab]

  void build(const TaskConfig& t, int hidden) {
    task = t;
    n = hidden;
    const int64_t N = hidden, V = t.vocab();
    E = &store.add("gru.E", Tensor<T>({V, N}));
    Wz = &store.add("gru.Wz", Tensor<T>({N, N}));
    Uz = &store.add("gru.Uz", Tensor<T>({N, N}));
    bz = &store.add("gru.bz", Tensor<T>({N}));
    Wr = &store.add("gru.Wr", Tensor<T>({N, N}));
    Ur = &store.add("gru.Ur", Tensor<T>({N, N}));
    br = &store.add("gru.br", Tensor<T>({N}));
    Wh = &store.add("gru.Wh", Tensor<T>({N, N}));
    Uh = &store.add("gru.Uh", Tensor<T>({N, N}));
    bh = &store.add("gru.bh", Tensor<T>({N}));
    Wo = &store.add("gru.Wo", Tensor<T>({N, V}));
    bo = &store.add("gru.bo", Tensor<T>({V}));
  }

  // Draw order is part of the reproducibility contract: E (normal, row-major),
  // then Wz, Uz, Wr, Ur, Wh, Uh, Wo uniform in (-1/sqrt(n), 1/sqrt(n)).
  // Biases stay zero.
  void init_weights(Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (int64_t i = 0; i < E->value.numel(); ++i)
      E->value[i] = static_cast<T>(rng.normal(0.0, s));
    for (Parameter<T>* m : {Wz, Uz, Wr, Ur, Wh, Uh, Wo})
      for (int64_t i = 0; i < m->value.numel(); ++i)
        m->value[i] = static_cast<T>(rng.uniform(-s, s));
  }

  void set_trainable(bool t) {
    for (auto& p : store) p.trainable = t;
  }

  // Order-stable array list for hashing and checkpoints.
  std::vector<Parameter<T>*> arrays() const {
    return {E, Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh, Wo, bo};
  }
};

using GruParams = GruParamsT<float>;

// Parameter handles bound into one graph; builds the per-step subgraph.
template <typename T>
struct GruCell {
  using Val = typename Graph<T>::Val;
  int n_symbols = 0;
  Val E, Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh, Wo, bo;

  static GruCell bind(Graph<T>& g, GruParamsT<T>& p) {
    GruCell c;
    c.n_symbols = p.task.n_symbols;
    c.E = g.param(*p.E);
    c.Wz = g.param(*p.Wz);
    c.Uz = g.param(*p.Uz);
    c.bz = g.param(*p.bz);
    c.Wr = g.param(*p.Wr);
    c.Ur = g.param(*p.Ur);
    c.br = g.param(*p.br);
    c.Wh = g.param(*p.Wh);
    c.Uh = g.param(*p.Uh);
    c.bh = g.param(*p.bh);
    c.Wo = g.param(*p.Wo);
    c.bo = g.param(*p.bo);
    return c;
  }

  Val step(Graph<T>& g, Val H, const std::vector<int>& tokens,
           Val* z_out = nullptr) const {
    auto X = g.gather_rows(E, tokens);
    auto z = g.sigmoid(g.add_rowvec(
        g.add(g.matmul_bt(X, Wz), g.matmul_bt(H, Uz)), bz));
    auto r = g.sigmoid(g.add_rowvec(
        g.add(g.matmul_bt(X, Wr), g.matmul_bt(H, Ur)), br));
    auto u = g.tanh_(g.add_rowvec(
        g.add(g.matmul_bt(X, Wh), g.matmul_bt(g.mul(r, H), Uh)), bh));
    auto hnew = g.add(H, g.mul(z, g.sub(u, H)));
    if (z_out) *z_out = z;
    return hnew;
  }

  Val head(Graph<T>& g, Val H) const {
    return g.add_rowvec(g.matmul(H, Wo), bo);
  }
};

// Greedy readout over symbol logits; trigger and padding ids are never
// emitted.
template <typename T>
int masked_argmax_row(const T* logits, int n_symbols) {
  int best = 0;
  for (int c = 1; c < n_symbols; ++c)
    if (logits[c] > logits[best]) best = c;
  return best;
}

// --------------------------------------------------- tape program losses ----
// Full task program for a batch: the model consumes i_1..i_L, the trigger,
// then L decode inputs. Emissions are read after each decode-phase update;
// the loss is the global mean cross-entropy over all decode emissions.
template <typename T>
typename Graph<T>::Val batch_program_loss(Graph<T>& g, const GruCell<T>& cell,
                                          const TaskConfig& task,
                                          const std::vector<const Seq*>& seqs,
                                          DecodeMode mode, Feedback fb) {
  const int B = static_cast<int>(seqs.size());
  if (B == 0) throw ContractError("batch_program_loss: empty batch");
  int tmax = 0;
  int64_t norm = 0;
  for (const Seq* s : seqs) {
    const int L = static_cast<int>(s->size());
    if (L < 1) throw ContractError("batch_program_loss: empty sequence");
    tmax = std::max(tmax, 2 * L + 1);
    norm += L;
  }
  auto H = g.input(Tensor<T>({B, g.value(cell.E).cols()}));
  typename Graph<T>::Val loss{};
  typename Graph<T>::Val prev_logits{};  // re-resolved per step; node storage moves
  bool have_loss = false;
  bool have_logits = false;
  std::vector<int> fed(static_cast<size_t>(B));
  for (int t = 1; t <= tmax; ++t) {
    const T* prev = have_logits ? g.value(prev_logits).data() : nullptr;
    bool any_window = false;
    for (int r = 0; r < B; ++r) {
      const Seq& s = *seqs[static_cast<size_t>(r)];
      const int L = static_cast<int>(s.size());
      int tok;
      if (t <= L) {
        tok = s[static_cast<size_t>(t - 1)];
      } else if (t == L + 1) {
        tok = task.s_token();
      } else if (t <= 2 * L + 1) {
        const int j = t - L - 1;  // decode step, 1-based
        if (mode == DecodeMode::NoInput) {
          tok = task.pad_token();
        } else if (fb == Feedback::TeacherForced && j >= 2) {
          tok = s[static_cast<size_t>(j - 2)];
        } else {
          tok = masked_argmax_row(prev + static_cast<int64_t>(r) * task.vocab(),
                                  task.n_symbols);
        }
      } else {
        tok = task.pad_token();
      }
      fed[static_cast<size_t>(r)] = tok;
      if (t >= L + 1 && t <= 2 * L + 1) any_window = true;
    }
    H = cell.step(g, H, fed);
    if (!any_window) continue;
    auto logits = cell.head(g, H);
    prev_logits = logits;
    have_logits = true;
    std::vector<int> targets(static_cast<size_t>(B), 0);
    std::vector<uint8_t> mask(static_cast<size_t>(B), 0);
    bool any_loss = false;
    for (int r = 0; r < B; ++r) {
      const Seq& s = *seqs[static_cast<size_t>(r)];
      const int L = static_cast<int>(s.size());
      if (t >= L + 2 && t <= 2 * L + 1) {
        targets[static_cast<size_t>(r)] = s[static_cast<size_t>(t - L - 2)];
        mask[static_cast<size_t>(r)] = 1;
        any_loss = true;
      }
    }
    if (!any_loss) continue;
    auto lp = g.log_softmax_rows(logits);
    auto step_loss = g.masked_nll(lp, std::move(targets), std::move(mask),
                                  static_cast<double>(norm));
    loss = have_loss ? g.add(loss, step_loss) : step_loss;
    have_loss = true;
  }
  return loss;
}

// Decode phase only, starting from a given state node (used when the initial
// state is produced by a differentiable intervention). targets[r] supplies
// both the decode length and the loss labels.
template <typename T>
typename Graph<T>::Val decode_loss_from_state(Graph<T>& g,
                                              const GruCell<T>& cell,
                                              const TaskConfig& task,
                                              typename Graph<T>::Val H0,
                                              const std::vector<const Seq*>& targets,
                                              DecodeMode mode, Feedback fb) {
  const int B = static_cast<int>(targets.size());
  if (B == 0) throw ContractError("decode_loss_from_state: empty batch");
  if (g.value(H0).rows() != B)
    throw ContractError("decode_loss_from_state: state/target batch mismatch");
  int jmax = 0;
  int64_t norm = 0;
  for (const Seq* s : targets) {
    const int L = static_cast<int>(s->size());
    if (L < 1) throw ContractError("decode_loss_from_state: empty target");
    jmax = std::max(jmax, L);
    norm += L;
  }
  typename Graph<T>::Val prev_logits{};
  bool have_logits = false;
  if (mode == DecodeMode::Autoregressive) {
    prev_logits = cell.head(g, H0);
    have_logits = true;
  }
  auto H = H0;
  typename Graph<T>::Val loss{};
  bool have_loss = false;
  std::vector<int> fed(static_cast<size_t>(B));
  for (int j = 1; j <= jmax; ++j) {
    const T* prev = have_logits ? g.value(prev_logits).data() : nullptr;
    for (int r = 0; r < B; ++r) {
      const Seq& s = *targets[static_cast<size_t>(r)];
      const int L = static_cast<int>(s.size());
      int tok;
      if (j > L) {
        tok = task.pad_token();
      } else if (mode == DecodeMode::NoInput) {
        tok = task.pad_token();
      } else if (fb == Feedback::TeacherForced && j >= 2) {
        tok = s[static_cast<size_t>(j - 2)];
      } else {
        tok = masked_argmax_row(prev + static_cast<int64_t>(r) * task.vocab(),
                                task.n_symbols);
      }
      fed[static_cast<size_t>(r)] = tok;
    }
    H = cell.step(g, H, fed);
    auto logits = cell.head(g, H);
    prev_logits = logits;
    have_logits = true;
    std::vector<int> tg(static_cast<size_t>(B), 0);
    std::vector<uint8_t> mask(static_cast<size_t>(B), 0);
    for (int r = 0; r < B; ++r) {
      const Seq& s = *targets[static_cast<size_t>(r)];
      if (j <= static_cast<int>(s.size())) {
        tg[static_cast<size_t>(r)] = s[static_cast<size_t>(j - 1)];
        mask[static_cast<size_t>(r)] = 1;
      }
    }
    auto lp = g.log_softmax_rows(logits);
    auto step_loss =
        g.masked_nll(lp, std::move(tg), std::move(mask), static_cast<double>(norm));
    loss = have_loss ? g.add(loss, step_loss) : step_loss;
    have_loss = true;
  }
  return loss;
}

// --------------------------------------------------------- fast evaluation ----
struct EncodeOutput {
  TensorF boundary;             // [B x n], state after the trigger token
  std::vector<TensorF> traces;  // optional, per row: [n x (L+1)] update gates
};

EncodeOutput encode_batch(const GruParams& p, const std::vector<const Seq*>& seqs,
                          bool want_traces = false);
std::vector<Seq> decode_batch(const GruParams& p, const TensorF& h0,
                              const std::vector<int>& lens, DecodeMode mode);
std::vector<Seq> run_batch(const GruParams& p, const std::vector<const Seq*>& seqs,
                           DecodeMode mode);
double exact_match(const GruParams& p, const Corpus& c, DecodeMode mode,
                   int64_t limit = -1);

// Single-example wrappers.
std::pair<TensorF, TensorF> gru_step(const GruParams& p, const TensorF& h,
                                     int token);  // {h', z}
struct SingleEncode {
  TensorF h;      // [n]
  TensorF trace;  // [n x (L+1)]
};
SingleEncode encode(const GruParams& p, const Seq& tokens);
Seq decode(const GruParams& p, const TensorF& h, int length, DecodeMode mode);
double sequence_loss(GruParams& p, const RepeatExample& ex, DecodeMode mode,
                     Feedback fb);

// ------------------------------------------------------------ checkpoints ----
void save_checkpoint(const std::string& path, const GruParams& p, Json extra);
struct LoadedCheckpoint {
  GruParams params;
  Json meta;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Hash of all weight bytes in declared array order (frozen-weight assertions).
std::string weights_hash(const GruParams& p);

}  // namespace onionlab
