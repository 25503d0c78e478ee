// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "onionlab/gru.hpp"
#include "onionlab/interventions.hpp"
#include "onionlab/trainer.hpp"

namespace onionlab {

// Probes read the boundary state h produced by a frozen model's encoder and
// try to reproduce the full input sequence.
enum class ProbeKind { Linear, Mlp, GruAr, GruNoInput, Onion };

const char* to_string(ProbeKind k);
ProbeKind probe_kind_from_string(const std::string& s);

// One-shot probes: all L_max position distributions from a single affine (or
// one-hidden-layer) read of the state. Logits are position-major blocks of
// n_symbols columns.
struct FlatProbe {
  ProbeKind kind = ProbeKind::Linear;
  int n = 0, n_symbols = 0, l_max = 0, hidden = 0;  // hidden = 4n for mlp
  ParamStore<float> store;
  Parameter<float>* W1 = nullptr;
  Parameter<float>* b1 = nullptr;
  Parameter<float>* W2 = nullptr;  // mlp only
  Parameter<float>* b2 = nullptr;  // mlp only

  void build(const TaskConfig& task, int hidden_n, ProbeKind k);
  void init(Rng& rng);
};

TensorF flat_probe_logits(const FlatProbe& p, const TensorF& h_rows);
Seq flat_probe_decode(const FlatProbe& p, const TensorF& h, int length);

// Denoising probe: classify the dominant token, subtract its scaled
// embedding, repeat. The classifier is layer-normalized:
//   logits = W2 * relu(LN(h W1 + b1)) + b2
struct OnionProbeParams {
  int n = 0, n_symbols = 0, hidden = 0;
  ParamStore<float> store;
  Parameter<float>* emb = nullptr;    // [n_symbols x n]
  Parameter<float>* g = nullptr;      // scale law, as in the intervention
  Parameter<float>* gamma = nullptr;
  Parameter<float>* beta = nullptr;
  Parameter<float>* b = nullptr;
  Parameter<float>* W1 = nullptr;  // [n x 4n]
  Parameter<float>* b1 = nullptr;
  Parameter<float>* W2 = nullptr;  // [4n x n_symbols]
  Parameter<float>* b2 = nullptr;

  void build(const TaskConfig& task, int hidden_n);
  void init(Rng& rng);
  TensorF scale(int t) const;  // g .* gamma^t + beta*t + b, t >= 1 relative
};

TensorF onion_probe_classify(const OnionProbeParams& p, const TensorF& h_rows);
Seq onion_probe_decode(const OnionProbeParams& p, const TensorF& h, int length);

struct ProbeTrainConfig {
  int steps = 10000;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 0.1;
  uint64_t seed = 0;
  int eval_every = 1000;
  int64_t eval_limit = -1;
};

struct ProbeEval {
  double seq_exact = 0;   // whole sequence correct
  double token_acc = 0;   // per-position accuracy
};

struct ProbeOutcome {
  ProbeKind kind = ProbeKind::Linear;
  std::unique_ptr<FlatProbe> flat;
  std::unique_ptr<GruParams> gru;  // fresh decoder for the GRU probes
  std::unique_ptr<OnionProbeParams> onion;
  std::vector<RunRecord> records;  // eval_accuracy = sequence exact match
  ProbeEval final_eval;
};

// Trains on encodings of train-corpus sequences (or online random sequences
// when train is null). GRU probes are trained teacher-forced and evaluated
// with their native decode (self-fed or PAD-fed); flat and denoising probes
// have no feed. The frozen model is marked non-trainable on entry.
ProbeOutcome train_probe(ProbeKind kind, GruParams& frozen,
                         const ProbeTrainConfig& cfg, const Corpus* train,
                         const MetricSink& sink, const Corpus* test = nullptr);

ProbeEval eval_flat_probe(const GruParams& frozen, const FlatProbe& p,
                          const Corpus& c, int64_t limit = -1);
ProbeEval eval_gru_probe(const GruParams& frozen, const GruParams& dec,
                         DecodeMode probe_mode, const Corpus& c,
                         int64_t limit = -1);
ProbeEval eval_onion_probe(const GruParams& frozen, const OnionProbeParams& p,
                           const Corpus& c, int64_t limit = -1);

void save_flat_probe(const std::string& path, const FlatProbe& p, Json extra);
FlatProbe load_flat_probe(const std::string& path);
void save_gru_probe(const std::string& path, const GruParams& dec,
                    ProbeKind kind, Json extra);
std::pair<GruParams, ProbeKind> load_gru_probe(const std::string& path);
void save_onion_probe(const std::string& path, const OnionProbeParams& p,
                      Json extra);
OnionProbeParams load_onion_probe(const std::string& path);

// ------------------------------------------------------------- featurizer ----
// Splits a state into per-position token embeddings (from the intervention
// table, selected by the denoising probe's predictions) plus a residual.
// Literal keeps the formula whose residual omits position 1 (so the roundtrip
// re-adds that embedding once); Consistent subtracts every position and is an
// exact inverse.
enum class FeaturizerMode { Literal, Consistent };

struct Featurization {
  std::vector<TensorF> f;  // one embedding per position
  TensorF residual;
  Seq predictions;
};

Featurization featurize(const TensorF& h, int length,
                        const OnionProbeParams& probe, const OnionParams& op,
                        FeaturizerMode mode);
TensorF defeaturize(const Featurization& ft, const OnionParams& op);

// Both interchange routes for swapping position j of sequence a to sequence
// b's token: the featurizer route (swap feature j, invert) and the direct
// scaled-embedding addition. The probe_ok flags report whether the probe
// predicted the true token at j for each state; the routes provably agree
// when both hold (Consistent mode).
struct InterchangeResult {
  TensorF featurized_route;
  TensorF direct_route;
  bool probe_ok_a = false;
  bool probe_ok_b = false;
};

InterchangeResult onion_interchange(const OnionParams& op,
                                    const OnionProbeParams& probe,
                                    const TensorF& h_a, const Seq& a_tokens,
                                    const TensorF& h_b, const Seq& b_tokens,
                                    int j, FeaturizerMode mode);

}  // namespace onionlab
