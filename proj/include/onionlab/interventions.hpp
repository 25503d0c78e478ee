// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "onionlab/gru.hpp"
#include "onionlab/optim.hpp"
#include "onionlab/taskgen.hpp"
#include "onionlab/trainer.hpp"

namespace onionlab {

// ------------------------------------------------------ subspace exchange ----
// Learned interchange on the boundary state: rotate, overwrite the rotated
// coordinates assigned to the exchanged position variables with the source
// run's values, rotate back. The assignment of neurons to variables is a
// one-hot-per-row matrix sampled with hard Gumbel-softmax during training and
// taken as the argmax at evaluation. Variable 0 means "unassigned".
enum class DasGranularity { Unigram, Bigram };

const char* to_string(DasGranularity g);

struct DasParams {
  DasGranularity granularity = DasGranularity::Unigram;
  int n = 0;
  int n_vars = 0;  // position variables: l_max, or l_max-1 for pair variables
  ParamStore<float> store;
  Parameter<float>* skew = nullptr;    // [n x n], rotation via the Cayley map
  Parameter<float>* logits = nullptr;  // [n x (n_vars+1)]

  void build(const TaskConfig& task, int hidden, DasGranularity g);
  TensorF rotation() const;
  // Argmax variable id per neuron, 0 for unassigned.
  std::vector<int> hard_assignment() const;
};

// Pair variables covering an edit at 1-based position j in a length-len
// sequence: {j-1, j} clipped to the valid pair range [1, len-1].
std::vector<int> bigram_variables_for_position(int j, int len);

// Variable set of a counterfactual example under the given granularity.
std::vector<int> das_variables_for(const CounterfactualExample& ex,
                                   DasGranularity g);

// Deterministic-assignment replacement of a single state. An empty variable
// set returns h_base bitwise unchanged (no rotation roundtrip).
TensorF subspace_replace(const DasParams& das, const TensorF& h_base,
                         const TensorF& h_source,
                         const std::vector<int>& variables);

struct DasTrainConfig {
  int steps = 10000;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 0.1;
  uint64_t seed = 0;
  int eval_every = 1000;
  DecodeMode mode = DecodeMode::Autoregressive;  // frozen model's native mode
};

struct DasOutcome {
  DasParams das;
  std::vector<RunRecord> records;  // eval_accuracy = intervention accuracy
  double final_accuracy = 0;
};

// Counterfactual sequences are drawn online from cfg.seed's data stream;
// gradients flow only into the rotation and assignment parameters (the GRU is
// marked frozen on entry). Decode-phase feedback is teacher-forced for
// gradient flow; evaluation decodes natively.
DasOutcome train_das(GruParams& frozen, DasGranularity g,
                     const DasTrainConfig& cfg,
                     const std::vector<CounterfactualExample>* eval_set,
                     const MetricSink& sink);

double eval_das(const GruParams& frozen, const DasParams& das,
                const std::vector<CounterfactualExample>& set,
                DecodeMode mode);

std::vector<CounterfactualExample> make_counterfactual_set(
    const TaskConfig& task, DasGranularity g, int count, Rng& rng);

void save_das(const std::string& path, const DasParams& das, Json extra);
DasParams load_das(const std::string& path);

// ------------------------------------------------ scaled-embedding edits ----
// Additive intervention replacing the token at position j directly in the
// state: h' = h + s(j) .* (E'[new] - E'[old]) with the position scale law
// s(j) = g .* gamma^j + beta * j + b.
enum class OnionConstraint { Free, FixedGammaBetaOne };

const char* to_string(OnionConstraint c);

struct OnionParams {
  int n = 0;
  int n_symbols = 0;
  ParamStore<float> store;
  Parameter<float>* emb = nullptr;    // [n_symbols x n]
  Parameter<float>* g = nullptr;      // [n]
  Parameter<float>* gamma = nullptr;  // [n]
  Parameter<float>* beta = nullptr;   // [n]
  Parameter<float>* b = nullptr;      // [n]

  void build(const TaskConfig& task, int hidden);
  void init(Rng& rng);  // E' ~ normal(0, 1/sqrt(n)); g=1, gamma=0.5, beta=b=0
  void apply_constraint(OnionConstraint c);
};

TensorF onion_scale(const OnionParams& op, int j);
TensorF onion_intervene(const OnionParams& op, const TensorF& h,
                        const OnionEditExample& edit);

struct OnionTrainConfig {
  int steps = 10000;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 0.1;
  uint64_t seed = 0;
  int eval_every = 1000;
  DecodeMode mode = DecodeMode::Autoregressive;
};

struct OnionOutcome {
  OnionParams op;
  std::vector<RunRecord> records;
  double final_accuracy = 0;
  bool gamma_went_negative = false;  // reported, not clamped
};

OnionOutcome train_onion(GruParams& frozen, const OnionTrainConfig& cfg,
                         OnionConstraint constraint,
                         const std::vector<OnionEditExample>* eval_set,
                         const MetricSink& sink);

double eval_onion(const GruParams& frozen, const OnionParams& op,
                  const std::vector<OnionEditExample>& set, DecodeMode mode);

// Edits of corpus sequences (cycled if count exceeds the corpus).
std::vector<OnionEditExample> make_edit_set(const TaskConfig& task,
                                            const Corpus& from, int count,
                                            Rng& rng);

void save_onion(const std::string& path, const OnionParams& op, Json extra);
OnionParams load_onion(const std::string& path);

}  // namespace onionlab
