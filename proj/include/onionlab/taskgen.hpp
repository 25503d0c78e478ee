// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "onionlab/rng.hpp"

namespace onionlab {

// Token id layout: symbols 0..n_symbols-1, then the repeat-trigger token,
// then padding. Everything downstream assumes this ordering.
struct TaskConfig {
  int n_symbols = 30;
  int l_max = 9;
  int64_t train_size = 1'000'000;
  int64_t test_size = 5'000;

  int s_token() const { return n_symbols; }
  int pad_token() const { return n_symbols + 1; }
  int vocab() const { return n_symbols + 2; }
};

using Seq = std::vector<uint8_t>;

struct RepeatExample {
  Seq tokens;  // i_1..i_L, symbols only
  int length() const { return static_cast<int>(tokens.size()); }
};

struct Corpus {
  std::vector<Seq> seqs;
  int64_t size() const { return static_cast<int64_t>(seqs.size()); }
};

// Interchange triple: patching the variables at `positions` (1-based) from
// source into base must yield target.
//   base matches target outside `positions`;
//   source matches target on `positions`.
struct CounterfactualExample {
  Seq base;
  Seq source;
  Seq target;
  std::vector<int> positions;  // 1-based, sorted
  int length() const { return static_cast<int>(target.size()); }
};

// Single-token edit of a corpus sequence at 1-based position `pos`.
struct OnionEditExample {
  Seq seq;
  Seq edited;
  int pos = 0;
  int new_token = 0;
};

// Uniform length 1..l_max, symbols uniform with replacement.
RepeatExample sample_repeat_example(const TaskConfig& cfg, Rng& rng);

// Samples `count` sequences, rejecting members of `avoid` (sequence-level
// disjointness). Throws GenerationError when the sequence space cannot
// satisfy the request.
Corpus build_corpus(const TaskConfig& cfg, int64_t count, Rng& rng,
                    const Corpus* avoid = nullptr);

// Number of distinct sequences, saturating at int64 max.
int64_t sequence_space_size(const TaskConfig& cfg);

// Random target; positions are a non-empty uniform subset (each position kept
// with probability 1/2, resampled until non-empty); base resampled uniformly
// on the subset, source matches the target there and is random elsewhere.
CounterfactualExample make_unigram_counterfactual(const TaskConfig& cfg,
                                                  Rng& rng);

// Random target of length >= 2; a single position j with base[j] != target[j];
// source matches the target at j and at its in-range neighbours j-1, j+1
// (so the swapped pair variables stay consistent), random elsewhere.
CounterfactualExample make_bigram_counterfactual(const TaskConfig& cfg,
                                                 Rng& rng);

// Uniform position, replacement token != original.
OnionEditExample make_onion_edit(const TaskConfig& cfg, const Seq& seq,
                                 Rng& rng);

}  // namespace onionlab
