// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#include "onionlab/taskgen.hpp"

#include <limits>
#include <string>
#include <unordered_set>

#include "onionlab/errors.hpp"

namespace onionlab {

namespace {

std::string key_of(const Seq& s) {
  return std::string(reinterpret_cast<const char*>(s.data()), s.size());
}

Seq random_seq(const TaskConfig& cfg, int len, Rng& rng) {
  Seq s(static_cast<size_t>(len));
  for (auto& t : s)
    t = static_cast<uint8_t>(rng.bounded(static_cast<uint64_t>(cfg.n_symbols)));
  return s;
}

}  // namespace

RepeatExample sample_repeat_example(const TaskConfig& cfg, Rng& rng) {
  if (cfg.n_symbols < 1 || cfg.l_max < 1)
    throw ContractError("sample_repeat_example: degenerate task config");
  const int len =
      1 + static_cast<int>(rng.bounded(static_cast<uint64_t>(cfg.l_max)));
  return RepeatExample{random_seq(cfg, len, rng)};
}

int64_t sequence_space_size(const TaskConfig& cfg) {
  const int64_t cap = std::numeric_limits<int64_t>::max();
  int64_t total = 0;
  int64_t pow = 1;
  for (int l = 1; l <= cfg.l_max; ++l) {
    if (pow > cap / cfg.n_symbols) return cap;
    pow *= cfg.n_symbols;
    if (total > cap - pow) return cap;
    total += pow;
  }
  return total;
}

Corpus build_corpus(const TaskConfig& cfg, int64_t count, Rng& rng,
                    const Corpus* avoid) {
  std::unordered_set<std::string> banned;
  if (avoid)
    for (const auto& s : avoid->seqs) banned.insert(key_of(s));

  const int64_t space = sequence_space_size(cfg);
  if (static_cast<int64_t>(banned.size()) >= space && count > 0)
    throw GenerationError(
        "build_corpus: sequence space exhausted (space size " +
        std::to_string(space) + ", all excluded)");

  Corpus out;
  out.seqs.reserve(static_cast<size_t>(count));
  const int64_t attempt_cap = 100'000;
  for (int64_t i = 0; i < count; ++i) {
    int64_t attempts = 0;
    for (;;) {
      RepeatExample ex = sample_repeat_example(cfg, rng);
      if (banned.empty() || !banned.count(key_of(ex.tokens))) {
        out.seqs.push_back(std::move(ex.tokens));
        break;
      }
      if (++attempts >= attempt_cap)
        throw GenerationError(
            "build_corpus: sequence space exhausted after " +
            std::to_string(attempts) + " rejections at item " +
            std::to_string(i));
    }
  }
  return out;
}

CounterfactualExample make_unigram_counterfactual(const TaskConfig& cfg,
                                                  Rng& rng) {
  CounterfactualExample ex;
  const int len =
      1 + static_cast<int>(rng.bounded(static_cast<uint64_t>(cfg.l_max)));
  ex.target = random_seq(cfg, len, rng);
  // Non-empty subset: coin per position, resample until at least one.
  for (;;) {
    ex.positions.clear();
    for (int j = 1; j <= len; ++j)
      if (rng.bounded(2) == 1) ex.positions.push_back(j);
    if (!ex.positions.empty()) break;
  }
  ex.base = ex.target;
  ex.source = random_seq(cfg, len, rng);
  for (int j : ex.positions) {
    ex.base[static_cast<size_t>(j - 1)] =
        static_cast<uint8_t>(rng.bounded(static_cast<uint64_t>(cfg.n_symbols)));
    ex.source[static_cast<size_t>(j - 1)] = ex.target[static_cast<size_t>(j - 1)];
  }
  return ex;
}

CounterfactualExample make_bigram_counterfactual(const TaskConfig& cfg,
                                                 Rng& rng) {
  if (cfg.l_max < 2)
    throw ContractError("make_bigram_counterfactual: needs l_max >= 2");
  if (cfg.n_symbols < 2)
    throw ContractError("make_bigram_counterfactual: needs n_symbols >= 2");
  CounterfactualExample ex;
  const int len =
      2 + static_cast<int>(rng.bounded(static_cast<uint64_t>(cfg.l_max - 1)));
  ex.target = random_seq(cfg, len, rng);
  const int j =
      1 + static_cast<int>(rng.bounded(static_cast<uint64_t>(len)));
  ex.positions = {j};
  ex.base = ex.target;
  // Base differs from the target exactly at j.
  for (;;) {
    const uint8_t t = static_cast<uint8_t>(
        rng.bounded(static_cast<uint64_t>(cfg.n_symbols)));
    if (t != ex.target[static_cast<size_t>(j - 1)]) {
      ex.base[static_cast<size_t>(j - 1)] = t;
      break;
    }
  }
  ex.source = random_seq(cfg, len, rng);
  ex.source[static_cast<size_t>(j - 1)] = ex.target[static_cast<size_t>(j - 1)];
  if (j - 2 >= 0)
    ex.source[static_cast<size_t>(j - 2)] = ex.target[static_cast<size_t>(j - 2)];
  if (j < len)
    ex.source[static_cast<size_t>(j)] = ex.target[static_cast<size_t>(j)];
  return ex;
}

OnionEditExample make_onion_edit(const TaskConfig& cfg, const Seq& seq,
                                 Rng& rng) {
  if (seq.empty()) throw ContractError("make_onion_edit: empty sequence");
  if (cfg.n_symbols < 2)
    throw ContractError("make_onion_edit: needs n_symbols >= 2");
  OnionEditExample ex;
  ex.seq = seq;
  ex.pos = 1 + static_cast<int>(rng.bounded(seq.size()));
  for (;;) {
    const int t =
        static_cast<int>(rng.bounded(static_cast<uint64_t>(cfg.n_symbols)));
    if (t != seq[static_cast<size_t>(ex.pos - 1)]) {
      ex.new_token = t;
      break;
    }
  }
  ex.edited = seq;
  ex.edited[static_cast<size_t>(ex.pos - 1)] = static_cast<uint8_t>(ex.new_token);
  return ex;
}

}  // namespace onionlab
