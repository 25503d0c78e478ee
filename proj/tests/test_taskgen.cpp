// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Generator contracts: distributional properties of sampled sequences,
// corpus disjointness, and the structural invariants of counterfactual and
// edit examples that every intervention run relies on.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "onionlab/errors.hpp"
#include "onionlab/taskgen.hpp"

using namespace onionlab;

TEST_CASE("lengths are uniform and symbols unbiased") {
  TaskConfig cfg;
  Rng rng(1001);
  const int64_t n = 100'000;
  std::vector<int64_t> len_count(static_cast<size_t>(cfg.l_max) + 1, 0);
  std::vector<int64_t> tok_count(static_cast<size_t>(cfg.n_symbols), 0);
  int64_t tok_total = 0;
  for (int64_t i = 0; i < n; ++i) {
    RepeatExample ex = sample_repeat_example(cfg, rng);
    REQUIRE(ex.length() >= 1);
    REQUIRE(ex.length() <= cfg.l_max);
    ++len_count[static_cast<size_t>(ex.length())];
    for (uint8_t t : ex.tokens) {
      REQUIRE(t < cfg.n_symbols);
      ++tok_count[t];
      ++tok_total;
    }
  }
  // Each length bin within 3 sigma of 1/9.
  const double p = 1.0 / cfg.l_max;
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
  for (int l = 1; l <= cfg.l_max; ++l) {
    const double freq = static_cast<double>(len_count[static_cast<size_t>(l)]) / n;
    CAPTURE(l);
    CHECK(std::abs(freq - p) < 3 * sigma);
  }
  // Chi-square uniformity of token marginals, alpha = 0.001, 29 dof.
  const double expect = static_cast<double>(tok_total) / cfg.n_symbols;
  double chi2 = 0;
  for (int64_t c : tok_count) {
    const double d = static_cast<double>(c) - expect;
    chi2 += d * d / expect;
  }
  CHECK(chi2 < 58.3012);
}

TEST_CASE("forced length configuration") {
  TaskConfig cfg;
  cfg.l_max = 1;
  Rng rng(5);
  for (int i = 0; i < 50; ++i)
    CHECK(sample_repeat_example(cfg, rng).length() == 1);
}

TEST_CASE("sequence space size counts all lengths and saturates") {
  TaskConfig small;
  small.n_symbols = 2;
  small.l_max = 3;
  CHECK(sequence_space_size(small) == 2 + 4 + 8);

  TaskConfig dflt;
  int64_t want = 0, pw = 1;
  for (int l = 1; l <= dflt.l_max; ++l) {
    pw *= dflt.n_symbols;
    want += pw;
  }
  CHECK(sequence_space_size(dflt) == want);

  TaskConfig huge;
  huge.n_symbols = 30;
  huge.l_max = 50;
  CHECK(sequence_space_size(huge) == std::numeric_limits<int64_t>::max());
}

TEST_CASE("corpus generation is sized, deterministic, and disjoint") {
  TaskConfig cfg;
  Rng rng(2024);
  Corpus train = build_corpus(cfg, 2000, rng);
  CHECK(train.size() == 2000);

  Rng rng2(2024);
  Corpus again = build_corpus(cfg, 2000, rng2);
  REQUIRE(again.size() == train.size());
  for (int64_t i = 0; i < train.size(); ++i)
    CHECK(train.seqs[static_cast<size_t>(i)] == again.seqs[static_cast<size_t>(i)]);

  Corpus test = build_corpus(cfg, 1000, rng, &train);
  std::set<Seq> train_set(train.seqs.begin(), train.seqs.end());
  for (const Seq& s : test.seqs) CHECK(train_set.count(s) == 0);
}

TEST_CASE("corpus generation fails loudly when the space is exhausted") {
  TaskConfig tiny;
  tiny.n_symbols = 2;
  tiny.l_max = 1;
  Corpus avoid;
  avoid.seqs = {{0}, {1}};
  Rng rng(3);
  CHECK_THROWS_AS(build_corpus(tiny, 1, rng, &avoid), GenerationError);
}

TEST_CASE("unigram counterfactual invariants") {
  TaskConfig cfg;
  Rng rng(4242);
  int64_t full_len_draws = 0;
  double sum_positions = 0;
  int64_t draws = 0;
  while (full_len_draws < 10'000) {
    CounterfactualExample ex = make_unigram_counterfactual(cfg, rng);
    ++draws;
    const int L = ex.length();
    REQUIRE(L >= 1);
    REQUIRE(L <= cfg.l_max);
    REQUIRE(ex.base.size() == ex.target.size());
    REQUIRE(ex.source.size() == ex.target.size());
    REQUIRE(!ex.positions.empty());
    REQUIRE(std::is_sorted(ex.positions.begin(), ex.positions.end()));
    REQUIRE(ex.positions.front() >= 1);
    REQUIRE(ex.positions.back() <= L);
    std::vector<bool> in_set(static_cast<size_t>(L) + 1, false);
    for (int j : ex.positions) in_set[static_cast<size_t>(j)] = true;
    for (int j = 1; j <= L; ++j) {
      if (in_set[static_cast<size_t>(j)]) {
        // Patching these variables from source must reconstruct the target.
        REQUIRE(ex.source[static_cast<size_t>(j - 1)] ==
                ex.target[static_cast<size_t>(j - 1)]);
      } else {
        REQUIRE(ex.base[static_cast<size_t>(j - 1)] ==
                ex.target[static_cast<size_t>(j - 1)]);
      }
    }
    if (L == cfg.l_max) {
      ++full_len_draws;
      sum_positions += static_cast<double>(ex.positions.size());
    }
  }
  // |I| ~ Binomial(9, 1/2) truncated at zero: mean 4.5/(1 - 2^-9), and the
  // 10K-draw standard error of the mean is 0.014882.
  const double mean = sum_positions / static_cast<double>(full_len_draws);
  CHECK(std::abs(mean - 4.50881) < 3 * 0.014882);
}

TEST_CASE("bigram counterfactual invariants") {
  TaskConfig cfg;
  Rng rng(515);
  for (int i = 0; i < 10'000; ++i) {
    CounterfactualExample ex = make_bigram_counterfactual(cfg, rng);
    const int L = ex.length();
    REQUIRE(L >= 2);
    REQUIRE(L <= cfg.l_max);
    REQUIRE(ex.positions.size() == 1);
    const int j = ex.positions[0];
    REQUIRE(j >= 1);
    REQUIRE(j <= L);
    // Base differs from the target at j and nowhere else.
    for (int k = 1; k <= L; ++k) {
      if (k == j) {
        REQUIRE(ex.base[static_cast<size_t>(k - 1)] !=
                ex.target[static_cast<size_t>(k - 1)]);
      } else {
        REQUIRE(ex.base[static_cast<size_t>(k - 1)] ==
                ex.target[static_cast<size_t>(k - 1)]);
      }
    }
    // Source agrees with the target on the swapped token and both in-range
    // neighbours, keeping the affected pair variables consistent.
    REQUIRE(ex.source[static_cast<size_t>(j - 1)] ==
            ex.target[static_cast<size_t>(j - 1)]);
    if (j >= 2)
      REQUIRE(ex.source[static_cast<size_t>(j - 2)] ==
              ex.target[static_cast<size_t>(j - 2)]);
    if (j < L)
      REQUIRE(ex.source[static_cast<size_t>(j)] ==
              ex.target[static_cast<size_t>(j)]);
  }
}

TEST_CASE("bigram counterfactual rejects degenerate configurations") {
  Rng rng(1);
  TaskConfig one_len;
  one_len.l_max = 1;
  CHECK_THROWS_AS(make_bigram_counterfactual(one_len, rng), ContractError);
  TaskConfig one_sym;
  one_sym.n_symbols = 1;
  CHECK_THROWS_AS(make_bigram_counterfactual(one_sym, rng), ContractError);
}

TEST_CASE("single token edits differ exactly at the chosen position") {
  TaskConfig cfg;
  Rng rng(99);
  for (int i = 0; i < 2000; ++i) {
    RepeatExample base = sample_repeat_example(cfg, rng);
    OnionEditExample ex = make_onion_edit(cfg, base.tokens, rng);
    REQUIRE(ex.pos >= 1);
    REQUIRE(ex.pos <= base.length());
    REQUIRE(ex.seq == base.tokens);
    REQUIRE(ex.edited.size() == base.tokens.size());
    REQUIRE(ex.new_token != base.tokens[static_cast<size_t>(ex.pos - 1)]);
    REQUIRE(ex.new_token >= 0);
    REQUIRE(ex.new_token < cfg.n_symbols);
    for (size_t k = 0; k < ex.edited.size(); ++k) {
      if (static_cast<int>(k) == ex.pos - 1) {
        REQUIRE(ex.edited[k] == static_cast<uint8_t>(ex.new_token));
      } else {
        REQUIRE(ex.edited[k] == base.tokens[k]);
      }
    }
  }
  CHECK_THROWS_AS(make_onion_edit(cfg, Seq{}, rng), ContractError);
}
