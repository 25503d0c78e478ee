// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace onionlab {

// xoshiro256++ with splitmix64 seed expansion.
//
// Streams: next_u64 is the raw generator output. Derived draws are defined
// exactly as follows (frozen by tests, do not change):
//   uniform():      (next_u64() >> 11) * 2^-53                in [0,1)
//   open_unit():    ((next_u64() >> 11) + 0.5) * 2^-53        in (0,1)
//   bounded(n):     Lemire's unbiased method (multiply-shift with rejection)
//   normal():       Box-Muller on two open_unit() draws; second value cached
//   gumbel():       -log(-log(open_unit()))
//   fork(id):       child seeded with the (id+1)-th output of a fresh
//                   splitmix64 sequence started at this generator's seed
// fork() depends only on the construction seed, not on how many numbers have
// been drawn, so stream derivation is order-independent.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t seed() const { return seed_; }
  uint64_t next_u64();
  // Uniform integer in [0, n), n >= 1.
  uint64_t bounded(uint64_t n);
  double uniform();                       // [0,1)
  double uniform(double a, double b);     // [a,b)
  double open_unit();                     // (0,1)
  double normal();                        // standard normal
  double normal(double mean, double stddev);
  double gumbel();                        // standard Gumbel(0,1)
  Rng fork(uint64_t id) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t seed_;
  uint64_t s_[4];
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// Seed expansion helper, also used for content-hash mixing.
uint64_t splitmix64_next(uint64_t& state);

// Conventional fork ids so every run derives the same independent streams
// from one top-level seed.
inline constexpr uint64_t kStreamInit = 0;    // parameter initialization
inline constexpr uint64_t kStreamBatch = 1;   // batch index sampling
inline constexpr uint64_t kStreamData = 2;    // example/counterfactual draws
inline constexpr uint64_t kStreamGumbel = 3;  // assignment sampling
inline constexpr uint64_t kStreamMisc = 4;

}  // namespace onionlab
