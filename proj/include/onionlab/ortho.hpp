// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "onionlab/graph.hpp"
#include "onionlab/linalg.hpp"

namespace onionlab {

// Cayley map from an unconstrained square parameter P to a rotation:
//   S = (P - P^T) / 2            (skew-symmetric projection)
//   R = (I - S) (I + S)^{-1}
// R is orthogonal with det +1 for any finite S; I + S is singular only
// through numeric blowup, in which case the map is retried with S scaled
// down before giving up.
template <typename T>
typename Graph<T>::Val orthogonalize(Graph<T>& g, typename Graph<T>::Val p) {
  const Tensor<T>& P = g.value(p);
  if (P.rank() != 2 || P.rows() != P.cols())
    throw ContractError("orthogonalize: square parameter required");
  const int64_t n = P.rows();
  double shrink = 1.0;
  for (int attempt = 0; attempt < 4; ++attempt, shrink *= 0.5) {
    try {
      auto s = g.scale(g.sub(p, g.transpose(p)), 0.5 * shrink);
      auto i = g.input(make_identity<T>(n));
      return g.matmul(g.sub(i, s), g.inverse(g.add(i, s)));
    } catch (const NumericError&) {
      continue;
    }
  }
  throw NumericError("orthogonalize: inverse failed after retries");
}

// Tape-free version for evaluation paths.
template <typename T>
Tensor<T> cayley_rotation(const Tensor<T>& P) {
  if (P.rank() != 2 || P.rows() != P.cols())
    throw ContractError("cayley_rotation: square matrix required");
  const int64_t n = P.rows();
  double shrink = 1.0;
  for (int attempt = 0; attempt < 4; ++attempt, shrink *= 0.5) {
    try {
      Tensor<T> S({n, n});
      for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < n; ++c)
          S.at(r, c) = static_cast<T>((P.at(r, c) - P.at(c, r)) * 0.5 * shrink);
      Tensor<T> IpS = make_identity<T>(n);
      Tensor<T> ImS = make_identity<T>(n);
      for (int64_t i = 0; i < n * n; ++i) {
        IpS[i] += S[i];
        ImS[i] -= S[i];
      }
      lu_invert_inplace(IpS);
      Tensor<T> R({n, n});
      kern::gemm_acc(R.data(), ImS.data(), IpS.data(), static_cast<int>(n),
                     static_cast<int>(n), static_cast<int>(n));
      return R;
    } catch (const NumericError&) {
      continue;
    }
  }
  throw NumericError("cayley_rotation: inverse failed after retries");
}

}  // namespace onionlab
