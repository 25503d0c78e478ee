// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "onionlab/errors.hpp"
#include "onionlab/tensor.hpp"

namespace onionlab {

// In-place matrix inverse via LU decomposition with partial pivoting.
// Throws NumericError on a zero (or non-finite) pivot.
template <typename T>
void lu_invert_inplace(Tensor<T>& A) {
  if (A.rank() != 2 || A.rows() != A.cols())
    throw ContractError("lu_invert_inplace: square matrix required");
  const int n = static_cast<int>(A.rows());
  std::vector<int> piv(static_cast<size_t>(n));
  Tensor<T> LU = A;
  for (int i = 0; i < n; ++i) piv[static_cast<size_t>(i)] = i;
  for (int col = 0; col < n; ++col) {
    int p = col;
    T best = std::abs(LU.at(col, col));
    for (int r = col + 1; r < n; ++r) {
      const T v = std::abs(LU.at(r, col));
      if (v > best) {
        best = v;
        p = r;
      }
    }
    if (!(best > T(0)) || !std::isfinite(static_cast<double>(best)))
      throw NumericError("inverse: singular matrix (zero pivot at column " +
                         std::to_string(col) + ")");
    if (p != col) {
      for (int c = 0; c < n; ++c) std::swap(LU.at(col, c), LU.at(p, c));
      std::swap(piv[static_cast<size_t>(col)], piv[static_cast<size_t>(p)]);
    }
    const T inv_p = T(1) / LU.at(col, col);
    for (int r = col + 1; r < n; ++r) {
      const T f = LU.at(r, col) * inv_p;
      LU.at(r, col) = f;
      for (int c = col + 1; c < n; ++c) LU.at(r, c) -= f * LU.at(col, c);
    }
  }
  // Back-substitute one unit vector per output column.
  Tensor<T> Y(A.shape());
  std::vector<T> x(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i)
      x[static_cast<size_t>(i)] = piv[static_cast<size_t>(i)] == j ? T(1) : T(0);
    for (int i = 1; i < n; ++i) {
      T s = x[static_cast<size_t>(i)];
      for (int c = 0; c < i; ++c) s -= LU.at(i, c) * x[static_cast<size_t>(c)];
      x[static_cast<size_t>(i)] = s;
    }
    for (int i = n - 1; i >= 0; --i) {
      T s = x[static_cast<size_t>(i)];
      for (int c = i + 1; c < n; ++c) s -= LU.at(i, c) * x[static_cast<size_t>(c)];
      x[static_cast<size_t>(i)] = s / LU.at(i, i);
    }
    for (int i = 0; i < n; ++i) Y.at(i, j) = x[static_cast<size_t>(i)];
  }
  A = std::move(Y);
}

template <typename T>
Tensor<T> make_identity(int64_t n) {
  Tensor<T> I({n, n});
  for (int64_t i = 0; i < n; ++i) I.at(i, i) = T(1);
  return I;
}

}  // namespace onionlab
