// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <type_traits>

namespace onionlab::kern {

// Flat-loop compute kernels behind the autodiff ops. All matrices are dense
// row-major. gemm variants accumulate into C (callers zero-init when needed):
//   gemm_acc    C[MxN] += A[MxK] * B[KxN]
//   gemm_acc_bt C[MxN] += A[MxK] * B[NxK]^T
//   gemm_acc_at C[MxN] += A[KxM]^T * B[KxN]
struct KernelTable {
  const char* name;
  void (*gemm_acc)(float* C, const float* A, const float* B, int M, int K, int N);
  void (*gemm_acc_bt)(float* C, const float* A, const float* B, int M, int K, int N);
  void (*gemm_acc_at)(float* C, const float* A, const float* B, int M, int K, int N);
  void (*add)(float* z, const float* x, const float* y, size_t n);
  void (*sub)(float* z, const float* x, const float* y, size_t n);
  void (*mul)(float* z, const float* x, const float* y, size_t n);
  void (*mul_acc)(float* z, const float* x, const float* y, size_t n);  // z += x.*y
  void (*axpy)(float* y, float a, const float* x, size_t n);            // y += a*x
  void (*scale)(float* y, float a, const float* x, size_t n);           // y  = a*x
  void (*sigmoid)(float* y, const float* x, size_t n);
  void (*tanh_)(float* y, const float* x, size_t n);
  void (*sigmoid_grad_acc)(float* dx, const float* dy, const float* y, size_t n);
  void (*tanh_grad_acc)(float* dx, const float* dy, const float* y, size_t n);
  void (*softmax_rows)(float* Y, const float* X, int rows, int cols);
  void (*log_softmax_rows)(float* Y, const float* X, int rows, int cols);
  float (*sum)(const float* x, size_t n);
  float (*dot)(const float* x, const float* y, size_t n);
};

// Runtime-selected table. Picks the widest supported instruction set at first
// use; the ONIONLAB_KERNELS env var (scalar|avx2|neon) forces a choice.
const KernelTable& table();

const KernelTable& ref_table();
const KernelTable* avx2_table();  // nullptr if not compiled in or unsupported
const KernelTable* neon_table();

// ------------------------------------------------------- scalar templates --
// Reference implementations, shared by the float scalar table and the double
// path (gradient checks run in double and always use these).
namespace ref {

template <typename T>
void gemm_acc(T* C, const T* A, const T* B, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    T* c = C + static_cast<size_t>(i) * N;
    const T* a = A + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <typename T>
void gemm_acc_bt(T* C, const T* A, const T* B, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<size_t>(i) * K;
    T* c = C + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<size_t>(j) * K;
      T acc = 0;
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

template <typename T>
void gemm_acc_at(T* C, const T* A, const T* B, int M, int K, int N) {
  for (int k = 0; k < K; ++k) {
    const T* a = A + static_cast<size_t>(k) * M;
    const T* b = B + static_cast<size_t>(k) * N;
    for (int m = 0; m < M; ++m) {
      const T av = a[m];
      T* c = C + static_cast<size_t>(m) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <typename T>
void add(T* z, const T* x, const T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}
template <typename T>
void sub(T* z, const T* x, const T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
}
template <typename T>
void mul(T* z, const T* x, const T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}
template <typename T>
void mul_acc(T* z, const T* x, const T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) z[i] += x[i] * y[i];
}
template <typename T>
void axpy(T* y, T a, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
template <typename T>
void scale(T* y, T a, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a * x[i];
}

template <typename T>
void sigmoid(T* y, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
}
template <typename T>
void tanh_(T* y, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}
template <typename T>
void sigmoid_grad_acc(T* dx, const T* dy, const T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
}
template <typename T>
void tanh_grad_acc(T* dx, const T* dy, const T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
}

template <typename T>
void softmax_rows(T* Y, const T* X, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const T* x = X + static_cast<size_t>(r) * cols;
    T* y = Y + static_cast<size_t>(r) * cols;
    T mx = x[0];
    for (int c = 1; c < cols; ++c) mx = x[c] > mx ? x[c] : mx;
    T s = 0;
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      s += y[c];
    }
    const T inv = T(1) / s;
    for (int c = 0; c < cols; ++c) y[c] *= inv;
  }
}

template <typename T>
void log_softmax_rows(T* Y, const T* X, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const T* x = X + static_cast<size_t>(r) * cols;
    T* y = Y + static_cast<size_t>(r) * cols;
    T mx = x[0];
    for (int c = 1; c < cols; ++c) mx = x[c] > mx ? x[c] : mx;
    T s = 0;
    for (int c = 0; c < cols; ++c) s += std::exp(x[c] - mx);
    const T lse = mx + std::log(s);
    for (int c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
}

template <typename T>
T sum(const T* x, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}
template <typename T>
T dot(const T* x, const T* y, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace ref

// ------------------------------------------------- type-generic frontends --
// float goes through the dispatched table, double through the reference
// templates. The autodiff graph calls these.

template <typename T>
inline void gemm_acc(T* C, const T* A, const T* B, int M, int K, int N) {
  if constexpr (std::is_same_v<T, float>) table().gemm_acc(C, A, B, M, K, N);
  else ref::gemm_acc(C, A, B, M, K, N);
}
template <typename T>
inline void gemm_acc_bt(T* C, const T* A, const T* B, int M, int K, int N) {
  if constexpr (std::is_same_v<T, float>) table().gemm_acc_bt(C, A, B, M, K, N);
  else ref::gemm_acc_bt(C, A, B, M, K, N);
}
template <typename T>
inline void gemm_acc_at(T* C, const T* A, const T* B, int M, int K, int N) {
  if constexpr (std::is_same_v<T, float>) table().gemm_acc_at(C, A, B, M, K, N);
  else ref::gemm_acc_at(C, A, B, M, K, N);
}
template <typename T>
inline void add(T* z, const T* x, const T* y, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().add(z, x, y, n);
  else ref::add(z, x, y, n);
}
template <typename T>
inline void sub(T* z, const T* x, const T* y, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().sub(z, x, y, n);
  else ref::sub(z, x, y, n);
}
template <typename T>
inline void mul(T* z, const T* x, const T* y, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().mul(z, x, y, n);
  else ref::mul(z, x, y, n);
}
template <typename T>
inline void mul_acc(T* z, const T* x, const T* y, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().mul_acc(z, x, y, n);
  else ref::mul_acc(z, x, y, n);
}
template <typename T>
inline void axpy(T* y, T a, const T* x, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().axpy(y, a, x, n);
  else ref::axpy(y, a, x, n);
}
template <typename T>
inline void scale(T* y, T a, const T* x, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().scale(y, a, x, n);
  else ref::scale(y, a, x, n);
}
template <typename T>
inline void sigmoid(T* y, const T* x, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().sigmoid(y, x, n);
  else ref::sigmoid(y, x, n);
}
template <typename T>
inline void tanh_(T* y, const T* x, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().tanh_(y, x, n);
  else ref::tanh_(y, x, n);
}
template <typename T>
inline void sigmoid_grad_acc(T* dx, const T* dy, const T* y, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().sigmoid_grad_acc(dx, dy, y, n);
  else ref::sigmoid_grad_acc(dx, dy, y, n);
}
template <typename T>
inline void tanh_grad_acc(T* dx, const T* dy, const T* y, size_t n) {
  if constexpr (std::is_same_v<T, float>) table().tanh_grad_acc(dx, dy, y, n);
  else ref::tanh_grad_acc(dx, dy, y, n);
}
template <typename T>
inline void softmax_rows(T* Y, const T* X, int rows, int cols) {
  if constexpr (std::is_same_v<T, float>) table().softmax_rows(Y, X, rows, cols);
  else ref::softmax_rows(Y, X, rows, cols);
}
template <typename T>
inline void log_softmax_rows(T* Y, const T* X, int rows, int cols) {
  if constexpr (std::is_same_v<T, float>) table().log_softmax_rows(Y, X, rows, cols);
  else ref::log_softmax_rows(Y, X, rows, cols);
}
template <typename T>
inline T sum(const T* x, size_t n) {
  if constexpr (std::is_same_v<T, float>) return table().sum(x, n);
  else return ref::sum(x, n);
}
template <typename T>
inline T dot(const T* x, const T* y, size_t n) {
  if constexpr (std::is_same_v<T, float>) return table().dot(x, y, n);
  else return ref::dot(x, y, n);
}

}  // namespace onionlab::kern
