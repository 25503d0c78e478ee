// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#include "onionlab/kernels.hpp"

namespace onionlab::kern {

// Scalar float table: thin wrappers over the reference templates.
namespace {

void f_gemm_acc(float* C, const float* A, const float* B, int M, int K, int N) {
  ref::gemm_acc(C, A, B, M, K, N);
}
void f_gemm_acc_bt(float* C, const float* A, const float* B, int M, int K, int N) {
  ref::gemm_acc_bt(C, A, B, M, K, N);
}
void f_gemm_acc_at(float* C, const float* A, const float* B, int M, int K, int N) {
  ref::gemm_acc_at(C, A, B, M, K, N);
}
void f_add(float* z, const float* x, const float* y, size_t n) { ref::add(z, x, y, n); }
void f_sub(float* z, const float* x, const float* y, size_t n) { ref::sub(z, x, y, n); }
void f_mul(float* z, const float* x, const float* y, size_t n) { ref::mul(z, x, y, n); }
void f_mul_acc(float* z, const float* x, const float* y, size_t n) { ref::mul_acc(z, x, y, n); }
void f_axpy(float* y, float a, const float* x, size_t n) { ref::axpy(y, a, x, n); }
void f_scale(float* y, float a, const float* x, size_t n) { ref::scale(y, a, x, n); }
void f_sigmoid(float* y, const float* x, size_t n) { ref::sigmoid(y, x, n); }
void f_tanh(float* y, const float* x, size_t n) { ref::tanh_(y, x, n); }
void f_sigmoid_grad_acc(float* dx, const float* dy, const float* y, size_t n) {
  ref::sigmoid_grad_acc(dx, dy, y, n);
}
void f_tanh_grad_acc(float* dx, const float* dy, const float* y, size_t n) {
  ref::tanh_grad_acc(dx, dy, y, n);
}
void f_softmax_rows(float* Y, const float* X, int rows, int cols) {
  ref::softmax_rows(Y, X, rows, cols);
}
void f_log_softmax_rows(float* Y, const float* X, int rows, int cols) {
  ref::log_softmax_rows(Y, X, rows, cols);
}
float f_sum(const float* x, size_t n) { return ref::sum(x, n); }
float f_dot(const float* x, const float* y, size_t n) { return ref::dot(x, y, n); }

}  // namespace

const KernelTable& ref_table() {
  static const KernelTable t = {
      "scalar",
      f_gemm_acc, f_gemm_acc_bt, f_gemm_acc_at,
      f_add, f_sub, f_mul, f_mul_acc, f_axpy, f_scale,
      f_sigmoid, f_tanh, f_sigmoid_grad_acc, f_tanh_grad_acc,
      f_softmax_rows, f_log_softmax_rows,
      f_sum, f_dot,
  };
  return t;
}

}  // namespace onionlab::kern
