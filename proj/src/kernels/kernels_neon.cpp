// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// NEON kernel variants for aarch64. Matrix and elementwise paths are
// vectorized; transcendentals call the scalar reference per element (libm on
// aarch64 is fast enough that the polynomial trick buys little there).
#include "onionlab/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

namespace onionlab::kern {
namespace {

inline float sum4(float32x4_t v) { return vaddvq_f32(v); }

void gemm_acc(float* C, const float* A, const float* B, int M, int K, int N) {
  const int n8 = N & ~7;
  for (int i = 0; i < M; ++i) {
    float* c = C + static_cast<size_t>(i) * N;
    const float* a = A + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const float32x4_t av = vdupq_n_f32(a[k]);
      const float* b = B + static_cast<size_t>(k) * N;
      int j = 0;
      for (; j < n8; j += 8) {
        vst1q_f32(c + j, vfmaq_f32(vld1q_f32(c + j), av, vld1q_f32(b + j)));
        vst1q_f32(c + j + 4,
                  vfmaq_f32(vld1q_f32(c + j + 4), av, vld1q_f32(b + j + 4)));
      }
      for (; j < N; ++j) c[j] += a[k] * b[j];
    }
  }
}

void gemm_acc_bt(float* C, const float* A, const float* B, int M, int K, int N) {
  const int k4 = K & ~3;
  for (int i = 0; i < M; ++i) {
    const float* a = A + static_cast<size_t>(i) * K;
    float* c = C + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const float* b = B + static_cast<size_t>(j) * K;
      float32x4_t s = vdupq_n_f32(0.0f);
      for (int k = 0; k < k4; k += 4)
        s = vfmaq_f32(s, vld1q_f32(a + k), vld1q_f32(b + k));
      float r = sum4(s);
      for (int k = k4; k < K; ++k) r += a[k] * b[k];
      c[j] += r;
    }
  }
}

void gemm_acc_at(float* C, const float* A, const float* B, int M, int K, int N) {
  const int n4 = N & ~3;
  for (int k = 0; k < K; ++k) {
    const float* a = A + static_cast<size_t>(k) * M;
    const float* b = B + static_cast<size_t>(k) * N;
    for (int m = 0; m < M; ++m) {
      const float av = a[m];
      if (av == 0.0f) continue;
      float* c = C + static_cast<size_t>(m) * N;
      const float32x4_t avv = vdupq_n_f32(av);
      int j = 0;
      for (; j < n4; j += 4)
        vst1q_f32(c + j, vfmaq_f32(vld1q_f32(c + j), avv, vld1q_f32(b + j)));
      for (; j < N; ++j) c[j] += av * b[j];
    }
  }
}

void add(float* z, const float* x, const float* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(z + i, vaddq_f32(vld1q_f32(x + i), vld1q_f32(y + i)));
  for (; i < n; ++i) z[i] = x[i] + y[i];
}
void sub(float* z, const float* x, const float* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(z + i, vsubq_f32(vld1q_f32(x + i), vld1q_f32(y + i)));
  for (; i < n; ++i) z[i] = x[i] - y[i];
}
void mul(float* z, const float* x, const float* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(z + i, vmulq_f32(vld1q_f32(x + i), vld1q_f32(y + i)));
  for (; i < n; ++i) z[i] = x[i] * y[i];
}
void mul_acc(float* z, const float* x, const float* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(z + i, vfmaq_f32(vld1q_f32(z + i), vld1q_f32(x + i), vld1q_f32(y + i)));
  for (; i < n; ++i) z[i] += x[i] * y[i];
}
void axpy(float* y, float a, const float* x, size_t n) {
  const float32x4_t av = vdupq_n_f32(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), av, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}
void scale(float* y, float a, const float* x, size_t n) {
  const float32x4_t av = vdupq_n_f32(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmulq_f32(av, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] = a * x[i];
}

void sigmoid_grad_acc(float* dx, const float* dy, const float* y, size_t n) {
  const float32x4_t one = vdupq_n_f32(1.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t yv = vld1q_f32(y + i);
    const float32x4_t g = vmulq_f32(yv, vsubq_f32(one, yv));
    vst1q_f32(dx + i, vfmaq_f32(vld1q_f32(dx + i), vld1q_f32(dy + i), g));
  }
  for (; i < n; ++i) dx[i] += dy[i] * y[i] * (1.0f - y[i]);
}
void tanh_grad_acc(float* dx, const float* dy, const float* y, size_t n) {
  const float32x4_t one = vdupq_n_f32(1.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t yv = vld1q_f32(y + i);
    const float32x4_t g = vsubq_f32(one, vmulq_f32(yv, yv));
    vst1q_f32(dx + i, vfmaq_f32(vld1q_f32(dx + i), vld1q_f32(dy + i), g));
  }
  for (; i < n; ++i) dx[i] += dy[i] * (1.0f - y[i] * y[i]);
}

float vsum(const float* x, size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(x + i));
  float s = sum4(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}
float vdot(const float* x, const float* y, size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = vfmaq_f32(acc, vld1q_f32(x + i), vld1q_f32(y + i));
  float s = sum4(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void sigmoid(float* y, const float* x, size_t n) { ref::sigmoid(y, x, n); }
void tanh_v(float* y, const float* x, size_t n) { ref::tanh_(y, x, n); }
void softmax_rows(float* Y, const float* X, int rows, int cols) {
  ref::softmax_rows(Y, X, rows, cols);
}
void log_softmax_rows(float* Y, const float* X, int rows, int cols) {
  ref::log_softmax_rows(Y, X, rows, cols);
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable t = {
      "neon",
      gemm_acc, gemm_acc_bt, gemm_acc_at,
      add, sub, mul, mul_acc, axpy, scale,
      sigmoid, tanh_v, sigmoid_grad_acc, tanh_grad_acc,
      softmax_rows, log_softmax_rows,
      vsum, vdot,
  };
  return &t;
}

}  // namespace onionlab::kern

#else

namespace onionlab::kern {
const KernelTable* neon_table() { return nullptr; }
}  // namespace onionlab::kern

#endif
