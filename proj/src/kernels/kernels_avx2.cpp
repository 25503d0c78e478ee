// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma on x86; dispatch.cpp performs the runtime cpuid check before
// routing here. Transcendentals use a degree-5 polynomial exp (Cephes
// coefficients); scalar tails reuse the same polynomial so a row is evaluated
// consistently regardless of its length.
#include "onionlab/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cstdint>
#include <cstring>

namespace onionlab::kern {
namespace {

// ----------------------------------------------------------------- exp ----
const float kExpHi = 88.3762626647949f;
const float kExpLo = -88.3762626647949f;
const float kLog2e = 1.44269504088896341f;
const float kC1 = 0.693359375f;
const float kC2 = -2.12194440e-4f;
const float kP0 = 1.9875691500e-4f;
const float kP1 = 1.3981999507e-3f;
const float kP2 = 8.3334519073e-3f;
const float kP3 = 4.1665795894e-2f;
const float kP4 = 1.6666665459e-1f;
const float kP5 = 5.0000001201e-1f;

inline __m256 exp256(__m256 x) {
  x = _mm256_min_ps(x, _mm256_set1_ps(kExpHi));
  x = _mm256_max_ps(x, _mm256_set1_ps(kExpLo));
  __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(kLog2e), _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(kC1), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(kC2), x);
  const __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(kP0);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(kP1));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(kP2));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(kP3));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(kP4));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(kP5));
  y = _mm256_fmadd_ps(y, z, x);
  y = _mm256_add_ps(y, _mm256_set1_ps(1.0f));
  const __m256i n = _mm256_cvtps_epi32(fx);
  const __m256i pow2n =
      _mm256_slli_epi32(_mm256_add_epi32(n, _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2n));
}

inline float exp1(float xf) {
  if (xf > kExpHi) xf = kExpHi;
  if (xf < kExpLo) xf = kExpLo;
  float fx = xf * kLog2e + 0.5f;
  fx = std::floor(fx);
  xf -= fx * kC1;
  xf -= fx * kC2;
  const float z = xf * xf;
  float y = kP0;
  y = y * xf + kP1;
  y = y * xf + kP2;
  y = y * xf + kP3;
  y = y * xf + kP4;
  y = y * xf + kP5;
  y = y * z + xf + 1.0f;
  const int n = static_cast<int>(fx);
  float p;
  const uint32_t bits = static_cast<uint32_t>(n + 127) << 23;
  std::memcpy(&p, &bits, 4);
  return y * p;
}

inline float sum8(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_hadd_ps(s, s);
  s = _mm_hadd_ps(s, s);
  return _mm_cvtss_f32(s);
}

inline float max8(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 m = _mm_max_ps(lo, hi);
  m = _mm_max_ps(m, _mm_movehl_ps(m, m));
  m = _mm_max_ss(m, _mm_shuffle_ps(m, m, 1));
  return _mm_cvtss_f32(m);
}

// ---------------------------------------------------------------- gemm ----
// C[MxN] += A[MxK] * B[KxN]; 4x16 microkernel, 8/1-wide column tails.
void gemm_acc(float* C, const float* A, const float* B, int M, int K, int N) {
  int j = 0;
  for (; j + 16 <= N; j += 16) {
    int i = 0;
    for (; i + 4 <= M; i += 4) {
      float* c0 = C + static_cast<size_t>(i) * N + j;
      float* c1 = c0 + N;
      float* c2 = c1 + N;
      float* c3 = c2 + N;
      __m256 a00 = _mm256_loadu_ps(c0), a01 = _mm256_loadu_ps(c0 + 8);
      __m256 a10 = _mm256_loadu_ps(c1), a11 = _mm256_loadu_ps(c1 + 8);
      __m256 a20 = _mm256_loadu_ps(c2), a21 = _mm256_loadu_ps(c2 + 8);
      __m256 a30 = _mm256_loadu_ps(c3), a31 = _mm256_loadu_ps(c3 + 8);
      const float* ar0 = A + static_cast<size_t>(i) * K;
      const float* ar1 = ar0 + K;
      const float* ar2 = ar1 + K;
      const float* ar3 = ar2 + K;
      for (int k = 0; k < K; ++k) {
        const float* b = B + static_cast<size_t>(k) * N + j;
        const __m256 b0 = _mm256_loadu_ps(b);
        const __m256 b1 = _mm256_loadu_ps(b + 8);
        __m256 av;
        av = _mm256_set1_ps(ar0[k]);
        a00 = _mm256_fmadd_ps(av, b0, a00);
        a01 = _mm256_fmadd_ps(av, b1, a01);
        av = _mm256_set1_ps(ar1[k]);
        a10 = _mm256_fmadd_ps(av, b0, a10);
        a11 = _mm256_fmadd_ps(av, b1, a11);
        av = _mm256_set1_ps(ar2[k]);
        a20 = _mm256_fmadd_ps(av, b0, a20);
        a21 = _mm256_fmadd_ps(av, b1, a21);
        av = _mm256_set1_ps(ar3[k]);
        a30 = _mm256_fmadd_ps(av, b0, a30);
        a31 = _mm256_fmadd_ps(av, b1, a31);
      }
      _mm256_storeu_ps(c0, a00);
      _mm256_storeu_ps(c0 + 8, a01);
      _mm256_storeu_ps(c1, a10);
      _mm256_storeu_ps(c1 + 8, a11);
      _mm256_storeu_ps(c2, a20);
      _mm256_storeu_ps(c2 + 8, a21);
      _mm256_storeu_ps(c3, a30);
      _mm256_storeu_ps(c3 + 8, a31);
    }
    for (; i < M; ++i) {
      float* c = C + static_cast<size_t>(i) * N + j;
      __m256 s0 = _mm256_loadu_ps(c);
      __m256 s1 = _mm256_loadu_ps(c + 8);
      const float* ar = A + static_cast<size_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        const float* b = B + static_cast<size_t>(k) * N + j;
        const __m256 av = _mm256_set1_ps(ar[k]);
        s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b), s0);
        s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + 8), s1);
      }
      _mm256_storeu_ps(c, s0);
      _mm256_storeu_ps(c + 8, s1);
    }
  }
  for (; j + 8 <= N; j += 8) {
    for (int i = 0; i < M; ++i) {
      float* c = C + static_cast<size_t>(i) * N + j;
      __m256 s0 = _mm256_loadu_ps(c);
      const float* ar = A + static_cast<size_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        s0 = _mm256_fmadd_ps(_mm256_set1_ps(ar[k]),
                             _mm256_loadu_ps(B + static_cast<size_t>(k) * N + j), s0);
      }
      _mm256_storeu_ps(c, s0);
    }
  }
  if (j < N) {
    for (int i = 0; i < M; ++i) {
      const float* ar = A + static_cast<size_t>(i) * K;
      float* c = C + static_cast<size_t>(i) * N;
      for (int k = 0; k < K; ++k) {
        const float av = ar[k];
        const float* b = B + static_cast<size_t>(k) * N;
        for (int jj = j; jj < N; ++jj) c[jj] += av * b[jj];
      }
    }
  }
}

// C[MxN] += A[MxK] * B[NxK]^T: rows of C are dot products of A rows with B rows.
void gemm_acc_bt(float* C, const float* A, const float* B, int M, int K, int N) {
  const int k8 = K & ~7;
  for (int i = 0; i < M; ++i) {
    const float* a = A + static_cast<size_t>(i) * K;
    float* c = C + static_cast<size_t>(i) * N;
    int j = 0;
    for (; j + 4 <= N; j += 4) {
      const float* b0 = B + static_cast<size_t>(j) * K;
      const float* b1 = b0 + K;
      const float* b2 = b1 + K;
      const float* b3 = b2 + K;
      __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
      __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
      for (int k = 0; k < k8; k += 8) {
        const __m256 av = _mm256_loadu_ps(a + k);
        s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + k), s0);
        s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + k), s1);
        s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + k), s2);
        s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + k), s3);
      }
      float r0 = sum8(s0), r1 = sum8(s1), r2 = sum8(s2), r3 = sum8(s3);
      for (int k = k8; k < K; ++k) {
        const float av = a[k];
        r0 += av * b0[k];
        r1 += av * b1[k];
        r2 += av * b2[k];
        r3 += av * b3[k];
      }
      c[j] += r0;
      c[j + 1] += r1;
      c[j + 2] += r2;
      c[j + 3] += r3;
    }
    for (; j < N; ++j) {
      const float* b = B + static_cast<size_t>(j) * K;
      __m256 s = _mm256_setzero_ps();
      for (int k = 0; k < k8; k += 8)
        s = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), s);
      float r = sum8(s);
      for (int k = k8; k < K; ++k) r += a[k] * b[k];
      c[j] += r;
    }
  }
}

// C[MxN] += A[KxM]^T * B[KxN]: rank-1 updates, one per k.
void gemm_acc_at(float* C, const float* A, const float* B, int M, int K, int N) {
  const int n8 = N & ~7;
  for (int k = 0; k < K; ++k) {
    const float* a = A + static_cast<size_t>(k) * M;
    const float* b = B + static_cast<size_t>(k) * N;
    for (int m = 0; m < M; ++m) {
      const float av = a[m];
      if (av == 0.0f) continue;
      float* c = C + static_cast<size_t>(m) * N;
      const __m256 avv = _mm256_set1_ps(av);
      int jj = 0;
      for (; jj < n8; jj += 8) {
        _mm256_storeu_ps(
            c + jj, _mm256_fmadd_ps(avv, _mm256_loadu_ps(b + jj),
                                    _mm256_loadu_ps(c + jj)));
      }
      for (; jj < N; ++jj) c[jj] += av * b[jj];
    }
  }
}

// --------------------------------------------------------- elementwise ----
void add(float* z, const float* x, const float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(z + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) z[i] = x[i] + y[i];
}
void sub(float* z, const float* x, const float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(z + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) z[i] = x[i] - y[i];
}
void mul(float* z, const float* x, const float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(z + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) z[i] = x[i] * y[i];
}
void mul_acc(float* z, const float* x, const float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(z + i, _mm256_fmadd_ps(_mm256_loadu_ps(x + i),
                                            _mm256_loadu_ps(y + i),
                                            _mm256_loadu_ps(z + i)));
  for (; i < n; ++i) z[i] += x[i] * y[i];
}
void axpy(float* y, float a, const float* x, size_t n) {
  const __m256 av = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i),
                                            _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}
void scale(float* y, float a, const float* x, size_t n) {
  const __m256 av = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = a * x[i];
}

void sigmoid(float* y, const float* x, size_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), _mm256_loadu_ps(x + i)));
    _mm256_storeu_ps(y + i, _mm256_div_ps(one, _mm256_add_ps(one, e)));
  }
  for (; i < n; ++i) y[i] = 1.0f / (1.0f + exp1(-x[i]));
}

// tanh(x) = (1 - e^{-2x}) / (1 + e^{-2x}); exp clamp keeps extremes finite.
void tanh_(float* y, const float* x, size_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 mtwo = _mm256_set1_ps(-2.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 e = exp256(_mm256_mul_ps(mtwo, _mm256_loadu_ps(x + i)));
    _mm256_storeu_ps(y + i, _mm256_div_ps(_mm256_sub_ps(one, e), _mm256_add_ps(one, e)));
  }
  for (; i < n; ++i) {
    const float e = exp1(-2.0f * x[i]);
    y[i] = (1.0f - e) / (1.0f + e);
  }
}

void sigmoid_grad_acc(float* dx, const float* dy, const float* y, size_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 yv = _mm256_loadu_ps(y + i);
    const __m256 g = _mm256_mul_ps(yv, _mm256_sub_ps(one, yv));
    _mm256_storeu_ps(dx + i, _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), g,
                                             _mm256_loadu_ps(dx + i)));
  }
  for (; i < n; ++i) dx[i] += dy[i] * y[i] * (1.0f - y[i]);
}
void tanh_grad_acc(float* dx, const float* dy, const float* y, size_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 yv = _mm256_loadu_ps(y + i);
    const __m256 g = _mm256_fnmadd_ps(yv, yv, one);
    _mm256_storeu_ps(dx + i, _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), g,
                                             _mm256_loadu_ps(dx + i)));
  }
  for (; i < n; ++i) dx[i] += dy[i] * (1.0f - y[i] * y[i]);
}

void softmax_rows(float* Y, const float* X, int rows, int cols) {
  const size_t c = static_cast<size_t>(cols);
  const int c8 = cols & ~7;
  for (int r = 0; r < rows; ++r) {
    const float* x = X + r * c;
    float* y = Y + r * c;
    float mx = x[0];
    if (c8 > 0) {
      __m256 m = _mm256_loadu_ps(x);
      for (int i = 8; i < c8; i += 8) m = _mm256_max_ps(m, _mm256_loadu_ps(x + i));
      mx = max8(m);
    }
    for (int i = c8; i < cols; ++i) mx = x[i] > mx ? x[i] : mx;
    const __m256 mvec = _mm256_set1_ps(mx);
    __m256 acc = _mm256_setzero_ps();
    for (int i = 0; i < c8; i += 8) {
      const __m256 e = exp256(_mm256_sub_ps(_mm256_loadu_ps(x + i), mvec));
      _mm256_storeu_ps(y + i, e);
      acc = _mm256_add_ps(acc, e);
    }
    float s = sum8(acc);
    for (int i = c8; i < cols; ++i) {
      y[i] = exp1(x[i] - mx);
      s += y[i];
    }
    const float inv = 1.0f / s;
    const __m256 invv = _mm256_set1_ps(inv);
    for (int i = 0; i < c8; i += 8)
      _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(y + i), invv));
    for (int i = c8; i < cols; ++i) y[i] *= inv;
  }
}

void log_softmax_rows(float* Y, const float* X, int rows, int cols) {
  const size_t c = static_cast<size_t>(cols);
  const int c8 = cols & ~7;
  for (int r = 0; r < rows; ++r) {
    const float* x = X + r * c;
    float* y = Y + r * c;
    float mx = x[0];
    if (c8 > 0) {
      __m256 m = _mm256_loadu_ps(x);
      for (int i = 8; i < c8; i += 8) m = _mm256_max_ps(m, _mm256_loadu_ps(x + i));
      mx = max8(m);
    }
    for (int i = c8; i < cols; ++i) mx = x[i] > mx ? x[i] : mx;
    const __m256 mvec = _mm256_set1_ps(mx);
    __m256 acc = _mm256_setzero_ps();
    for (int i = 0; i < c8; i += 8)
      acc = _mm256_add_ps(acc, exp256(_mm256_sub_ps(_mm256_loadu_ps(x + i), mvec)));
    float s = sum8(acc);
    for (int i = c8; i < cols; ++i) s += exp1(x[i] - mx);
    const float lse = mx + std::log(s);
    const __m256 lsev = _mm256_set1_ps(lse);
    for (int i = 0; i < c8; i += 8)
      _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), lsev));
    for (int i = c8; i < cols; ++i) y[i] = x[i] - lse;
  }
}

float vsum(const float* x, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = sum8(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}
float vdot(const float* x, const float* y, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  float s = sum8(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable t = {
      "avx2",
      gemm_acc, gemm_acc_bt, gemm_acc_at,
      add, sub, mul, mul_acc, axpy, scale,
      sigmoid, tanh_, sigmoid_grad_acc, tanh_grad_acc,
      softmax_rows, log_softmax_rows,
      vsum, vdot,
  };
  return &t;
}

}  // namespace onionlab::kern

#else

namespace onionlab::kern {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace onionlab::kern

#endif
