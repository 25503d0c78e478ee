// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "onionlab/kernels.hpp"

namespace onionlab::kern {
namespace {

bool host_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* pick() {
  const KernelTable* avx2 = host_has_avx2() ? avx2_table() : nullptr;
  const KernelTable* neon = neon_table();
  if (const char* env = std::getenv("ONIONLAB_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return &ref_table();
    if (std::strcmp(env, "avx2") == 0 && avx2) return avx2;
    if (std::strcmp(env, "neon") == 0 && neon) return neon;
    std::fprintf(stderr,
                 "onionlab: ONIONLAB_KERNELS=%s unavailable, auto-selecting\n",
                 env);
  }
  if (avx2) return avx2;
  if (neon) return neon;
  return &ref_table();
}

}  // namespace

const KernelTable& table() {
  static const KernelTable* chosen = pick();
  return *chosen;
}

}  // namespace onionlab::kern
