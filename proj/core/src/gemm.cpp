// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/gemm.hpp"

#include <cstddef>

namespace hass::detail {

template <typename T>
void gemm_nn(int m, int k, int n, const T * a, const T * b, T * c) {
    constexpr int JB = 64;
    for (int i = 0; i < m; ++i) {
        const T * arow = a + (size_t) i * k;
        T * crow = c + (size_t) i * n;
        for (int j0 = 0; j0 < n; j0 += JB) {
            const int jb = n - j0 < JB ? n - j0 : JB;
            T acc[JB];
            for (int j = 0; j < jb; ++j) {
                acc[j] = T(0);
            }
            const T * bp = b + j0;
            for (int kk = 0; kk < k; ++kk) {
                const T av = arow[kk];
                const T * brow = bp + (size_t) kk * n;
#pragma GCC ivdep
                for (int j = 0; j < jb; ++j) {
                    acc[j] += av * brow[j];
                }
            }
            for (int j = 0; j < jb; ++j) {
                crow[j0 + j] += acc[j];
            }
        }
    }
}

template <typename T>
void gemm_nt(int m, int k, int n, const T * a, const T * b, T * c) {
    // per-output dot products; unrolled over 4 b-rows so they stay resident
    for (int i = 0; i < m; ++i) {
        const T * arow = a + (size_t) i * k;
        T * crow = c + (size_t) i * n;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            const T * b0 = b + (size_t) (j + 0) * k;
            const T * b1 = b + (size_t) (j + 1) * k;
            const T * b2 = b + (size_t) (j + 2) * k;
            const T * b3 = b + (size_t) (j + 3) * k;
            T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
#pragma GCC ivdep
            for (int kk = 0; kk < k; ++kk) {
                const T av = arow[kk];
                s0 += av * b0[kk];
                s1 += av * b1[kk];
                s2 += av * b2[kk];
                s3 += av * b3[kk];
            }
            crow[j + 0] += s0;
            crow[j + 1] += s1;
            crow[j + 2] += s2;
            crow[j + 3] += s3;
        }
        for (; j < n; ++j) {
            const T * brow = b + (size_t) j * k;
            T s = T(0);
#pragma GCC ivdep
            for (int kk = 0; kk < k; ++kk) {
                s += arow[kk] * brow[kk];
            }
            crow[j] += s;
        }
    }
}

template <typename T>
void gemm_tn(int m, int k, int n, const T * a, const T * b, T * c) {
    // rank-1 accumulation; only used on gradient paths
    for (int i = 0; i < m; ++i) {
        const T * arow = a + (size_t) i * k;
        const T * brow = b + (size_t) i * n;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) {
                continue;
            }
            T * crow = c + (size_t) kk * n;
#pragma GCC ivdep
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template void gemm_nn<float>(int, int, int, const float *, const float *, float *);
template void gemm_nn<double>(int, int, int, const double *, const double *, double *);
template void gemm_nt<float>(int, int, int, const float *, const float *, float *);
template void gemm_nt<double>(int, int, int, const double *, const double *, double *);
template void gemm_tn<float>(int, int, int, const float *, const float *, float *);
template void gemm_tn<double>(int, int, int, const double *, const double *, double *);

} // namespace hass::detail
