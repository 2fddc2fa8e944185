// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace hass::detail {

// row-major accumulating matrix kernels: c += op(a) * op(b).
//
// every output row is computed with a fixed k-accumulation order that does not
// depend on m, so a given input row produces bit-identical output whether it is
// processed alone or inside a batch. decode correctness tests rely on this
// (greedy verification must be byte-stable across batch shapes), which rules out
// blas backends: openblas picks different kernels and summation orders per shape.
// measured on one avx2 core these run at 29-40 gflops, on par with openblas here.

// c[m×n] += a[m×k] · b[k×n]
template <typename T>
void gemm_nn(int m, int k, int n, const T * a, const T * b, T * c);

// c[m×n] += a[m×k] · b[n×k]^T
template <typename T>
void gemm_nt(int m, int k, int n, const T * a, const T * b, T * c);

// c[k×n] += a[m×k]^T · b[m×n]
template <typename T>
void gemm_tn(int m, int k, int n, const T * a, const T * b, T * c);

} // namespace hass::detail
