// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/gemm.hpp"
#include "hass/rng.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

std::vector<float> rand_vec(size_t n, uint64_t seed) {
    hass::Rng rng(seed);
    std::vector<float> v(n);
    for (auto & x : v) {
        x = (float) rng.normal();
    }
    return v;
}

void bm_gemm_nn(benchmark::State & state) {
    const int m = (int) state.range(0);
    const int k = (int) state.range(1);
    const int n = (int) state.range(2);
    auto a = rand_vec((size_t) m * k, 1);
    auto b = rand_vec((size_t) k * n, 2);
    std::vector<float> c((size_t) m * n);
    for (auto _ : state) {
        std::fill(c.begin(), c.end(), 0.0f);
        hass::detail::gemm_nn(m, k, n, a.data(), b.data(), c.data());
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2ll * m * k * n);
}

void bm_gemm_nt(benchmark::State & state) {
    const int m = (int) state.range(0);
    const int k = (int) state.range(1);
    const int n = (int) state.range(2);
    auto a = rand_vec((size_t) m * k, 1);
    auto b = rand_vec((size_t) n * k, 2);
    std::vector<float> c((size_t) m * n);
    for (auto _ : state) {
        std::fill(c.begin(), c.end(), 0.0f);
        hass::detail::gemm_nt(m, k, n, a.data(), b.data(), c.data());
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2ll * m * k * n);
}

} // namespace

// token-batch x d_model x (d_ff | vocab) shapes seen during decode and training
BENCHMARK(bm_gemm_nn)
    ->Args({1, 256, 1024})
    ->Args({61, 256, 1024})
    ->Args({256, 256, 1024})
    ->Args({256, 256, 513});
BENCHMARK(bm_gemm_nt)
    ->Args({61, 32, 317})
    ->Args({256, 32, 256});

BENCHMARK_MAIN();
