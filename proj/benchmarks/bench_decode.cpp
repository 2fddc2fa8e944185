// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0
//
// decode-path microbenchmarks on a small random model: drafting,
// verification, and whole engine cycles per method.

#include "hass/engine.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace hass;

namespace {

struct Rig {
    TargetModel target;
    DraftHead head;

    Rig() {
        ModelConfig cfg;
        cfg.vocab_size  = 512;
        cfg.d_model     = 64;
        cfg.n_layers    = 4;
        cfg.n_heads     = 4;
        cfg.d_ff        = 128;
        cfg.max_seq_len = 512;
        Rng rng(42);
        target.init(cfg, rng);
        head.init(target, rng);
    }
};

Rig & rig() {
    static Rig r;
    return r;
}

std::vector<int> prompt_tokens(int n) {
    std::vector<int> p(n);
    Rng rng(7);
    for (auto & t : p) {
        t = (int) rng.below(512);
    }
    return p;
}

// one primed engine per iteration batch; reset is outside the timed region
void bm_engine_cycle(benchmark::State & state, DecodeMethod method) {
    NoGradGuard ng;
    GenerateOptions opts;
    opts.method                   = method;
    opts.max_new_tokens           = 440; // leaves room for one more cycle at the reset mark
    opts.draft_len                = 6;
    opts.tree_budget              = 24;
    opts.tree_depth               = 5;
    opts.tree_branch              = 4;
    opts.sampling.temperature     = 1.0;
    const std::vector<int> prompt = prompt_tokens(32);

    Engine e(rig().target, rig().head, opts);
    e.reset(prompt);
    int64_t tokens = 0;
    for (auto _ : state) {
        if ((int) e.tokens().size() > 400) {
            state.PauseTiming();
            e.reset(prompt);
            state.ResumeTiming();
        }
        tokens += e.step().tokens_generated;
    }
    state.SetItemsProcessed(tokens);
}

void bm_draft_chain(benchmark::State & state) {
    NoGradGuard ng;
    const int len                 = (int) state.range(0);
    const std::vector<int> prompt = prompt_tokens(32);
    GenerateOptions opts;
    opts.max_new_tokens = 1;
    Engine e(rig().target, rig().head, opts);
    e.reset(prompt); // primes caches and the pending feature
    Rng rng(3);
    for (auto _ : state) {
        KvCache cache = e.draft_cache().fork();
        ChainDraft d  = draft_chain(rig().head, cache, e.pending_token(), e.pending_feature(),
                                    (int) prompt.size() - 1, len, DraftMode::sample, rng);
        benchmark::DoNotOptimize(d.tokens.data());
    }
    state.SetItemsProcessed(state.iterations() * len);
}

void bm_draft_tree(benchmark::State & state) {
    NoGradGuard ng;
    const int budget              = (int) state.range(0);
    const std::vector<int> prompt = prompt_tokens(32);
    GenerateOptions opts;
    opts.max_new_tokens = 1;
    Engine e(rig().target, rig().head, opts);
    e.reset(prompt);
    Rng rng(3);
    for (auto _ : state) {
        KvCache cache = e.draft_cache().fork();
        DraftTree t   = draft_tree_dynamic(rig().head, cache, e.pending_token(),
                                           e.pending_feature(), (int) prompt.size() - 1, budget,
                                           /*max_depth=*/6, /*branch=*/4, DraftMode::sample, rng);
        benchmark::DoNotOptimize(t.nodes.data());
    }
    state.SetItemsProcessed(state.iterations() * budget);
}

void bm_verify_chain(benchmark::State & state) {
    const int V = 512, L = (int) state.range(0);
    Rng setup(11);
    ChainDraft draft;
    std::vector<std::vector<float>> target_dists;
    auto rand_dist = [&] {
        std::vector<float> d(V);
        float total = 0;
        for (auto & x : d) {
            x = (float) setup.uniform() + 1e-3f;
            total += x;
        }
        for (auto & x : d) {
            x /= total;
        }
        return d;
    };
    for (int i = 0; i < L; ++i) {
        draft.dists.push_back(rand_dist());
        draft.tokens.push_back((int) setup.below(V));
    }
    for (int i = 0; i <= L; ++i) {
        target_dists.push_back(rand_dist());
    }
    SamplingParams params;
    Rng rng(5);
    for (auto _ : state) {
        VerifyResult r = verify_chain(draft, target_dists, params, rng);
        benchmark::DoNotOptimize(r.accepted_count);
    }
    state.SetItemsProcessed(state.iterations() * L);
}

void bm_sampling_filter(benchmark::State & state) {
    const int V = (int) state.range(0);
    Rng setup(13);
    std::vector<float> q(V);
    float total = 0;
    for (auto & x : q) {
        x = (float) setup.uniform();
        total += x;
    }
    for (auto & x : q) {
        x /= total;
    }
    SamplingParams params;
    params.temperature  = 0.8;
    params.top_p        = 0.9;
    params.top_k_filter = 50;
    for (auto _ : state) {
        auto out = apply_sampling_filter(std::span<const float>(q), params);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * V);
}

} // namespace

BENCHMARK_CAPTURE(bm_engine_cycle, vanilla, DecodeMethod::vanilla)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(bm_engine_cycle, chain, DecodeMethod::chain)->Unit(benchmark::kMicrosecond);
BENCHMARK_CAPTURE(bm_engine_cycle, tree, DecodeMethod::tree)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_draft_chain)->Arg(4)->Arg(8)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_draft_tree)->Arg(16)->Arg(48)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_verify_chain)->Arg(4)->Arg(8)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_sampling_filter)->Arg(512)->Arg(4096)->Unit(benchmark::kMicrosecond);
