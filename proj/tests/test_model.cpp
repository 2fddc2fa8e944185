// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/model.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

using namespace hass;

namespace {

ModelConfig micro_cfg() {
    ModelConfig cfg;
    cfg.vocab_size = 32;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.max_seq_len = 32;
    return cfg;
}

TargetModel micro_target(uint64_t seed = 101) {
    TargetModel m;
    Rng rng(seed);
    m.init(micro_cfg(), rng);
    return m;
}

float max_abs_diff(std::span<const float> a, std::span<const float> b) {
    REQUIRE(a.size() == b.size());
    float m = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

} // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = micro_cfg();
    CHECK_NOTHROW(cfg.validate());
    cfg.n_heads = 5;
    CHECK_THROWS_AS(cfg.validate(), ParamError);
    cfg = micro_cfg();
    cfg.vocab_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ParamError);
    cfg = micro_cfg();
    cfg.max_seq_len = 4;
    CHECK_THROWS_AS(cfg.validate(), ParamError);
}

TEST_CASE("incremental and full-sequence target forwards agree") {
    NoGradGuard ng;
    auto m = micro_target();
    std::vector<int> toks = {3, 7, 1, 20, 4, 9};

    auto full_cache = m.make_cache();
    auto full = m.forward(toks, full_cache);

    auto inc_cache = m.make_cache();
    std::vector<float> inc_logits;
    for (int t : toks) {
        std::vector<int> one = {t};
        auto out = m.forward(one, inc_cache);
        auto row = out.logits.row_values(0);
        inc_logits.insert(inc_logits.end(), row.begin(), row.end());
    }
    CHECK(max_abs_diff(full.logits.values(), inc_logits) < 1e-5f);
    CHECK(inc_cache.len() == (int) toks.size());

    // mixed chunking too
    auto c2 = m.make_cache();
    std::vector<int> a(toks.begin(), toks.begin() + 2), b(toks.begin() + 2, toks.end());
    auto o1 = m.forward(a, c2);
    auto o2 = m.forward(b, c2);
    CHECK(max_abs_diff(o2.logits.row_values(3), full.logits.row_values(5)) < 1e-5f);
}

TEST_CASE("tree-masked sibling batch equals forked-cache forwards bitwise") {
    NoGradGuard ng;
    auto m = micro_target();
    std::vector<int> prefix = {5, 2, 8, 13};
    auto cache = m.make_cache();
    m.forward(prefix, cache);

    // three sibling continuations of the prefix, verified in one batch
    std::vector<int> sib = {1, 2, 3};
    Mask mask(3, 7);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) {
            mask.set(i, j);
        }
        mask.set(i, 4 + i); // self
    }
    std::vector<int> pos = {4, 4, 4};
    auto forked = cache.fork();
    ForwardOpts opts;
    opts.mask = &mask;
    opts.positions = pos;
    auto batch = m.forward(sib, forked, opts);

    for (int i = 0; i < 3; ++i) {
        auto solo_cache = cache.fork();
        std::vector<int> one = {sib[i]};
        auto solo = m.forward(one, solo_cache);
        CHECK(std::memcmp(solo.logits.values().data(), batch.logits.row_values(i).data(),
                          sizeof(float) * m.cfg.vocab_size) == 0);
        CHECK(std::memcmp(solo.hidden.values().data(), batch.hidden.row_values(i).data(),
                          sizeof(float) * m.cfg.d_model) == 0);
    }
}

TEST_CASE("zero-weight model yields uniform logits") {
    NoGradGuard ng;
    TargetModel m;
    Rng rng(1);
    m.init(micro_cfg(), rng);
    for (auto & [name, t] : m.named_params()) {
        auto vals = t->values_mut();
        std::fill(vals.begin(), vals.end(), 0.0f);
    }
    auto cache = m.make_cache();
    std::vector<int> toks = {1, 2, 3};
    auto out = m.forward(toks, cache);
    auto probs = softmax(out.logits, 1.0f);
    const float want = 1.0f / m.cfg.vocab_size;
    for (float p : probs.values()) {
        CHECK(p == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("cache truncate rolls back to a bitwise-identical state") {
    NoGradGuard ng;
    auto m = micro_target();
    std::vector<int> toks = {3, 7, 1, 20, 4, 9};
    auto cache = m.make_cache();
    auto full = m.forward(toks, cache);

    cache.truncate(3);
    CHECK(cache.len() == 3);
    std::vector<int> tail(toks.begin() + 3, toks.end());
    auto redo = m.forward(tail, cache);
    CHECK(std::memcmp(redo.logits.values().data(), full.logits.row_values(3).data(),
                      sizeof(float) * 3 * m.cfg.vocab_size) == 0);
    CHECK(cache.positions.size() == 6);
    for (int i = 0; i < 6; ++i) {
        CHECK(cache.positions[i] == i);
    }
}

TEST_CASE("cache gather keeps one speculation path") {
    NoGradGuard ng;
    auto m = micro_target();
    std::vector<int> toks = {3, 7, 1, 20, 4, 9};
    auto cache = m.make_cache();
    m.forward(toks, cache);
    std::vector<int> keep = {0, 1, 4};
    cache.gather(keep);
    CHECK(cache.len() == 3);
    CHECK(cache.positions == std::vector<int>({0, 1, 4}));
    CHECK_THROWS_AS(cache.gather(std::vector<int>{5}), ParamError);
}

TEST_CASE("capacity overflow raises") {
    NoGradGuard ng;
    auto m = micro_target();
    auto cache = m.make_cache();
    std::vector<int> toks(m.cfg.max_seq_len, 1);
    m.forward(toks, cache);
    std::vector<int> one = {1};
    CHECK_THROWS_AS(m.forward(one, cache), CapacityError);
}

TEST_CASE("draft head shares lm head weights bit-identically") {
    NoGradGuard ng;
    auto m = micro_target();
    DraftHead dh;
    Rng rng(55);
    dh.init(m, rng);

    // prime with target features over a short prefix
    std::vector<int> toks = {3, 7, 1, 20};
    auto tcache = m.make_cache();
    auto tout = m.forward(toks, tcache);

    // drafter rows: feature f_{t-1} with token x_t, rows 1..3
    std::vector<int> dtoks(toks.begin() + 1, toks.end());
    auto feats = slice_rows(tout.hidden, 0, 3);
    auto dcache = dh.make_cache();
    auto dout = dh.forward(feats, dtoks, dcache);
    CHECK(dout.logits.rows() == 3);
    CHECK(dcache.len() == 3);

    // shared-weight identity: drafter logits equal the target lm head applied
    // to drafter features
    auto via_target = m.lm_logits(dout.hidden);
    CHECK(std::memcmp(via_target.values().data(), dout.logits.values().data(),
                      sizeof(float) * via_target.numel()) == 0);

    // literally the same nodes
    CHECK(dh.w_lm.node() == m.w_lm.node());
    CHECK(dh.embed.node() == m.embed.node());
    CHECK(dh.final_norm_w.node() == m.final_norm_w.node());
}

TEST_CASE("draft head incremental decode matches batch") {
    NoGradGuard ng;
    auto m = micro_target();
    DraftHead dh;
    Rng rng(55);
    dh.init(m, rng);

    std::vector<int> toks = {3, 7, 1, 20, 4};
    auto tcache = m.make_cache();
    auto tout = m.forward(toks, tcache);

    std::vector<int> dtoks(toks.begin() + 1, toks.end());
    auto feats = slice_rows(tout.hidden, 0, 4);

    auto full_cache = dh.make_cache();
    auto full = dh.forward(feats, dtoks, full_cache);

    auto inc_cache = dh.make_cache();
    for (int i = 0; i < 4; ++i) {
        std::vector<int> one = {dtoks[i]};
        auto fi = gather_rows(feats, std::vector<int>{i});
        auto oi = dh.forward(fi, one, inc_cache);
        CHECK(max_abs_diff(oi.logits.values(), full.logits.row_values(i)) < 1e-5f);
    }
}

TEST_CASE("draft head stays under twice one target block") {
    auto m = micro_target();
    DraftHead dh;
    Rng rng(5);
    dh.init(m, rng);
    std::vector<std::pair<std::string, Tensor *>> block_params;
    m.blocks[0].named_params("b", block_params);
    int64_t block_count = 0;
    for (auto & [name, t] : block_params) {
        block_count += t->numel();
    }
    CHECK(dh.param_count() < 2 * block_count);
}

TEST_CASE("draft forward validates feature/token agreement") {
    NoGradGuard ng;
    auto m = micro_target();
    DraftHead dh;
    Rng rng(5);
    dh.init(m, rng);
    auto cache = dh.make_cache();
    std::vector<int> toks = {1, 2, 3};
    auto feats = Tensor::zeros({2, m.cfg.d_model});
    CHECK_THROWS_AS(dh.forward(feats, toks, cache), ShapeError);
}
