// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0
//
// the toy target transformer and the one-block draft head. the draft head
// shares the embedding table, final norm, and lm head with its target model by
// aliasing the same tensor nodes, so the shared-weight identity holds by
// construction rather than by synchronization.

#pragma once

#include "hass/mask.hpp"
#include "hass/rng.hpp"
#include "hass/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace hass {

struct ModelConfig {
    int vocab_size  = 512;
    int d_model     = 256;
    int n_layers    = 6;
    int n_heads     = 8;
    int d_ff        = 1024;
    int max_seq_len = 512;
    double rms_norm_eps = 1e-5;

    void validate() const;
};

// per-layer key/value store. blocks are whole tensors so cached state can stay
// on the autodiff graph during training; inference appends plain value tensors.
template <typename T>
struct KvCacheT {
    int n_layers = 0;
    int capacity = 0;
    std::vector<std::vector<TensorT<T>>> k_blocks;
    std::vector<std::vector<TensorT<T>>> v_blocks;
    std::vector<int> positions;

    KvCacheT() = default;
    KvCacheT(int n_layers, int capacity);

    int len() const { return (int) positions.size(); }

    // one forward appends positions once and a (k, v) block per layer
    void push_positions(std::span<const int> pos);
    void append(int layer, TensorT<T> k, TensorT<T> v);

    // concatenated view over all blocks of a layer, [len x d_model]
    TensorT<T> keys(int layer) const;
    TensorT<T> values(int layer) const;

    // keep the first n cached rows (speculation rollback)
    void truncate(int n);
    // keep/reorder cached rows by index (tree verification keeps one root-to-leaf path)
    void gather(std::span<const int> idx);

    KvCacheT fork() const { return *this; }
};

template <typename T>
struct DecoderBlockT {
    TensorT<T> attn_norm_w;
    TensorT<T> wq, wk, wv, wo;
    TensorT<T> mlp_norm_w;
    TensorT<T> w_gate, w_up, w_down;

    void init(const ModelConfig & cfg, Rng & rng);
    void named_params(const std::string & prefix, std::vector<std::pair<std::string, TensorT<T> *>> & out);

    // runs attention over ctx_k/ctx_v (cached, may be empty) followed by this
    // call's own keys; returns hidden states plus the new (k, v) block
    struct Out {
        TensorT<T> y, k, v;
    };
    Out forward(const ModelConfig & cfg, const TensorT<T> & x, std::span<const int> positions,
                const TensorT<T> & ctx_k, const TensorT<T> & ctx_v, const Mask & mask) const;
};

// options for a model forward; defaults describe plain autoregressive decode
struct ForwardOpts {
    const Mask * mask = nullptr;            // default: full prefix + causal over new rows
    std::span<const int> positions = {};    // default: continue from cache length
};

template <typename T>
struct ForwardOutT {
    TensorT<T> logits;  // [S x V]
    TensorT<T> hidden;  // [S x d_model], pre-final-norm output of the last block
};

template <typename T>
struct TargetModelT {
    ModelConfig cfg;
    TensorT<T> embed;        // [V x d_model]
    std::vector<DecoderBlockT<T>> blocks;
    TensorT<T> final_norm_w; // [d_model]
    TensorT<T> w_lm;         // [d_model x V]

    void init(const ModelConfig & cfg, Rng & rng);
    std::vector<std::pair<std::string, TensorT<T> *>> named_params();
    int64_t param_count() const;
    void set_trainable(bool v);

    KvCacheT<T> make_cache() const { return KvCacheT<T>(cfg.n_layers, cfg.max_seq_len); }

    // extends the cache by S rows and returns logits + second-to-top features
    // f for every new position: f feeds the draft head, logits = lm_head(norm(f))
    ForwardOutT<T> forward(std::span<const int> tokens, KvCacheT<T> & cache,
                           const ForwardOpts & opts = {}) const;

    // the shared lm head: logits(f) = rms_norm(f; final_norm) . w_lm
    TensorT<T> lm_logits(const TensorT<T> & f) const;
};

template <typename T>
struct DraftHeadT {
    ModelConfig cfg;
    TensorT<T> fusion; // [2*d_model x d_model]
    DecoderBlockT<T> block;
    // aliases of the target's tensors (same nodes, not copies)
    TensorT<T> embed;
    TensorT<T> final_norm_w;
    TensorT<T> w_lm;

    void init(const TargetModelT<T> & target, Rng & rng);
    // fusion + block only; the shared tensors stay frozen unless
    // train_embedding is set on the training config
    std::vector<std::pair<std::string, TensorT<T> *>> named_params();
    int64_t param_count() const;
    void set_trainable(bool v);

    KvCacheT<T> make_cache() const { return KvCacheT<T>(1, cfg.max_seq_len); }

    // input row t is concat(feature f_{t-1}, embedding of token x_t)
    ForwardOutT<T> forward(const TensorT<T> & features, std::span<const int> tokens,
                           KvCacheT<T> & cache, const ForwardOpts & opts = {}) const;

    TensorT<T> lm_logits(const TensorT<T> & f) const;
};

using KvCache     = KvCacheT<float>;
using TargetModel = TargetModelT<float>;
using DraftHead   = DraftHeadT<float>;

} // namespace hass
