// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/model.hpp"

#include <numeric>

namespace hass {

void ModelConfig::validate() const {
    if (vocab_size < 2) {
        throw ParamError(strfmt("config: vocab_size %d < 2", vocab_size));
    }
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
        throw ParamError(strfmt("config: d_model %d not divisible by n_heads %d", d_model, n_heads));
    }
    if ((d_model / n_heads) % 2 != 0) {
        throw ParamError(strfmt("config: head dim %d must be even for rotary pairs", d_model / n_heads));
    }
    if (n_layers < 1 || d_ff < 1) {
        throw ParamError(strfmt("config: n_layers %d, d_ff %d out of range", n_layers, d_ff));
    }
    if (max_seq_len < 8) {
        throw ParamError(strfmt("config: max_seq_len %d < 8", max_seq_len));
    }
    if (!(rms_norm_eps > 0)) {
        throw ParamError("config: rms_norm_eps must be positive");
    }
}

// ---- kv cache ----

template <typename T>
KvCacheT<T>::KvCacheT(int n_layers_, int capacity_) : n_layers(n_layers_), capacity(capacity_) {
    if (n_layers < 1 || capacity < 1) {
        throw ParamError(strfmt("kv cache: %d layers, capacity %d", n_layers, capacity));
    }
    k_blocks.resize(n_layers);
    v_blocks.resize(n_layers);
}

template <typename T>
static TensorT<T> fold_blocks(const std::vector<TensorT<T>> & blocks) {
    if (blocks.empty()) {
        return {};
    }
    TensorT<T> out = blocks[0];
    for (size_t i = 1; i < blocks.size(); ++i) {
        out = concat_rows(out, blocks[i]);
    }
    return out;
}

template <typename T>
void KvCacheT<T>::push_positions(std::span<const int> pos) {
    if (len() + (int) pos.size() > capacity) {
        throw CapacityError(strfmt("kv cache: %d + %zu rows exceeds capacity %d", len(), pos.size(), capacity));
    }
    positions.insert(positions.end(), pos.begin(), pos.end());
    // consolidate so each forward pays one concat per layer, not one per past block
    for (int l = 0; l < n_layers; ++l) {
        if (k_blocks[l].size() > 1) {
            k_blocks[l] = {fold_blocks(k_blocks[l])};
            v_blocks[l] = {fold_blocks(v_blocks[l])};
        }
    }
}

template <typename T>
void KvCacheT<T>::append(int layer, TensorT<T> k, TensorT<T> v) {
    if (layer < 0 || layer >= n_layers) {
        throw ParamError(strfmt("kv cache: layer %d out of %d", layer, n_layers));
    }
    if (k.rows() != v.rows()) {
        throw ShapeError(strfmt("kv cache: k rows %d != v rows %d", k.rows(), v.rows()));
    }
    k_blocks[layer].push_back(std::move(k));
    v_blocks[layer].push_back(std::move(v));
}

template <typename T>
TensorT<T> KvCacheT<T>::keys(int layer) const {
    return fold_blocks(k_blocks.at(layer));
}

template <typename T>
TensorT<T> KvCacheT<T>::values(int layer) const {
    return fold_blocks(v_blocks.at(layer));
}

template <typename T>
void KvCacheT<T>::truncate(int n) {
    if (n < 0 || n > len()) {
        throw ParamError(strfmt("kv cache: truncate to %d of %d rows", n, len()));
    }
    if (n == len()) {
        return;
    }
    positions.resize(n);
    for (int l = 0; l < n_layers; ++l) {
        if (n == 0) {
            k_blocks[l].clear();
            v_blocks[l].clear();
            continue;
        }
        k_blocks[l] = {slice_rows(fold_blocks(k_blocks[l]), 0, n)};
        v_blocks[l] = {slice_rows(fold_blocks(v_blocks[l]), 0, n)};
    }
}

template <typename T>
void KvCacheT<T>::gather(std::span<const int> idx) {
    std::vector<int> keep(idx.begin(), idx.end());
    for (int i : keep) {
        if (i < 0 || i >= len()) {
            throw ParamError(strfmt("kv cache: gather index %d out of %d rows", i, len()));
        }
    }
    std::vector<int> new_pos(keep.size());
    for (size_t i = 0; i < keep.size(); ++i) {
        new_pos[i] = positions[keep[i]];
    }
    positions = std::move(new_pos);
    for (int l = 0; l < n_layers; ++l) {
        if (keep.empty()) {
            k_blocks[l].clear();
            v_blocks[l].clear();
            continue;
        }
        k_blocks[l] = {gather_rows(fold_blocks(k_blocks[l]), keep)};
        v_blocks[l] = {gather_rows(fold_blocks(v_blocks[l]), keep)};
    }
}

// ---- decoder block ----

template <typename T>
void DecoderBlockT<T>::init(const ModelConfig & cfg, Rng & rng) {
    const int d = cfg.d_model, ff = cfg.d_ff;
    const T sd = T(0.02);
    attn_norm_w = TensorT<T>::full({d}, T(1));
    wq = TensorT<T>::randn({d, d}, rng, sd);
    wk = TensorT<T>::randn({d, d}, rng, sd);
    wv = TensorT<T>::randn({d, d}, rng, sd);
    wo = TensorT<T>::randn({d, d}, rng, sd);
    mlp_norm_w = TensorT<T>::full({d}, T(1));
    w_gate = TensorT<T>::randn({d, ff}, rng, sd);
    w_up   = TensorT<T>::randn({d, ff}, rng, sd);
    w_down = TensorT<T>::randn({ff, d}, rng, sd);
}

template <typename T>
void DecoderBlockT<T>::named_params(const std::string & prefix,
                                    std::vector<std::pair<std::string, TensorT<T> *>> & out) {
    out.push_back({prefix + ".attn_norm", &attn_norm_w});
    out.push_back({prefix + ".wq", &wq});
    out.push_back({prefix + ".wk", &wk});
    out.push_back({prefix + ".wv", &wv});
    out.push_back({prefix + ".wo", &wo});
    out.push_back({prefix + ".mlp_norm", &mlp_norm_w});
    out.push_back({prefix + ".w_gate", &w_gate});
    out.push_back({prefix + ".w_up", &w_up});
    out.push_back({prefix + ".w_down", &w_down});
}

template <typename T>
typename DecoderBlockT<T>::Out DecoderBlockT<T>::forward(const ModelConfig & cfg, const TensorT<T> & x,
                                                         std::span<const int> positions,
                                                         const TensorT<T> & ctx_k, const TensorT<T> & ctx_v,
                                                         const Mask & mask) const {
    const T eps = (T) cfg.rms_norm_eps;
    auto h = rms_norm(x, attn_norm_w, eps);
    auto q = rope(matmul(h, wq), positions, cfg.n_heads);
    auto k = rope(matmul(h, wk), positions, cfg.n_heads);
    auto v = matmul(h, wv);
    auto all_k = ctx_k.defined() ? concat_rows(ctx_k, k) : k;
    auto all_v = ctx_v.defined() ? concat_rows(ctx_v, v) : v;
    auto att = masked_attention(q, all_k, all_v, mask, cfg.n_heads);
    auto x2 = add(x, matmul(att, wo));
    auto h2 = rms_norm(x2, mlp_norm_w, eps);
    auto y = add(x2, matmul(mul(silu(matmul(h2, w_gate)), matmul(h2, w_up)), w_down));
    return {std::move(y), std::move(k), std::move(v)};
}

// ---- forward plumbing shared by both models ----

namespace {

struct ForwardPlan {
    std::vector<int> positions;
    Mask default_mask;
    const Mask * mask = nullptr;
};

ForwardPlan plan_forward(int s, int prefix, int cache_layers, int model_layers, const ForwardOpts & opts) {
    if (s < 1) {
        throw ParamError("forward: empty token batch");
    }
    if (cache_layers != model_layers) {
        throw ParamError(strfmt("forward: cache has %d layers, model %d", cache_layers, model_layers));
    }
    ForwardPlan plan;
    if (opts.positions.empty()) {
        plan.positions.resize(s);
        std::iota(plan.positions.begin(), plan.positions.end(), prefix);
    } else {
        if ((int) opts.positions.size() != s) {
            throw ShapeError(strfmt("forward: %zu positions for %d rows", opts.positions.size(), s));
        }
        plan.positions.assign(opts.positions.begin(), opts.positions.end());
    }
    if (opts.mask) {
        plan.mask = opts.mask;
    } else {
        plan.default_mask = Mask::decode(s, prefix);
        plan.mask = &plan.default_mask;
    }
    return plan;
}

} // namespace

// ---- target model ----

template <typename T>
void TargetModelT<T>::init(const ModelConfig & cfg_, Rng & rng) {
    cfg = cfg_;
    cfg.validate();
    embed = TensorT<T>::randn({cfg.vocab_size, cfg.d_model}, rng, T(0.02));
    blocks.assign(cfg.n_layers, {});
    for (auto & b : blocks) {
        b.init(cfg, rng);
    }
    final_norm_w = TensorT<T>::full({cfg.d_model}, T(1));
    w_lm = TensorT<T>::randn({cfg.d_model, cfg.vocab_size}, rng, T(0.02));
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T> *>> TargetModelT<T>::named_params() {
    std::vector<std::pair<std::string, TensorT<T> *>> out;
    out.push_back({"embed_tokens", &embed});
    for (size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].named_params(strfmt("layers.%zu", i), out);
    }
    out.push_back({"final_norm", &final_norm_w});
    out.push_back({"lm_head", &w_lm});
    return out;
}

template <typename T>
int64_t TargetModelT<T>::param_count() const {
    auto * self = const_cast<TargetModelT<T> *>(this);
    int64_t n = 0;
    for (auto & [name, t] : self->named_params()) {
        n += t->numel();
    }
    return n;
}

template <typename T>
void TargetModelT<T>::set_trainable(bool v) {
    for (auto & [name, t] : named_params()) {
        t->set_requires_grad(v);
    }
}

template <typename T>
TensorT<T> TargetModelT<T>::lm_logits(const TensorT<T> & f) const {
    return matmul(rms_norm(f, final_norm_w, (T) cfg.rms_norm_eps), w_lm);
}

template <typename T>
ForwardOutT<T> TargetModelT<T>::forward(std::span<const int> tokens, KvCacheT<T> & cache,
                                        const ForwardOpts & opts) const {
    const int s = (int) tokens.size();
    auto plan = plan_forward(s, cache.len(), cache.n_layers, cfg.n_layers, opts);
    cache.push_positions(plan.positions);
    auto x = embedding(embed, tokens);
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto out = blocks[l].forward(cfg, x, plan.positions, cache.keys(l), cache.values(l), *plan.mask);
        cache.append(l, std::move(out.k), std::move(out.v));
        x = std::move(out.y);
    }
    return {lm_logits(x), x};
}

// ---- draft head ----

template <typename T>
void DraftHeadT<T>::init(const TargetModelT<T> & target, Rng & rng) {
    cfg = target.cfg;
    fusion = TensorT<T>::randn({2 * cfg.d_model, cfg.d_model}, rng, T(0.02));
    block.init(cfg, rng);
    embed = target.embed;
    final_norm_w = target.final_norm_w;
    w_lm = target.w_lm;
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T> *>> DraftHeadT<T>::named_params() {
    std::vector<std::pair<std::string, TensorT<T> *>> out;
    out.push_back({"fusion", &fusion});
    block.named_params("block", out);
    return out;
}

template <typename T>
int64_t DraftHeadT<T>::param_count() const {
    auto * self = const_cast<DraftHeadT<T> *>(this);
    int64_t n = 0;
    for (auto & [name, t] : self->named_params()) {
        n += t->numel();
    }
    return n;
}

template <typename T>
void DraftHeadT<T>::set_trainable(bool v) {
    for (auto & [name, t] : named_params()) {
        t->set_requires_grad(v);
    }
}

template <typename T>
TensorT<T> DraftHeadT<T>::lm_logits(const TensorT<T> & f) const {
    return matmul(rms_norm(f, final_norm_w, (T) cfg.rms_norm_eps), w_lm);
}

template <typename T>
ForwardOutT<T> DraftHeadT<T>::forward(const TensorT<T> & features, std::span<const int> tokens,
                                      KvCacheT<T> & cache, const ForwardOpts & opts) const {
    const int s = (int) tokens.size();
    if (features.rows() != s) {
        throw ShapeError(strfmt("draft forward: %d feature rows for %d tokens", features.rows(), s));
    }
    auto plan = plan_forward(s, cache.len(), cache.n_layers, 1, opts);
    cache.push_positions(plan.positions);
    auto x = matmul(concat_cols(features, embedding(embed, tokens)), fusion);
    auto out = block.forward(cfg, x, plan.positions, cache.keys(0), cache.values(0), *plan.mask);
    cache.append(0, std::move(out.k), std::move(out.v));
    return {lm_logits(out.y), out.y};
}

// ---- instantiations ----

template struct KvCacheT<float>;
template struct KvCacheT<double>;
template struct DecoderBlockT<float>;
template struct DecoderBlockT<double>;
template struct TargetModelT<float>;
template struct TargetModelT<double>;
template struct DraftHeadT<float>;
template struct DraftHeadT<double>;

} // namespace hass
