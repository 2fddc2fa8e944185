// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/training.hpp"

#include "hass/error.hpp"
#include "hass/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hass {

const char * to_string(DataMode m) {
    switch (m) {
        case DataMode::fixed:          return "fixed";
        case DataMode::self_generated: return "self-generated";
    }
    throw ParamError("unknown data mode");
}

DataMode data_mode_from_string(const std::string & s) {
    if (s == "fixed") {
        return DataMode::fixed;
    }
    if (s == "self-generated") {
        return DataMode::self_generated;
    }
    throw ParamError(strfmt("unknown data mode '%s' (want fixed or self-generated)", s.c_str()));
}

void TrainConfig::validate(int vocab_size) const {
    if (align_steps < 1) {
        throw ParamError(strfmt("align_steps %d must be >= 1", align_steps));
    }
    if (top_k < 1 || top_k > vocab_size) {
        throw ParamError(strfmt("top_k %d out of range [1, %d]", top_k, vocab_size));
    }
    if (top_k_weight < 0 || cls_weight < 0 || reg_weight < 0) {
        throw ParamError("loss weights must be >= 0");
    }
    if (!(smooth_l1_beta > 0)) {
        throw ParamError("smooth_l1_beta must be > 0");
    }
    if (!(lr > 0)) {
        throw ParamError("lr must be > 0");
    }
    if (batch_size < 1) {
        throw ParamError(strfmt("batch_size %d must be >= 1", batch_size));
    }
    if (epochs < 1) {
        throw ParamError(strfmt("epochs %d must be >= 1", epochs));
    }
    if (weight_decay < 0 || max_grad_norm < 0) {
        throw ParamError("weight_decay and max_grad_norm must be >= 0");
    }
}

template <typename T>
void TrainingExampleT<T>::check(int d_model) const {
    const int sw = (int) tokens.size();
    if (sw < 2) {
        throw DataError(strfmt("training window of %d tokens is too short", sw));
    }
    if (!features.defined() || features.shape() != Shape{sw, d_model}) {
        throw ShapeError(strfmt("training features must be [%d x %d]", sw, d_model));
    }
    if (support < 1) {
        throw DataError("training example stores no distribution entries");
    }
    if ((int64_t) q_idx.size() != (int64_t) sw * support || q_val.size() != q_idx.size()) {
        throw ShapeError(strfmt("distribution arrays want %lld entries, got %zu/%zu",
                                (long long) sw * support, q_idx.size(), q_val.size()));
    }
}

Mask build_alignment_mask(int j, int seq_len) {
    if (j < 1) {
        throw ParamError(strfmt("alignment mask: step %d must be >= 1", j));
    }
    if (seq_len < j) {
        throw ParamError(strfmt("alignment mask: seq_len %d shorter than step %d", seq_len, j));
    }
    Mask m(seq_len, j * seq_len);
    for (int i = j - 1; i < seq_len; ++i) {
        // forward-1 keys: the verified prefix of the simulated round
        for (int p = 0; p <= i - j + 1; ++p) {
            m.set(i, p);
        }
        // one key from each later forward, marching down the staircase
        for (int d = 2; d <= j; ++d) {
            m.set(i, (d - 1) * seq_len + (i - j + d));
        }
    }
    return m;
}

namespace {

// indices of the k largest entries, ordered by (value desc, index asc)
template <typename T>
std::vector<int> top_indices(std::span<const T> vals, int k) {
    std::vector<int> order(vals.size());
    std::iota(order.begin(), order.end(), 0);
    auto by_rank = [&](int a, int b) {
        if (vals[a] != vals[b]) {
            return vals[a] > vals[b];
        }
        return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), by_rank);
    order.resize(k);
    return order;
}

template <typename T>
TensorT<T> as_row_matrix(const TensorT<T> & x, const char * what) {
    const auto & s = x.shape();
    if (s.size() == 1) {
        return reshape(x, {1, s[0]});
    }
    if (s.size() == 2) {
        return x;
    }
    throw ShapeError(strfmt("%s: expected 1-d or 2-d tensor, got %s", what, shape_str(s).c_str()));
}

template <typename T>
TensorT<T> mean_rows(const TensorT<T> & rows) {
    return scale(sum(rows), T(1) / (T) rows.numel());
}

} // namespace

template <typename T>
std::vector<ForwardStepT<T>> hass_forward_pass(const TrainingExampleT<T> & ex, const DraftHeadT<T> & head,
                                               int n, bool detach_between_steps) {
    ex.check(head.cfg.d_model);
    if (n < 1) {
        throw ParamError(strfmt("alignment steps %d must be >= 1", n));
    }
    const int sw = ex.window();
    const int s  = sw - 1; // drafter rows: row r = (feature r, token r+1)
    if (s < n) {
        throw ParamError(strfmt("window of %d tokens supports at most %d alignment steps", sw, s));
    }
    const int d = head.cfg.d_model;

    std::span<const int> dtokens(ex.tokens.data() + 1, (size_t) s);
    std::vector<int> positions(s);
    std::iota(positions.begin(), positions.end(), 1);

    KvCacheT<T> cache(1, n * s);
    std::vector<ForwardStepT<T>> out;
    out.reserve(n);
    TensorT<T> feats_in = slice_rows(ex.features, 0, s);
    for (int j = 1; j <= n; ++j) {
        Mask m = build_alignment_mask(j, s);
        // rows below the staircase carry no loss; give them their own key so
        // the attention op has a defined value to compute there
        for (int i = 0; i + 1 < j; ++i) {
            m.set(i, (j - 1) * s + i);
        }
        ForwardOpts opts;
        opts.mask = &m;
        opts.positions = positions;
        auto fo = head.forward(feats_in, dtokens, cache, opts);
        out.push_back({fo.hidden, fo.logits});
        if (j == n) {
            break;
        }
        // next forward sees this forward's features one row later, exactly as
        // decoding would: the step-(j+1) query for a round reuses the feature
        // the step-j query of that round produced
        TensorT<T> src = detach_between_steps ? fo.hidden.detach() : fo.hidden;
        feats_in = concat_rows(TensorT<T>::zeros({1, d}), slice_rows(src, 0, s - 1));
        if (detach_between_steps) {
            auto & kb = cache.k_blocks[0];
            auto & vb = cache.v_blocks[0];
            kb.back() = kb.back().detach();
            vb.back() = vb.back().detach();
        }
    }
    return out;
}

template <typename T>
TensorT<T> top_k_loss(const TensorT<T> & q, const TensorT<T> & p, int K) {
    TensorT<T> q2 = as_row_matrix(q, "top_k_loss q");
    TensorT<T> p2 = as_row_matrix(p, "top_k_loss p");
    if (q2.rows() != 1 || p2.rows() != 1) {
        throw ShapeError("top_k_loss: expected single distributions");
    }
    const int v = q2.cols();
    if (p2.cols() != v) {
        throw ShapeError(strfmt("top_k_loss: q has %d entries, p has %d", v, p2.cols()));
    }
    if (K < 1 || K > v) {
        throw ParamError(strfmt("top_k_loss: K %d out of range [1, %d]", K, v));
    }
    std::vector<int> idx = top_indices(q2.values(), K);
    std::vector<T> w(K);
    for (int t = 0; t < K; ++t) {
        w[t] = q2.values()[idx[t]];
    }
    return soft_ce_rows(p2, idx, std::span<const T>(w), K, T(1e-9));
}

template <typename T>
TensorT<T> eagle_base_loss(const TensorT<T> & f_s, const TensorT<T> & f_l,
                           const TensorT<T> & p, const TensorT<T> & q,
                           std::type_identity_t<T> w_reg, std::type_identity_t<T> w_cls,
                           std::type_identity_t<T> beta) {
    TensorT<T> fs = as_row_matrix(f_s, "eagle_base_loss f_s");
    TensorT<T> fl = as_row_matrix(f_l, "eagle_base_loss f_l");
    TensorT<T> p2 = as_row_matrix(p, "eagle_base_loss p");
    TensorT<T> q2 = as_row_matrix(q, "eagle_base_loss q");
    const int r = fs.rows();
    const int v = p2.cols();
    if (p2.rows() != r || q2.rows() != r || q2.cols() != v) {
        throw ShapeError(strfmt("eagle_base_loss: %d feature rows vs dists [%d x %d], [%d x %d]",
                                r, p2.rows(), p2.cols(), q2.rows(), q2.cols()));
    }
    TensorT<T> reg = mean_rows(smooth_l1_rows(fs, fl, beta));
    // soft-label cross-entropy against the full q rows
    std::vector<int> idx((size_t) r * v);
    for (int i = 0; i < r; ++i) {
        std::iota(idx.begin() + (size_t) i * v, idx.begin() + (size_t) (i + 1) * v, 0);
    }
    TensorT<T> ce = mean_rows(soft_ce_rows(p2, idx, q2.values(), v, T(1e-9)));
    return add(scale(reg, w_reg), scale(ce, w_cls));
}

template <typename T>
HassLossT<T> hass_loss(const TrainingExampleT<T> & ex, const DraftHeadT<T> & head, const TrainConfig & cfg) {
    if (cfg.top_k > ex.support) {
        throw ParamError(strfmt("top_k %d exceeds the %d stored distribution entries", cfg.top_k, ex.support));
    }
    const int n  = cfg.align_steps;
    const int sw = ex.window();
    const int s  = sw - 1;
    const int k  = cfg.top_k;

    auto steps = hass_forward_pass(ex, head, n, cfg.detach_between_steps);

    // row r of every forward predicts window position r+1: its feature, and
    // the distribution that position assigns to the next token
    TensorT<T> f_target = slice_rows(ex.features, 1, s);
    std::span<const int> ce_idx(ex.q_idx.data() + ex.support, (size_t) s * ex.support);
    std::span<const T> ce_w(ex.q_val.data() + ex.support, (size_t) s * ex.support);
    // stored rows are rank-ordered, so the top-k support is a row prefix
    std::vector<int> tk_idx((size_t) s * k);
    std::vector<T> tk_w((size_t) s * k);
    for (int r = 0; r < s; ++r) {
        const size_t src = (size_t) (r + 1) * ex.support;
        for (int t = 0; t < k; ++t) {
            tk_idx[(size_t) r * k + t] = ex.q_idx[src + t];
            tk_w[(size_t) r * k + t]   = ex.q_val[src + t];
        }
    }

    HassLossT<T> out;
    for (int j = 1; j <= n; ++j) {
        std::vector<int> eligible(s - (j - 1));
        std::iota(eligible.begin(), eligible.end(), j - 1);

        TensorT<T> probs = softmax(steps[j - 1].logits);
        TensorT<T> reg = mean_select(smooth_l1_rows(steps[j - 1].features, f_target, (T) cfg.smooth_l1_beta),
                                     eligible);
        TensorT<T> ce = mean_select(soft_ce_rows(probs, ce_idx, ce_w, ex.support, T(1e-9)), eligible);
        TensorT<T> tk = mean_select(soft_ce_rows(probs, tk_idx, std::span<const T>(tk_w), k, T(1e-9)), eligible);
        TensorT<T> lj = add(add(scale(reg, (T) cfg.reg_weight), scale(ce, (T) cfg.cls_weight)),
                            scale(tk, (T) cfg.top_k_weight));

        out.reg += (double) reg.item() / n;
        out.cls += (double) ce.item() / n;
        out.top_k += (double) tk.item() / n;
        out.per_forward.push_back((double) lj.item());
        out.total = (j == 1) ? lj : add(out.total, lj);
    }
    return out;
}

template <typename T>
std::vector<EpochStats> train_draft(const TrainConfig & cfg, const std::vector<TrainingExampleT<T>> & dataset,
                                    DraftHeadT<T> & head,
                                    const std::function<void(int, const EpochStats &)> & on_epoch) {
    cfg.validate(head.cfg.vocab_size);
    if (dataset.empty()) {
        throw DataError("training dataset is empty");
    }
    for (const auto & ex : dataset) {
        ex.check(head.cfg.d_model);
    }

    head.set_trainable(true);
    head.embed.set_requires_grad(cfg.train_embedding);
    head.final_norm_w.set_requires_grad(false);
    head.w_lm.set_requires_grad(false);

    std::vector<TensorT<T> *> params;
    for (auto & [name, p] : head.named_params()) {
        params.push_back(p);
    }
    if (cfg.train_embedding) {
        params.push_back(&head.embed);
    }
    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamWT<T> opt(params, ocfg);

    Rng rng(cfg.seed);
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    const int n = cfg.align_steps;
    std::vector<EpochStats> log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        EpochStats st;
        st.per_forward.assign(n, 0.0);
        for (size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const int nb = (int) std::min((size_t) cfg.batch_size, order.size() - b0);
            opt.zero_grad();
            for (int b = 0; b < nb; ++b) {
                auto l = hass_loss(dataset[order[b0 + b]], head, cfg);
                if (!std::isfinite((double) l.total.item())) {
                    throw NumericError("training loss is not finite");
                }
                backward(scale(l.total, T(1) / (T) nb));
                st.total += (double) l.total.item();
                st.reg += l.reg;
                st.cls += l.cls;
                st.top_k += l.top_k;
                for (int j = 0; j < n; ++j) {
                    st.per_forward[j] += l.per_forward[j];
                }
                st.examples++;
            }
            opt.clip_grad_norm(cfg.max_grad_norm);
            opt.step();
        }
        const double inv = 1.0 / st.examples;
        st.total *= inv;
        st.reg *= inv;
        st.cls *= inv;
        st.top_k *= inv;
        for (auto & x : st.per_forward) {
            x *= inv;
        }
        if (on_epoch) {
            on_epoch(epoch, st);
        }
        log.push_back(std::move(st));
    }
    return log;
}

template <typename T>
std::vector<TrainingExampleT<T>> build_dataset(DataMode mode, std::span<const int> corpus,
                                               const TargetModelT<T> & target, Rng & rng,
                                               const DatasetOptions & opts) {
    const int w = opts.window;
    const int v = target.cfg.vocab_size;
    if (w < 2 || w > target.cfg.max_seq_len) {
        throw ParamError(strfmt("dataset window %d out of range [2, %d]", w, target.cfg.max_seq_len));
    }
    if (opts.stride < 1) {
        throw ParamError("dataset stride must be >= 1");
    }
    const int support = opts.full_q ? v : std::min(opts.support, v);
    if (support < 1) {
        throw ParamError("dataset support must be >= 1");
    }
    if (mode == DataMode::self_generated && (opts.prompt_len < 1 || opts.prompt_len >= w)) {
        throw ParamError(strfmt("prompt_len %d must be in [1, window)", opts.prompt_len));
    }
    if ((int) corpus.size() < w) {
        throw DataError(strfmt("corpus of %zu tokens is shorter than one window of %d", corpus.size(), w));
    }
    for (int t : corpus) {
        if (t < 0 || t >= v) {
            throw DataError(strfmt("corpus token %d out of vocab %d", t, v));
        }
    }

    std::vector<int> starts;
    const int last = (int) corpus.size() - w;
    for (int pos = 0; ; pos += opts.stride) {
        if (pos >= last) {
            starts.push_back(last);
            break;
        }
        starts.push_back(pos);
    }

    NoGradGuard ng;
    std::vector<TrainingExampleT<T>> out;
    out.reserve(starts.size());
    for (int start : starts) {
        std::vector<int> toks(corpus.begin() + start, corpus.begin() + start + w);
        if (mode == DataMode::self_generated) {
            toks.resize(opts.prompt_len);
            auto cache = target.make_cache();
            auto fo = target.forward(toks, cache);
            while ((int) toks.size() < w) {
                TensorT<T> probs = softmax(fo.logits);
                const int tok = rng.categorical(probs.row_values(probs.rows() - 1));
                toks.push_back(tok);
                if ((int) toks.size() == w) {
                    break;
                }
                std::span<const int> one(&tok, 1);
                fo = target.forward(one, cache);
            }
        }

        auto cache = target.make_cache();
        auto fo = target.forward(toks, cache);
        TensorT<T> probs = softmax(fo.logits);

        TrainingExampleT<T> ex;
        ex.tokens = std::move(toks);
        ex.features = fo.hidden.detach();
        ex.support = support;
        ex.q_idx.resize((size_t) w * support);
        ex.q_val.resize((size_t) w * support);
        for (int r = 0; r < w; ++r) {
            auto row = probs.row_values(r);
            auto idx = top_indices(row, support);
            for (int t = 0; t < support; ++t) {
                ex.q_idx[(size_t) r * support + t] = idx[t];
                ex.q_val[(size_t) r * support + t] = row[idx[t]];
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

#define HASS_INSTANTIATE_TRAINING(T)                                                                          \
    template struct TrainingExampleT<T>;                                                                      \
    template std::vector<ForwardStepT<T>> hass_forward_pass<T>(const TrainingExampleT<T> &,                   \
                                                               const DraftHeadT<T> &, int, bool);             \
    template TensorT<T> top_k_loss<T>(const TensorT<T> &, const TensorT<T> &, int);                           \
    template TensorT<T> eagle_base_loss<T>(const TensorT<T> &, const TensorT<T> &, const TensorT<T> &,        \
                                           const TensorT<T> &, std::type_identity_t<T>,                       \
                                           std::type_identity_t<T>, std::type_identity_t<T>);                 \
    template HassLossT<T> hass_loss<T>(const TrainingExampleT<T> &, const DraftHeadT<T> &,                    \
                                       const TrainConfig &);                                                  \
    template std::vector<EpochStats> train_draft<T>(const TrainConfig &,                                      \
                                                    const std::vector<TrainingExampleT<T>> &, DraftHeadT<T> &,\
                                                    const std::function<void(int, const EpochStats &)> &);    \
    template std::vector<TrainingExampleT<T>> build_dataset<T>(DataMode, std::span<const int>,                \
                                                               const TargetModelT<T> &, Rng &,                \
                                                               const DatasetOptions &);

HASS_INSTANTIATE_TRAINING(float)
HASS_INSTANTIATE_TRAINING(double)

} // namespace hass
