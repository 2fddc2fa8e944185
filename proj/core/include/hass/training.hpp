// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0
//
// draft-head training: feature regression + soft-label token losses, the
// top-k distillation term, and multi-step context alignment. alignment runs
// the head n times over each window; forward j consumes the previous
// forward's output features shifted one row (what the head would actually
// see at draft step j during decoding) and attends over the concatenated KV
// of forwards 1..j through a staircase mask.

#pragma once

#include "hass/mask.hpp"
#include "hass/model.hpp"
#include "hass/rng.hpp"
#include "hass/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace hass {

enum class DataMode {
    fixed,          // windows of a fixed token corpus
    self_generated, // continuations sampled from the target at T=1
};

const char * to_string(DataMode m);
DataMode data_mode_from_string(const std::string & s);

struct TrainConfig {
    int align_steps = 3; // n: forwards per window
    int top_k       = 10;
    double top_k_weight = 1.0;
    double cls_weight   = 0.1;
    double reg_weight   = 1.0;
    double smooth_l1_beta = 1.0;
    double lr           = 1e-3;
    int batch_size      = 4;
    int epochs          = 1;
    DataMode data_mode  = DataMode::fixed;
    uint64_t seed       = 0;
    // ablation switches; defaults match the training recipe
    bool detach_between_steps = true;
    bool train_embedding      = false;
    double weight_decay       = 0.0;
    double max_grad_norm      = 0.0; // 0 = no clipping

    void validate(int vocab_size) const;
};

// one training window: tokens plus the target model's per-position features
// and next-token distributions. distributions are stored sparsely as the
// `support` highest-probability entries per row, ordered by probability
// descending with ties broken toward the lower token id; support == V means
// the full distribution is stored.
template <typename T>
struct TrainingExampleT {
    std::vector<int> tokens;  // S_w
    TensorT<T> features;      // [S_w x d_model], plain values (no graph)
    int support = 0;
    std::vector<int> q_idx;   // [S_w * support]
    std::vector<T> q_val;     // [S_w * support]

    int window() const { return (int) tokens.size(); }
    void check(int d_model) const;
};

using TrainingExample = TrainingExampleT<float>;

// staircase attention mask for alignment forward j over drafter rows 0..S-1.
// columns cover the concatenated KV of forwards 1..j, S per forward. query
// row i permits key (forward d, row m) iff
//   (d == 1 and m <= i-j+1) or (2 <= d <= j and m == i-j+d)
// rows i < j-1 have no permitted keys (excluded from the loss); j=1 is the
// causal mask.
Mask build_alignment_mask(int j, int seq_len);

template <typename T>
struct ForwardStepT {
    TensorT<T> features; // [S x d_model] f^(s_j)
    TensorT<T> logits;   // [S x V]
};

// runs the head n times over one window. drafter row r pairs feature row r
// with token r+1, so S = window-1. forward 1 consumes the target's features;
// forward j>1 consumes forward j-1's outputs shifted one row (row 0 gets
// zeros; it is never loss-eligible for j>1). when detach_between_steps is
// set, features and cached KV crossing a forward boundary are detached so
// each forward owns an isolated graph.
template <typename T>
std::vector<ForwardStepT<T>> hass_forward_pass(const TrainingExampleT<T> & ex, const DraftHeadT<T> & head,
                                               int n, bool detach_between_steps = true);

// L = -sum_{x in top-K of q} q(x) * log(max(p(x), 1e-9)); ties at the K-th
// rank resolve toward the lower token id. q and p are distributions over V,
// shaped [V] or [1 x V]. q contributes weights only (no gradient).
template <typename T>
TensorT<T> top_k_loss(const TensorT<T> & q, const TensorT<T> & p, int K);

// w_reg * SmoothL1(f_s, f_l) + w_cls * CE(q, p) with q as soft labels,
// averaged over rows. f are [R x d] (or [d]), dists are [R x V] (or [V]).
template <typename T>
TensorT<T> eagle_base_loss(const TensorT<T> & f_s, const TensorT<T> & f_l,
                           const TensorT<T> & p, const TensorT<T> & q,
                           std::type_identity_t<T> w_reg = T(1), std::type_identity_t<T> w_cls = T(0.1),
                           std::type_identity_t<T> beta = T(1));

// loss of one window under a config: per forward j, the mean over
// loss-eligible rows [j-1, S) of w_reg*reg + w_cls*cls + w*top_k, summed
// over j = 1..n. the scalar tensor carries the graph; the doubles are
// detached per-term means for logging (raw, unweighted).
template <typename T>
struct HassLossT {
    TensorT<T> total;
    double reg = 0, cls = 0, top_k = 0;
    std::vector<double> per_forward; // weighted per-forward totals
};

template <typename T>
HassLossT<T> hass_loss(const TrainingExampleT<T> & ex, const DraftHeadT<T> & head, const TrainConfig & cfg);

struct EpochStats {
    double total = 0, reg = 0, cls = 0, top_k = 0;
    std::vector<double> per_forward;
    int examples = 0;
};

// trains the head in place; returns one stats row per epoch. deterministic
// given cfg.seed. shared tensors (embedding, final norm, lm head) stay
// frozen unless cfg.train_embedding unfreezes the embedding.
template <typename T>
std::vector<EpochStats> train_draft(const TrainConfig & cfg, const std::vector<TrainingExampleT<T>> & dataset,
                                    DraftHeadT<T> & head,
                                    const std::function<void(int, const EpochStats &)> & on_epoch = {});

struct DatasetOptions {
    int window = 256;
    int stride = 128;
    int support = 64;    // stored distribution entries per row
    bool full_q = false; // store all V entries instead
    int prompt_len = 32; // self-generated mode: corpus tokens per prompt
};

// fixed mode: slide a window over the corpus (last window clamped to the end
// so every token is covered) and record the target's features and
// distributions. self-generated mode: same window starts, but only the first
// prompt_len tokens are kept; the rest of each window is sampled from the
// target at temperature 1 before recording.
template <typename T>
std::vector<TrainingExampleT<T>> build_dataset(DataMode mode, std::span<const int> corpus,
                                               const TargetModelT<T> & target, Rng & rng,
                                               const DatasetOptions & opts = {});

} // namespace hass
