// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0
//
// chain and dynamic-tree draft construction during decoding. a draft tree
// hangs off one pending token (the newest verified token, not yet forwarded
// through the target): the root is that token, and every deeper node is a
// drafter proposal conditioned on its exact root-to-node path.

#pragma once

#include "hass/mask.hpp"
#include "hass/model.hpp"
#include "hass/rng.hpp"
#include "hass/tensor.hpp"

#include <string>
#include <vector>

namespace hass {

enum class DraftMode {
    greedy, // deterministic: argmax / top-m children, ties to the lower token id
    sample, // draws from the drafter distribution
};

struct DraftNode {
    int token  = 0;
    int parent = -1;    // -1 only for the root
    int depth  = 0;     // root = 0
    float prob  = 1.0f; // draft probability of this token given its path
    float score = 1.0f; // product of probs along the path; root = 1
};

// nodes in parent-before-child order, nodes[0] = root. dists[i] is the
// drafter distribution produced at node i (empty if i was never expanded);
// verification accepts node i's children against it.
struct DraftTree {
    std::vector<DraftNode> nodes;
    std::vector<std::vector<float>> dists;
    Mask mask; // ancestor-or-self, [N x N]

    int size() const { return (int) nodes.size(); }
    int max_depth() const;
    std::vector<int> path_to(int id) const; // node ids, root first
    std::vector<int> children_of(int id) const;

    // validates structure (order, depths, probability ranges) and builds the mask
    static DraftTree from_nodes(std::vector<DraftNode> nodes, std::vector<std::vector<float>> dists);

    // one node per line: id, parent, token, prob, score
    std::string debug_text() const;
};

// ancestor-or-self mask over a topologically ordered node list
Mask tree_mask(const std::vector<DraftNode> & nodes);

// widens a tree (or any new-row) mask with an always-visible verified prefix
Mask prefixed_mask(const Mask & new_rows, int n_prefix);

struct ChainDraft {
    std::vector<int> tokens;               // L drafted tokens
    std::vector<std::vector<float>> dists; // the distribution each was drawn from
};

// per-step record of the features the drafter consumed and produced; lets
// tests pin that step k>1 runs on the drafter's own feature, never a target one
struct DraftTrace {
    std::vector<Tensor> inputs;  // [1 x d] per step
    std::vector<Tensor> outputs; // [1 x d] per step
};

// drafts `length` tokens auto-regressively from the pending token. the cache
// must hold exactly the drafter rows before `position`; the call appends the
// rows it forwards (pending + all but the last drafted token). the caller
// truncates the cache back after verification.
ChainDraft draft_chain(const DraftHead & head, KvCache & cache, int pending_token,
                       const Tensor & pending_feature, int position, int length,
                       DraftMode mode, Rng & rng, DraftTrace * trace = nullptr);

// layer-by-layer tree construction: each layer expands the `branch` highest
// path-score frontier nodes, proposing `branch` children per expansion
// (top-branch by probability in greedy mode, i.i.d. draws in sample mode),
// until `max_depth`; then keeps the `budget` best nodes overall by path
// score (ties to earlier insertion), preserving ancestor closure.
DraftTree draft_tree_dynamic(const DraftHead & head, KvCache & cache, int pending_token,
                             const Tensor & pending_feature, int position, int budget,
                             int max_depth, int branch, DraftMode mode, Rng & rng);

} // namespace hass
