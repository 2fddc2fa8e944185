// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

// speculative verification: accept/reject drafted tokens against the target
// model so that the emitted token stream is distributed exactly as if the
// target had been sampled autoregressively.

#pragma once

#include "hass/drafting.hpp"
#include "hass/rng.hpp"

#include <span>
#include <vector>

namespace hass {

// decode-time sampling knobs for the target model.
// temperature == 0 selects greedy decoding (argmax, ties to the lower id).
struct SamplingParams {
    double   temperature  = 1.0; // >= 0
    double   top_p        = 1.0; // nucleus mass, in (0, 1]
    int      top_k_filter = 0;   // keep the k most likely tokens, 0 = off
    uint64_t seed         = 0;   // seeds the per-stream rng

    // throws ParamError on out-of-range values
    void validate() const;

    bool greedy() const { return temperature == 0.0; }
};

// turns a normalized distribution into the distribution actually sampled at
// decode time: temperature scaling (q^(1/T), i.e. logits divided by T), then
// top-k, then the smallest nucleus prefix reaching top_p, then renormalize.
// temperature == 0 returns a point mass at the argmax (ties to the lower id).
// ordering ties elsewhere also resolve toward the lower token id.
template <typename T>
std::vector<T> apply_sampling_filter(std::span<const T> q, const SamplingParams & params);

template <typename T>
std::vector<T> apply_sampling_filter(const std::vector<T> & q, const SamplingParams & params) {
    return apply_sampling_filter(std::span<const T>(q.data(), q.size()), params);
}

// outcome of verifying one drafted cycle.
//
// accepted        tokens accepted this cycle, in emission order
// accepted_nodes  tree node ids of the accepted tokens (empty for chains)
// bonus           extra token emitted after the accepted prefix; always set,
//                 so a cycle contributes accepted_count + 1 tokens
// step_reached    step_reached[d] == 1 iff verification evaluated draft
//                 candidates at depth d+1
// step_accepted   step_accepted[d] == 1 iff one of them was accepted
struct VerifyResult {
    std::vector<int> accepted;
    std::vector<int> accepted_nodes;
    int bonus          = -1;
    int accepted_count = 0;
    std::vector<int> step_reached;
    std::vector<int> step_accepted;
};

// verifies a linear draft of L tokens. target_dists holds L + 1 rows: row i
// is the target distribution for the position of draft token i, and the last
// row is the distribution after the full draft (source of the bonus token
// when everything is accepted). the sampling filter is applied to every
// target row internally; draft.dists stay raw, they describe the proposal.
//
// stochastic path: draft token i is accepted with probability
// min(1, q_i(x) / p_i(x)); the first rejection emits the bonus from the
// normalized residual max(q_i - p_i, 0). greedy path: accept while the draft
// token equals the argmax of the filtered target row.
//
// rng call order (replayable): one uniform per evaluated draft token, plus
// one categorical draw for the bonus (none in greedy mode).
VerifyResult verify_chain(const ChainDraft & draft,
                          const std::vector<std::vector<float>> & target_dists,
                          const SamplingParams & params, Rng & rng);

// verifies a draft tree. target_dists has one row per tree node: row u is the
// target distribution at the position right after node u's path (for the
// root, after the pending token). walks from the root; at each node its
// children are tried in node-id order against a residual that starts at the
// filtered target row and, after each rejection, is updated to
// normalize(max(r - p, 0)) with p the node's raw draft distribution. an
// accepted child becomes the new current node; if every child is rejected
// (or there are none) the bonus is drawn from the final residual. greedy
// mode instead descends the child matching the filtered argmax while one
// exists.
//
// rng call order (replayable): one uniform per evaluated child, plus one
// categorical draw for the bonus (none in greedy mode).
VerifyResult verify_tree(const DraftTree & tree,
                         const std::vector<std::vector<float>> & target_dists,
                         const SamplingParams & params, Rng & rng);

} // namespace hass
