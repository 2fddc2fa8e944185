// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

// the decode loop: draft -> one masked target forward -> verify -> splice.
// runs vanilla (no drafter), chain, and tree speculation over the same
// target/cache plumbing and records per-cycle acceptance metrics.

#pragma once

#include "hass/drafting.hpp"
#include "hass/model.hpp"
#include "hass/verification.hpp"

#include <string>
#include <vector>

namespace hass {

enum class DecodeMethod {
    vanilla, // one target forward per token
    chain,   // linear speculation, draft_len tokens per cycle
    tree,    // dynamic draft tree, one masked target forward verifies it
};

std::string to_string(DecodeMethod m);
DecodeMethod decode_method_from_string(const std::string & s);

struct GenerateOptions {
    DecodeMethod method = DecodeMethod::chain;
    int max_new_tokens  = 64;
    int draft_len       = 6;  // chain: tokens drafted per cycle
    int tree_budget     = 60; // tree: total nodes kept per cycle (incl. root)
    int tree_depth      = 6;
    int tree_branch     = 10;
    SamplingParams sampling;
    int eot_token = -1;       // generation stops after emitting it; -1 = never

    void validate() const;
};

// one drafting-verification cycle. vanilla decode counts each forward as a
// cycle with a single generated token, so tau stays comparable.
struct CycleMetrics {
    int cycle            = 0;
    int tokens_generated = 0; // accepted draft tokens + the bonus token
    std::vector<int> step_reached;  // 1 if depth i+1 candidates were evaluated
    std::vector<int> step_accepted; // 1 if one of them was accepted
    double draft_ms  = 0.0;
    double verify_ms = 0.0;
};

struct RunReport {
    std::string method;
    int prompt_tokens = 0;
    int total_tokens  = 0; // sum of tokens_generated over cycles
    int num_cycles    = 0;
    double wall_ms    = 0.0;
    double tau        = 0.0; // mean tokens per cycle
    // alpha[i] = acceptance rate at speculation step i+1 among cycles that
    // reached it; truncated at the deepest step ever reached (absent, not 0)
    std::vector<double> alpha;
    double tokens_per_sec = 0.0;
    double speedup        = 0.0; // vs a paired vanilla run; 0 until paired
    uint64_t seed         = 0;
    GenerateOptions options;
};

// mean tokens generated per cycle; empty input is a parameter error
double compute_tau(const std::vector<CycleMetrics> & cycles);

// per-step acceptance rates over cycles; stops at the first never-reached
// step so the result length tells how deep verification ever got
std::vector<double> compute_alpha(const std::vector<CycleMetrics> & cycles, int max_step);

// speedup = tokens/sec over the baseline's tokens/sec (same prompts, hardware)
void fill_speedup(RunReport & report, const RunReport & vanilla);

// holds the target and drafter caches across cycles. after every cycle the
// caches cover exactly the verified prefix: rejected rows are dropped from
// the target cache (gather keeps one root-to-leaf path for trees) and the
// accepted drafter rows are re-primed with true target features, so cached
// state always matches a fresh forward over the verified tokens.
class Engine {
  public:
    // the drafter must share vocab/d_model with the target
    Engine(const TargetModel & target, const DraftHead & drafter, const GenerateOptions & opts);

    // prefill: forwards every prompt token but the last through the target.
    // the last prompt token becomes the pending token of the first cycle.
    // chain/tree need a prompt of at least 2 tokens (the drafter consumes
    // the feature of the position before the pending one).
    void reset(const std::vector<int> & prompt);

    // one cycle; appends the emitted tokens and returns its metrics
    CycleMetrics step();

    bool done() const { return finished_; }

    // cycles until max_new_tokens or end-of-text; returns generated()
    std::vector<int> run();

    // prompt + everything emitted (the last cycle may overshoot the budget)
    const std::vector<int> & tokens() const { return tokens_; }
    // generated tokens clipped to max_new_tokens and the first eot
    std::vector<int> generated() const;

    const std::vector<CycleMetrics> & cycles() const { return cycles_; }
    RunReport report() const;

    // introspection for consistency checks
    const KvCache & target_cache() const { return tcache_; }
    const KvCache & draft_cache() const { return dcache_; }
    int pending_token() const { return pending_; }
    const Tensor & pending_feature() const { return pending_feature_; }

  private:
    const TargetModel & target_;
    const DraftHead & drafter_;
    GenerateOptions opts_;
    Rng rng_;

    std::vector<int> tokens_;
    int prompt_len_ = 0;
    KvCache tcache_;
    KvCache dcache_;
    int pending_ = -1;        // newest verified token, not yet forwarded
    Tensor pending_feature_;  // target feature of the position before it
    int emitted_ = 0;
    bool finished_ = false;
    bool started_ = false;
    std::vector<CycleMetrics> cycles_;
    double wall_ms_ = 0.0;

    int pending_pos() const { return (int) tokens_.size() - 1; }

    CycleMetrics step_vanilla();
    CycleMetrics step_chain();
    CycleMetrics step_tree();

    // softmax of one logits row as a plain probability vector
    std::vector<float> dist_row(const Tensor & logits, int row) const;
    // sample from the filtered target distribution (argmax when greedy)
    int sample_token(const std::vector<float> & dist);
    void emit(int tok);
    // drop speculative drafter rows, then re-feed the accepted tokens with
    // their true target features so the drafter cache matches a fresh pass
    void reprime_drafter(const Tensor & feats, std::span<const int> toks, int first_pos);
};

} // namespace hass
