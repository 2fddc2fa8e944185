// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/engine.hpp"

#include "hass/error.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

namespace hass {

namespace {

double now_ms() {
    const auto t = std::chrono::steady_clock::now().time_since_epoch();
    return (double) std::chrono::duration_cast<std::chrono::nanoseconds>(t).count() / 1e6;
}

int argmax_low(std::span<const float> v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = (int) i;
        }
    }
    return best;
}

} // namespace

std::string to_string(DecodeMethod m) {
    switch (m) {
        case DecodeMethod::vanilla: return "vanilla";
        case DecodeMethod::chain:   return "chain";
        case DecodeMethod::tree:    return "tree";
    }
    throw ParamError("unknown decode method");
}

DecodeMethod decode_method_from_string(const std::string & s) {
    if (s == "vanilla") return DecodeMethod::vanilla;
    if (s == "chain")   return DecodeMethod::chain;
    if (s == "tree")    return DecodeMethod::tree;
    throw ParamError(strfmt("unknown decode method '%s' (vanilla|chain|tree)", s.c_str()));
}

void GenerateOptions::validate() const {
    if (max_new_tokens < 1) {
        throw ParamError(strfmt("generate: max_new_tokens %d must be >= 1", max_new_tokens));
    }
    if (draft_len < 1) {
        throw ParamError(strfmt("generate: draft_len %d must be >= 1", draft_len));
    }
    if (tree_budget < 2 || tree_depth < 1 || tree_branch < 1) {
        throw ParamError(strfmt("generate: tree budget %d / depth %d / branch %d out of range",
                                tree_budget, tree_depth, tree_branch));
    }
    sampling.validate();
}

double compute_tau(const std::vector<CycleMetrics> & cycles) {
    if (cycles.empty()) {
        throw ParamError("compute_tau: no cycles");
    }
    double total = 0.0;
    for (const auto & c : cycles) {
        total += c.tokens_generated;
    }
    return total / (double) cycles.size();
}

std::vector<double> compute_alpha(const std::vector<CycleMetrics> & cycles, int max_step) {
    if (max_step < 0) {
        throw ParamError("compute_alpha: max_step must be >= 0");
    }
    std::vector<long> reach(max_step, 0), acc(max_step, 0);
    for (const auto & c : cycles) {
        const int n = std::min((int) c.step_reached.size(), max_step);
        for (int i = 0; i < n; ++i) {
            reach[i] += c.step_reached[i];
            if (i < (int) c.step_accepted.size()) {
                acc[i] += c.step_accepted[i];
            }
        }
    }
    std::vector<double> alpha;
    for (int i = 0; i < max_step && reach[i] > 0; ++i) {
        alpha.push_back((double) acc[i] / (double) reach[i]);
    }
    return alpha;
}

void fill_speedup(RunReport & report, const RunReport & vanilla) {
    if (!(vanilla.tokens_per_sec > 0.0)) {
        throw ParamError("fill_speedup: baseline has no throughput");
    }
    report.speedup = report.tokens_per_sec / vanilla.tokens_per_sec;
}

Engine::Engine(const TargetModel & target, const DraftHead & drafter, const GenerateOptions & opts)
    : target_(target), drafter_(drafter), opts_(opts), rng_(opts.sampling.seed) {
    opts_.validate();
    if (drafter_.cfg.vocab_size != target_.cfg.vocab_size || drafter_.cfg.d_model != target_.cfg.d_model) {
        throw ParamError(strfmt("engine: drafter (V=%d, d=%d) does not match target (V=%d, d=%d)",
                                drafter_.cfg.vocab_size, drafter_.cfg.d_model,
                                target_.cfg.vocab_size, target_.cfg.d_model));
    }
}

void Engine::reset(const std::vector<int> & prompt) {
    const int m = (int) prompt.size();
    if (m < 1) {
        throw ParamError("engine: empty prompt");
    }
    const bool speculative = opts_.method != DecodeMethod::vanilla;
    if (speculative && m < 2) {
        throw ParamError("engine: speculative decoding needs a prompt of at least 2 tokens");
    }
    for (int t : prompt) {
        if (t < 0 || t >= target_.cfg.vocab_size) {
            throw ParamError(strfmt("engine: prompt token %d out of range", t));
        }
    }
    const int batch = opts_.method == DecodeMethod::vanilla ? 1
                    : opts_.method == DecodeMethod::chain   ? opts_.draft_len + 1
                                                            : opts_.tree_budget;
    if (m + opts_.max_new_tokens + batch - 2 > target_.cfg.max_seq_len) {
        throw CapacityError(strfmt("engine: prompt %d + budget %d + batch %d exceeds max_seq_len %d",
                                   m, opts_.max_new_tokens, batch, target_.cfg.max_seq_len));
    }

    NoGradGuard ng;
    tokens_ = prompt;
    prompt_len_ = m;
    tcache_ = target_.make_cache();
    dcache_ = drafter_.make_cache();
    pending_ = prompt.back();
    pending_feature_ = Tensor();
    emitted_ = 0;
    finished_ = false;
    started_ = true;
    cycles_.clear();
    wall_ms_ = 0.0;
    rng_ = Rng(opts_.sampling.seed);

    if (m >= 2) {
        const auto fo = target_.forward(std::span<const int>(tokens_.data(), m - 1), tcache_);
        pending_feature_ = slice_rows(fo.hidden, m - 2, 1);
        if (speculative && m >= 3) {
            // drafter row r pairs feature r with token r + 1 at rope position
            // r + 1; prime everything strictly before the pending row
            const Tensor feats = slice_rows(fo.hidden, 0, m - 2);
            std::vector<int> positions(m - 2);
            std::iota(positions.begin(), positions.end(), 1);
            ForwardOpts fopts;
            fopts.positions = positions;
            (void) drafter_.forward(feats, std::span<const int>(tokens_.data() + 1, m - 2), dcache_, fopts);
        }
    }
}

std::vector<float> Engine::dist_row(const Tensor & logits, int row) const {
    const Tensor probs = softmax(slice_rows(logits, row, 1));
    const auto rv = probs.row_values(0);
    return std::vector<float>(rv.begin(), rv.end());
}

int Engine::sample_token(const std::vector<float> & dist) {
    if (opts_.sampling.greedy()) {
        return argmax_low(std::span<const float>(dist));
    }
    const std::vector<float> filtered = apply_sampling_filter(dist, opts_.sampling);
    return rng_.categorical(std::span<const float>(filtered));
}

void Engine::emit(int tok) {
    tokens_.push_back(tok);
    emitted_++;
    if (tok == opts_.eot_token || emitted_ >= opts_.max_new_tokens) {
        finished_ = true;
    }
}

void Engine::reprime_drafter(const Tensor & feats, std::span<const int> toks, int first_pos) {
    std::vector<int> positions(toks.size());
    std::iota(positions.begin(), positions.end(), first_pos);
    ForwardOpts fopts;
    fopts.positions = positions;
    (void) drafter_.forward(feats, toks, dcache_, fopts);
}

CycleMetrics Engine::step() {
    if (!started_) {
        throw StateError("engine: step() before reset()");
    }
    if (finished_) {
        throw StateError("engine: step() after generation finished");
    }
    NoGradGuard ng;
    const double t0 = now_ms();
    CycleMetrics cm;
    switch (opts_.method) {
        case DecodeMethod::vanilla: cm = step_vanilla(); break;
        case DecodeMethod::chain:   cm = step_chain(); break;
        case DecodeMethod::tree:    cm = step_tree(); break;
    }
    cm.cycle = (int) cycles_.size();
    wall_ms_ += now_ms() - t0;
    cycles_.push_back(cm);
    return cm;
}

CycleMetrics Engine::step_vanilla() {
    CycleMetrics cm;
    const double t0 = now_ms();
    const int row[1] = {pending_};
    const auto fo = target_.forward(std::span<const int>(row, 1), tcache_);
    const int next = sample_token(dist_row(fo.logits, 0));
    emit(next);
    pending_ = next;
    cm.tokens_generated = 1;
    cm.verify_ms = now_ms() - t0;
    return cm;
}

CycleMetrics Engine::step_chain() {
    CycleMetrics cm;
    const int pos = pending_pos();
    const DraftMode dmode = opts_.sampling.greedy() ? DraftMode::greedy : DraftMode::sample;

    double t0 = now_ms();
    const ChainDraft draft = draft_chain(drafter_, dcache_, pending_, pending_feature_, pos,
                                         opts_.draft_len, dmode, rng_);
    cm.draft_ms = now_ms() - t0;

    t0 = now_ms();
    // one target forward verifies the pending token plus the whole draft
    std::vector<int> rows;
    rows.reserve(draft.tokens.size() + 1);
    rows.push_back(pending_);
    rows.insert(rows.end(), draft.tokens.begin(), draft.tokens.end());
    const auto fo = target_.forward(rows, tcache_);

    const int len = (int) draft.tokens.size();
    std::vector<std::vector<float>> target_dists;
    target_dists.reserve(len + 1);
    for (int i = 0; i <= len; ++i) {
        target_dists.push_back(dist_row(fo.logits, i));
    }
    const VerifyResult res = verify_chain(draft, target_dists, opts_.sampling, rng_);
    const int k = res.accepted_count;

    // verified rows stay, rejected draft rows are dropped
    tcache_.truncate(pos + 1 + k);
    for (int t : res.accepted) {
        emit(t);
    }
    emit(res.bonus);
    pending_ = res.bonus;
    pending_feature_ = slice_rows(fo.hidden, k, 1);

    dcache_.truncate(pos); // keep the pending row, drop speculative rows
    if (k >= 1) {
        reprime_drafter(slice_rows(fo.hidden, 0, k), res.accepted, pos + 1);
    }

    cm.tokens_generated = k + 1;
    cm.step_reached = res.step_reached;
    cm.step_accepted = res.step_accepted;
    cm.verify_ms = now_ms() - t0;
    return cm;
}

CycleMetrics Engine::step_tree() {
    CycleMetrics cm;
    const int pos = pending_pos();
    // trees always use deterministic top-m children. sampled children are a
    // test-suite mode for the losslessness proofs; in decoding they spread the
    // budget over duplicate draws and lower tau at T > 0
    const DraftMode dmode = DraftMode::greedy;

    double t0 = now_ms();
    const DraftTree tree = draft_tree_dynamic(drafter_, dcache_, pending_, pending_feature_, pos,
                                              opts_.tree_budget, opts_.tree_depth, opts_.tree_branch,
                                              dmode, rng_);
    cm.draft_ms = now_ms() - t0;

    t0 = now_ms();
    const int n = tree.size();
    std::vector<int> rows(n), positions(n);
    for (int u = 0; u < n; ++u) {
        rows[u] = tree.nodes[u].token;
        positions[u] = pos + tree.nodes[u].depth;
    }
    const Mask mask = prefixed_mask(tree.mask, tcache_.len());
    ForwardOpts fopts;
    fopts.mask = &mask;
    fopts.positions = positions;
    const auto fo = target_.forward(rows, tcache_, fopts);

    std::vector<std::vector<float>> target_dists;
    target_dists.reserve(n);
    for (int u = 0; u < n; ++u) {
        target_dists.push_back(dist_row(fo.logits, u));
    }
    const VerifyResult res = verify_tree(tree, target_dists, opts_.sampling, rng_);
    const int k = res.accepted_count;

    // keep the prefix, the root row, and the accepted root-to-leaf path
    std::vector<int> keep(pos);
    std::iota(keep.begin(), keep.end(), 0);
    keep.push_back(pos);
    for (int nid : res.accepted_nodes) {
        keep.push_back(pos + nid);
    }
    tcache_.gather(keep);

    for (int t : res.accepted) {
        emit(t);
    }
    emit(res.bonus);
    pending_ = res.bonus;
    const int last_node = k >= 1 ? res.accepted_nodes.back() : 0;
    pending_feature_ = slice_rows(fo.hidden, last_node, 1);

    dcache_.truncate(pos);
    if (k >= 1) {
        // feature of accepted token i is the hidden row of its parent node
        std::vector<int> fidx;
        fidx.reserve(k);
        fidx.push_back(0);
        for (int i = 0; i + 1 < k; ++i) {
            fidx.push_back(res.accepted_nodes[i]);
        }
        reprime_drafter(gather_rows(fo.hidden, fidx), res.accepted, pos + 1);
    }

    cm.tokens_generated = k + 1;
    cm.step_reached = res.step_reached;
    cm.step_accepted = res.step_accepted;
    cm.verify_ms = now_ms() - t0;
    return cm;
}

std::vector<int> Engine::run() {
    if (!started_) {
        throw StateError("engine: run() before reset()");
    }
    while (!finished_) {
        (void) step();
    }
    return generated();
}

std::vector<int> Engine::generated() const {
    std::vector<int> out(tokens_.begin() + prompt_len_, tokens_.end());
    if ((int) out.size() > opts_.max_new_tokens) {
        out.resize(opts_.max_new_tokens);
    }
    if (opts_.eot_token >= 0) {
        for (size_t i = 0; i < out.size(); ++i) {
            if (out[i] == opts_.eot_token) {
                out.resize(i + 1);
                break;
            }
        }
    }
    return out;
}

RunReport Engine::report() const {
    RunReport r;
    r.method = to_string(opts_.method);
    r.prompt_tokens = prompt_len_;
    r.num_cycles = (int) cycles_.size();
    for (const auto & c : cycles_) {
        r.total_tokens += c.tokens_generated;
    }
    r.wall_ms = wall_ms_;
    r.tau = cycles_.empty() ? 0.0 : compute_tau(cycles_);
    const int max_step = opts_.method == DecodeMethod::chain ? opts_.draft_len
                       : opts_.method == DecodeMethod::tree  ? opts_.tree_depth
                                                             : 0;
    if (max_step > 0) {
        r.alpha = compute_alpha(cycles_, max_step);
    }
    r.tokens_per_sec = wall_ms_ > 0.0 ? (double) r.total_tokens * 1000.0 / wall_ms_ : 0.0;
    r.seed = opts_.sampling.seed;
    r.options = opts_;
    return r;
}

} // namespace hass
