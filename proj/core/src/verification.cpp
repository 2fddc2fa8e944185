// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/verification.hpp"

#include "hass/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hass {

namespace {

template <typename T>
int argmax_low(std::span<const T> v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = (int) i;
        }
    }
    return best;
}

// shared by chain and tree verification so both consume the rng identically.
// converts the target row to double, filters, and returns a normalized dist.
std::vector<double> filtered_target(const std::vector<float> & q, size_t v, const SamplingParams & params) {
    if (q.size() != v) {
        throw ShapeError(strfmt("verification: target row has %zu entries, expected %zu", q.size(), v));
    }
    std::vector<double> qd(q.begin(), q.end());
    return apply_sampling_filter<double>(qd, params);
}

// normalized positive part of (r - p); mathematically nonzero whenever a
// genuine rejection happened (r and p both sum to one, so r <= p pointwise
// would force r == p and acceptance with probability one)
void subtract_and_norm(std::vector<double> & r, const std::vector<float> & p) {
    double tot = 0.0;
    for (size_t j = 0; j < r.size(); ++j) {
        r[j] = std::max(r[j] - (double) p[j], 0.0);
        tot += r[j];
    }
    if (!(tot > 0.0)) {
        throw NumericError("verification: residual distribution vanished");
    }
    for (double & x : r) {
        x /= tot;
    }
}

} // namespace

void SamplingParams::validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        throw ParamError("SamplingParams: temperature must be finite and >= 0");
    }
    if (!(top_p > 0.0) || top_p > 1.0) {
        throw ParamError("SamplingParams: top_p must be in (0, 1]");
    }
    if (top_k_filter < 0) {
        throw ParamError("SamplingParams: top_k_filter must be >= 0");
    }
}

template <typename T>
std::vector<T> apply_sampling_filter(std::span<const T> q, const SamplingParams & params) {
    params.validate();
    if (q.empty()) {
        throw ShapeError("apply_sampling_filter: empty distribution");
    }
    const size_t v = q.size();
    std::vector<T> out(v, T(0));
    if (params.greedy()) {
        out[argmax_low(q)] = T(1);
        return out;
    }

    std::vector<double> w(v);
    if (params.temperature == 1.0) {
        for (size_t i = 0; i < v; ++i) {
            w[i] = std::max((double) q[i], 0.0);
        }
    } else {
        // q^(1/T), i.e. logits scaled by 1/T before the softmax
        for (size_t i = 0; i < v; ++i) {
            w[i] = q[i] > T(0) ? std::exp(std::log((double) q[i]) / params.temperature) : 0.0;
        }
    }

    // ids by (mass desc, id asc); ties toward the lower id
    std::vector<int> order(v);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return w[a] > w[b]; });

    if (params.top_k_filter > 0 && (size_t) params.top_k_filter < v) {
        for (size_t i = params.top_k_filter; i < v; ++i) {
            w[order[i]] = 0.0;
        }
    }

    double total = 0.0;
    for (double x : w) {
        total += x;
    }
    if (!(total > 0.0)) {
        // temperature underflow; fall back to the T -> 0 limit
        out[argmax_low(q)] = T(1);
        return out;
    }

    // smallest prefix of the survivors reaching top_p of the remaining mass:
    // keep a token while the mass before it is below the threshold. the small
    // relative slack keeps exact boundaries (e.g. 0.5 + 0.3 vs top_p = 0.8)
    // from being decided by rounding noise.
    const double thr = total * (params.top_p - 1e-9);
    double kept = 0.0;
    bool have_one = false;
    for (int id : order) {
        if (w[id] <= 0.0) {
            continue;
        }
        if (have_one && kept >= thr) {
            w[id] = 0.0;
            continue;
        }
        kept += w[id];
        have_one = true; // the most likely token always survives
    }
    for (size_t i = 0; i < v; ++i) {
        out[i] = (T) (w[i] / kept);
    }
    return out;
}

template std::vector<float>  apply_sampling_filter<float>(std::span<const float>, const SamplingParams &);
template std::vector<double> apply_sampling_filter<double>(std::span<const double>, const SamplingParams &);

VerifyResult verify_chain(const ChainDraft & draft,
                          const std::vector<std::vector<float>> & target_dists,
                          const SamplingParams & params, Rng & rng) {
    params.validate();
    const int len = (int) draft.tokens.size();
    if (len < 1) {
        throw ParamError("verify_chain: empty draft");
    }
    if ((int) draft.dists.size() != len) {
        throw ShapeError("verify_chain: need one draft distribution per token");
    }
    if ((int) target_dists.size() != len + 1) {
        throw ShapeError("verify_chain: need one target row per draft token plus a bonus row");
    }
    const size_t v = target_dists[0].size();
    if (v == 0) {
        throw ShapeError("verify_chain: empty target distribution");
    }

    VerifyResult res;
    res.step_reached.assign(len, 0);
    res.step_accepted.assign(len, 0);

    for (int i = 0; i < len; ++i) {
        res.step_reached[i] = 1;
        const int x = draft.tokens[i];
        if (x < 0 || (size_t) x >= v) {
            throw ParamError(strfmt("verify_chain: token %d out of range at step %d", x, i));
        }
        if (params.greedy()) {
            if (target_dists[i].size() != v) {
                throw ShapeError("verify_chain: ragged target distributions");
            }
            const int g = argmax_low(std::span<const float>(target_dists[i]));
            if (x != g) {
                res.bonus = g;
                return res;
            }
        } else {
            if (draft.dists[i].size() != v) {
                throw ShapeError("verify_chain: ragged draft distributions");
            }
            std::vector<double> qf = filtered_target(target_dists[i], v, params);
            const double px = draft.dists[i][x];
            if (!(px > 0.0)) {
                throw StateError("verify_chain: drafted token carries zero draft probability");
            }
            const double a = std::min(1.0, qf[x] / px);
            if (!(rng.uniform() < a)) {
                subtract_and_norm(qf, draft.dists[i]);
                res.bonus = rng.categorical(std::span<const double>(qf));
                return res;
            }
        }
        res.accepted.push_back(x);
        res.step_accepted[i] = 1;
        res.accepted_count++;
    }

    // every draft token accepted; bonus comes from the row after the draft
    if (params.greedy()) {
        res.bonus = argmax_low(std::span<const float>(target_dists[len]));
    } else {
        const std::vector<double> qf = filtered_target(target_dists[len], v, params);
        res.bonus = rng.categorical(std::span<const double>(qf));
    }
    return res;
}

VerifyResult verify_tree(const DraftTree & tree,
                         const std::vector<std::vector<float>> & target_dists,
                         const SamplingParams & params, Rng & rng) {
    params.validate();
    const int n = tree.size();
    if (n < 1) {
        throw ParamError("verify_tree: empty tree");
    }
    if ((int) target_dists.size() != n) {
        throw ShapeError("verify_tree: need one target row per tree node");
    }
    const size_t v = target_dists[0].size();
    if (v == 0) {
        throw ShapeError("verify_tree: empty target distribution");
    }
    for (const auto & node : tree.nodes) {
        if (node.token < 0 || (size_t) node.token >= v) {
            throw ParamError(strfmt("verify_tree: node token %d out of range", node.token));
        }
    }

    VerifyResult res;
    res.step_reached.assign(tree.max_depth(), 0);
    res.step_accepted.assign(tree.max_depth(), 0);

    int u = 0;
    while (true) {
        const std::vector<int> kids = tree.children_of(u);
        if (kids.empty()) {
            // nothing drafted below this node; bonus from its target row
            if (params.greedy()) {
                if (target_dists[u].size() != v) {
                    throw ShapeError("verify_tree: ragged target distributions");
                }
                res.bonus = argmax_low(std::span<const float>(target_dists[u]));
            } else {
                const std::vector<double> qf = filtered_target(target_dists[u], v, params);
                res.bonus = rng.categorical(std::span<const double>(qf));
            }
            return res;
        }

        const int depth_idx = tree.nodes[u].depth; // children live at depth_idx + 1
        res.step_reached[depth_idx] = 1;

        int next = -1;
        if (params.greedy()) {
            if (target_dists[u].size() != v) {
                throw ShapeError("verify_tree: ragged target distributions");
            }
            const int g = argmax_low(std::span<const float>(target_dists[u]));
            for (int c : kids) {
                if (tree.nodes[c].token == g) {
                    next = c;
                    break;
                }
            }
            if (next < 0) {
                res.bonus = g;
                return res;
            }
        } else {
            if ((int) tree.dists.size() <= u || tree.dists[u].size() != v) {
                throw ShapeError("verify_tree: node with children is missing its draft distribution");
            }
            // multi-round residual: each rejection removes the node's full
            // draft distribution from what is left of the target
            std::vector<double> r = filtered_target(target_dists[u], v, params);
            for (int c : kids) {
                const int x = tree.nodes[c].token;
                const double px = tree.dists[u][x];
                if (!(px > 0.0)) {
                    throw StateError("verify_tree: drafted child carries zero draft probability");
                }
                const double a = r[x] <= 0.0 ? 0.0 : std::min(1.0, r[x] / px);
                if (rng.uniform() < a) {
                    next = c;
                    break;
                }
                subtract_and_norm(r, tree.dists[u]);
            }
            if (next < 0) {
                res.bonus = rng.categorical(std::span<const double>(r));
                return res;
            }
        }

        res.accepted.push_back(tree.nodes[next].token);
        res.accepted_nodes.push_back(next);
        res.step_accepted[depth_idx] = 1;
        res.accepted_count++;
        u = next;
    }
}

} // namespace hass
