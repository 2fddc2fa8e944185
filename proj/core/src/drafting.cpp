// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/drafting.hpp"

#include "hass/error.hpp"

#include <algorithm>
#include <numeric>

namespace hass {

namespace {

int argmax_low(std::span<const float> v) {
    int best = 0;
    for (int i = 1; i < (int) v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return best;
}

void check_prefix_state(const KvCache & cache, const Tensor & pending_feature, int position, int d_model) {
    if (position < 1) {
        throw ParamError(strfmt("drafting: position %d must be >= 1", position));
    }
    if (cache.len() != position - 1) {
        throw ParamError(strfmt("drafting: cache holds %d rows but position %d expects %d",
                                cache.len(), position, position - 1));
    }
    if (!pending_feature.defined() || pending_feature.shape() != Shape{1, d_model}) {
        throw ShapeError(strfmt("drafting: pending feature must be [1 x %d]", d_model));
    }
}

} // namespace

int DraftTree::max_depth() const {
    int d = 0;
    for (const auto & n : nodes) {
        d = std::max(d, n.depth);
    }
    return d;
}

std::vector<int> DraftTree::path_to(int id) const {
    if (id < 0 || id >= size()) {
        throw ParamError(strfmt("draft tree: node %d out of %d", id, size()));
    }
    std::vector<int> path;
    for (int u = id; u != -1; u = nodes[u].parent) {
        path.push_back(u);
    }
    std::reverse(path.begin(), path.end());
    return path;
}

std::vector<int> DraftTree::children_of(int id) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
        if (nodes[i].parent == id) {
            out.push_back(i);
        }
    }
    return out;
}

Mask tree_mask(const std::vector<DraftNode> & nodes) {
    const int n = (int) nodes.size();
    if (n == 0) {
        throw ParamError("tree mask: empty node list");
    }
    if (nodes[0].parent != -1 || nodes[0].depth != 0) {
        throw ParamError("tree mask: nodes[0] must be the root");
    }
    for (int i = 1; i < n; ++i) {
        if (nodes[i].parent < 0 || nodes[i].parent >= i) {
            throw ParamError(strfmt("tree mask: node %d parent %d breaks topological order", i, nodes[i].parent));
        }
        if (nodes[i].depth != nodes[nodes[i].parent].depth + 1) {
            throw ParamError(strfmt("tree mask: node %d depth %d under parent depth %d", i, nodes[i].depth,
                                    nodes[nodes[i].parent].depth));
        }
    }
    Mask m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int u = i; u != -1; u = nodes[u].parent) {
            m.set(i, u);
        }
    }
    return m;
}

Mask prefixed_mask(const Mask & new_rows, int n_prefix) {
    if (n_prefix < 0) {
        throw ParamError("prefixed mask: negative prefix");
    }
    Mask m(new_rows.n_query, n_prefix + new_rows.n_key);
    for (int i = 0; i < m.n_query; ++i) {
        for (int j = 0; j < n_prefix; ++j) {
            m.set(i, j);
        }
        for (int j = 0; j < new_rows.n_key; ++j) {
            m.set(i, n_prefix + j, new_rows.at(i, j));
        }
    }
    return m;
}

DraftTree DraftTree::from_nodes(std::vector<DraftNode> nodes, std::vector<std::vector<float>> dists) {
    DraftTree t;
    t.mask = tree_mask(nodes); // validates order and depths
    for (size_t i = 0; i < nodes.size(); ++i) {
        const auto & n = nodes[i];
        if (!(n.prob > 0.0f) || n.prob > 1.0f || !(n.score > 0.0f) || n.score > 1.0f) {
            throw ParamError(strfmt("draft tree: node %zu has prob %g score %g outside (0, 1]", i,
                                    (double) n.prob, (double) n.score));
        }
    }
    if (dists.empty()) {
        dists.resize(nodes.size());
    }
    if (dists.size() != nodes.size()) {
        throw ParamError(strfmt("draft tree: %zu dists for %zu nodes", dists.size(), nodes.size()));
    }
    t.nodes = std::move(nodes);
    t.dists = std::move(dists);
    return t;
}

std::string DraftTree::debug_text() const {
    std::string out;
    for (int i = 0; i < size(); ++i) {
        const auto & n = nodes[i];
        out += strfmt("%d, %d, %d, %.8g, %.8g\n", i, n.parent, n.token, (double) n.prob, (double) n.score);
    }
    return out;
}

ChainDraft draft_chain(const DraftHead & head, KvCache & cache, int pending_token,
                       const Tensor & pending_feature, int position, int length,
                       DraftMode mode, Rng & rng, DraftTrace * trace) {
    NoGradGuard ng;
    check_prefix_state(cache, pending_feature, position, head.cfg.d_model);
    if (length < 1) {
        throw ParamError(strfmt("draft chain: length %d must be >= 1", length));
    }
    if (cache.len() + length > cache.capacity) {
        throw CapacityError(strfmt("draft chain: %d rows + %d draft steps exceed capacity %d",
                                   cache.len(), length, cache.capacity));
    }

    ChainDraft out;
    Tensor feat = pending_feature;
    int tok = pending_token;
    for (int k = 1; k <= length; ++k) {
        const int pos = position + k - 1;
        ForwardOpts opts;
        opts.positions = std::span<const int>(&pos, 1);
        auto fo = head.forward(feat, std::span<const int>(&tok, 1), cache, opts);
        Tensor probs = softmax(fo.logits);
        auto row = probs.row_values(0);
        const int next = mode == DraftMode::greedy ? argmax_low(row) : rng.categorical(row);
        if (trace) {
            trace->inputs.push_back(feat);
            trace->outputs.push_back(fo.hidden);
        }
        out.tokens.push_back(next);
        out.dists.emplace_back(row.begin(), row.end());
        feat = fo.hidden;
        tok = next;
    }
    return out;
}

DraftTree draft_tree_dynamic(const DraftHead & head, KvCache & cache, int pending_token,
                             const Tensor & pending_feature, int position, int budget,
                             int max_depth, int branch, DraftMode mode, Rng & rng) {
    NoGradGuard ng;
    check_prefix_state(cache, pending_feature, position, head.cfg.d_model);
    if (budget < 2) {
        throw ParamError(strfmt("draft tree: budget %d leaves no room for draft nodes", budget));
    }
    if (max_depth < 1 || branch < 1) {
        throw ParamError(strfmt("draft tree: depth %d and branch %d must be >= 1", max_depth, branch));
    }
    const int d_model = head.cfg.d_model;

    std::vector<DraftNode> nodes = {DraftNode{pending_token, -1, 0, 1.0f, 1.0f}};
    std::vector<std::vector<float>> dists(1);
    std::vector<std::vector<float>> feats(1);  // output features of expanded nodes
    std::vector<int> cache_row(1, -1);

    // forwards same-depth nodes as one batch: each row attends its ancestors'
    // cached rows plus itself
    auto expand = [&](const std::vector<int> & ids, int depth) {
        const int k = (int) ids.size();
        std::vector<float> in((size_t) k * d_model);
        std::vector<int> toks(k);
        std::vector<int> pos(k, position + depth);
        Mask m(k, cache.len() + k);
        for (int r = 0; r < k; ++r) {
            const int id = ids[r];
            const auto & src = nodes[id].parent == -1 ? std::span<const float>(pending_feature.values())
                                                      : std::span<const float>(feats[nodes[id].parent]);
            std::copy(src.begin(), src.end(), in.begin() + (size_t) r * d_model);
            toks[r] = nodes[id].token;
            m.set(r, cache.len() + r);
            for (int u = nodes[id].parent; u != -1; u = nodes[u].parent) {
                m.set(r, cache_row[u]);
            }
        }
        ForwardOpts opts;
        opts.mask = &m;
        opts.positions = pos;
        auto fo = head.forward(Tensor::from_values({k, d_model}, std::move(in)), toks, cache, opts);
        Tensor probs = softmax(fo.logits);
        for (int r = 0; r < k; ++r) {
            const int id = ids[r];
            cache_row[id] = cache.len() - k + r;
            auto prow = probs.row_values(r);
            dists[id].assign(prow.begin(), prow.end());
            auto frow = fo.hidden.row_values(r);
            feats[id].assign(frow.begin(), frow.end());
        }
    };

    expand({0}, 0);
    std::vector<int> frontier = {0};
    for (int depth = 1; depth <= max_depth; ++depth) {
        std::vector<int> created;
        for (int pid : frontier) {
            // select children before growing any vector: pushing nodes would
            // invalidate a reference into dists
            std::vector<std::pair<int, float>> children;
            {
                const auto & dist = dists[pid];
                if (mode == DraftMode::greedy) {
                    std::vector<int> order(dist.size());
                    std::iota(order.begin(), order.end(), 0);
                    const int take = std::min((size_t) branch, dist.size());
                    std::partial_sort(order.begin(), order.begin() + take, order.end(), [&](int a, int b) {
                        return dist[a] != dist[b] ? dist[a] > dist[b] : a < b;
                    });
                    for (int t = 0; t < take; ++t) {
                        if (dist[order[t]] > 0.0f) {
                            children.push_back({order[t], dist[order[t]]});
                        }
                    }
                } else {
                    for (int t = 0; t < branch; ++t) {
                        const int tok = rng.categorical(std::span<const float>(dist));
                        children.push_back({tok, dist[tok]});
                    }
                }
            }
            for (auto [tok, p] : children) {
                nodes.push_back(DraftNode{tok, pid, depth, p, nodes[pid].score * p});
                dists.emplace_back();
                feats.emplace_back();
                cache_row.push_back(-1);
                created.push_back((int) nodes.size() - 1);
            }
        }
        if (created.empty() || depth == max_depth) {
            break;
        }
        // expansion frontier: the highest-scoring nodes of this layer
        std::sort(created.begin(), created.end(), [&](int a, int b) {
            return nodes[a].score != nodes[b].score ? nodes[a].score > nodes[b].score : a < b;
        });
        created.resize(std::min((size_t) branch, created.size()));
        std::sort(created.begin(), created.end());
        frontier = created;
        expand(frontier, depth);
    }

    // rerank: keep the best `budget` nodes by path score, earlier insertion
    // winning ties. scores never grow along a path and ties resolve toward
    // parents, so the kept set is ancestor-closed already; the repair loop
    // below is defensive for any future scoring change.
    const int n_all = (int) nodes.size();
    std::vector<int> order(n_all);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return nodes[a].score != nodes[b].score ? nodes[a].score > nodes[b].score : a < b;
    });
    std::vector<char> keep(n_all, 0);
    for (int r = 0; r < std::min(budget, n_all); ++r) {
        keep[order[r]] = 1;
    }
    for (int i = 0; i < n_all; ++i) {
        if (keep[i]) {
            for (int u = nodes[i].parent; u != -1; u = nodes[u].parent) {
                keep[u] = 1;
            }
        }
    }
    int kept = 0;
    for (char k : keep) {
        kept += k;
    }
    while (kept > budget) {
        std::vector<char> has_kept_child(n_all, 0);
        for (int i = 0; i < n_all; ++i) {
            if (keep[i] && nodes[i].parent != -1) {
                has_kept_child[nodes[i].parent] = 1;
            }
        }
        int victim = -1;
        for (int i = 0; i < n_all; ++i) {
            if (!keep[i] || has_kept_child[i] || i == 0) {
                continue;
            }
            if (victim == -1 || nodes[i].score < nodes[victim].score ||
                (nodes[i].score == nodes[victim].score && i > victim)) {
                victim = i;
            }
        }
        if (victim == -1) {
            throw StateError("draft tree: cannot satisfy ancestor closure within the node budget");
        }
        keep[victim] = 0;
        kept--;
    }

    std::vector<int> new_id(n_all, -1);
    std::vector<DraftNode> out_nodes;
    std::vector<std::vector<float>> out_dists;
    for (int i = 0; i < n_all; ++i) {
        if (!keep[i]) {
            continue;
        }
        new_id[i] = (int) out_nodes.size();
        DraftNode n = nodes[i];
        n.parent = n.parent == -1 ? -1 : new_id[n.parent];
        out_nodes.push_back(n);
        out_dists.push_back(std::move(dists[i]));
    }
    return DraftTree::from_nodes(std::move(out_nodes), std::move(out_dists));
}

} // namespace hass
